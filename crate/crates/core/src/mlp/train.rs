use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpError, MlpModel, Target};
use crate::dataset_pairs::{plan_batches, Branch, PairingMode};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Examples per branch; single mode uses twice this many.
    pub batch_size: usize,
    pub max_steps: usize,
    pub target_val_loss: Option<f64>,
    /// Validation loss is measured every this many steps.
    pub eval_interval: usize,
    pub seed: u64,
    pub mode: PairingMode,
    /// Stop at the first evaluation that reaches the target.
    pub stop_at_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            max_steps: 2000,
            target_val_loss: None,
            eval_interval: 50,
            seed: 0,
            mode: PairingMode::Siamese,
            stop_at_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::Config("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(MlpError::Config("batch size and eval interval must be positive".into()));
        }
        if self.target_val_loss.is_some_and(|t| !(t >= 0.0)) {
            return Err(MlpError::Config("target validation loss must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unpaired examples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Examples {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
}

impl Examples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, input: Vec<f64>, target: Target) {
        self.inputs.push(input);
        self.targets.push(target);
    }
}

/// Pairs of inputs sharing one target: index `i` of `occluded`, `clean` and
/// `targets` belongs to pair `i`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairedExamples {
    pub occluded: Vec<Vec<f64>>,
    pub clean: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
}

impl PairedExamples {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn input(&self, pair: usize, branch: Branch) -> &[f64] {
        match branch {
            Branch::Occluded => &self.occluded[pair],
            Branch::Clean => &self.clean[pair],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Mean per-example training loss over the steps since the previous
    /// row; empty on the row for step 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    ReachedTarget,
    Diverged { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: MlpModel,
    pub trace: Vec<TraceRow>,
    pub status: TrainStatus,
    pub steps: usize,
    /// First evaluated step whose validation loss met the target.
    pub steps_to_target: Option<usize>,
}

/// One optimizer step's examples: (input, target, loss weight).
type Batch<'a> = Vec<(&'a [f64], &'a Target, f64)>;

/// SGD on two-branch batches. In the paired modes each step descends the
/// sum of the two branch losses (each averaged over the batch); single
/// mode averages over one branch of twice the batch size.
pub fn train_paired(
    model: &MlpModel,
    data: &PairedExamples,
    validation: &Examples,
    config: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    config.validate()?;
    if data.is_empty() || data.occluded.len() != data.len() || data.clean.len() != data.len() {
        return Err(MlpError::Config("paired data is empty or misaligned".into()));
    }
    let mut r = rng::stream(config.seed, "train-batches");
    let mut queue: Vec<Batch> = Vec::new();
    let mut next = move || -> Result<(Batch, f64), MlpError> {
        if queue.is_empty() {
            let plans = plan_batches(data.len(), config.batch_size, config.mode, &mut r)
                .map_err(|e| MlpError::Config(e.to_string()))?;
            queue = plans
                .into_iter()
                .rev()
                .map(|plan| {
                    let w = 1.0 / plan.first.len() as f64;
                    plan.first
                        .iter()
                        .chain(&plan.second)
                        .map(|rr| (data.input(rr.pair, rr.branch), &data.targets[rr.pair], w))
                        .collect()
                })
                .collect();
        }
        let batch = queue.pop().expect("planner returns at least one batch");
        let branches = if config.mode == PairingMode::Single { 1.0 } else { 2.0 };
        Ok((batch, branches))
    };
    run(model, validation, config, &mut next)
}

/// SGD on unpaired examples with shuffled mini-batches of `batch_size`.
pub fn train(
    model: &MlpModel,
    data: &Examples,
    validation: &Examples,
    config: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    config.validate()?;
    if data.is_empty() || data.targets.len() != data.len() {
        return Err(MlpError::Config("training data is empty or misaligned".into()));
    }
    if config.batch_size > data.len() {
        return Err(MlpError::Config(format!(
            "batch size {} exceeds {} examples",
            config.batch_size,
            data.len()
        )));
    }
    let mut r = rng::stream(config.seed, "train-batches");
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut next = move || -> Result<(Batch, f64), MlpError> {
        if queue.is_empty() {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut r);
            queue = order.chunks_exact(config.batch_size).rev().map(<[usize]>::to_vec).collect();
        }
        let idx = queue.pop().expect("at least one batch");
        let w = 1.0 / idx.len() as f64;
        Ok((idx.iter().map(|&i| (data.inputs[i].as_slice(), &data.targets[i], w)).collect(), 1.0))
    };
    run(model, validation, config, &mut next)
}

/// Mean loss over `examples`.
pub fn mean_loss(model: &MlpModel, examples: &Examples) -> Result<f64, MlpError> {
    let mut total = 0.0;
    for (x, t) in examples.inputs.iter().zip(&examples.targets) {
        total += model.loss(x, t)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// `next` yields a batch and the number of branches it spans; every entry's
/// weight is `1 / rows per branch`, so the step loss is the sum of the
/// branch means.
fn run<'a>(
    model: &MlpModel,
    validation: &Examples,
    config: &TrainConfig,
    next: &mut dyn FnMut() -> Result<(Batch<'a>, f64), MlpError>,
) -> Result<TrainReport, MlpError> {
    model.validate()?;
    if validation.is_empty() {
        return Err(MlpError::Config("validation set is empty".into()));
    }
    let mut model = model.clone();
    let mut trace = vec![TraceRow {
        step: 0,
        train_loss: None,
        val_loss: mean_loss(&model, validation)?,
    }];
    let reached = |v: f64| config.target_val_loss.is_some_and(|t| v <= t);
    let mut steps_to_target = reached(trace[0].val_loss).then_some(0);
    let mut status = TrainStatus::Completed;
    let mut running = 0.0;
    let mut running_count = 0usize;
    let mut steps = 0;
    if steps_to_target.is_some() && config.stop_at_target {
        status = TrainStatus::ReachedTarget;
    }

    while status == TrainStatus::Completed && steps < config.max_steps {
        let (batch, branches) = next()?;
        let mut grads = Gradients::zeros_like(&model);
        let mut loss = 0.0;
        for (x, t, w) in &batch {
            loss += w * model.accumulate_gradients(x, t, *w, &mut grads)?;
        }
        steps += 1;
        if !loss.is_finite() {
            status = TrainStatus::Diverged { step: steps };
            break;
        }
        model.apply_gradients(&grads, config.learning_rate);
        running += loss / branches;
        running_count += 1;

        if steps % config.eval_interval == 0 || steps == config.max_steps {
            let val_loss = mean_loss(&model, validation)?;
            trace.push(TraceRow {
                step: steps,
                train_loss: Some(running / running_count as f64),
                val_loss,
            });
            running = 0.0;
            running_count = 0;
            if !val_loss.is_finite() {
                status = TrainStatus::Diverged { step: steps };
            } else if steps_to_target.is_none() && reached(val_loss) {
                steps_to_target = Some(steps);
                if config.stop_at_target {
                    status = TrainStatus::ReachedTarget;
                }
            }
        }
    }
    Ok(TrainReport {
        model,
        trace,
        status,
        steps,
        steps_to_target,
    })
}
