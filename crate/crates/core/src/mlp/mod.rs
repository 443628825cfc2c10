//! A small multi-layer perceptron with hand-written backpropagation.
//!
//! Hidden layers use ReLU. The head is either linear (trained with mean
//! squared error) or softmax (trained with cross-entropy). Weights are
//! stored row-major, one row per output unit.

mod grasp;
mod lift;
mod train;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;

pub use grasp::{
    classify_grasp, grasp_dataset, preprocess_pose, prototype_params, GraspPrediction, GraspTag, Taxonomy,
};
pub use lift::{
    lift_2d_to_3d, lift_examples, lift_features, lift_target, paired_lift_examples, PoseVector63, LIFT_SCALE_MM,
    POSE_DIM,
};
pub use train::{
    mean_loss, train, train_paired, Examples, PairedExamples, TraceRow, TrainConfig, TrainReport, TrainStatus,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MlpError {
    #[error("expected {expected} values, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("target kind does not match a {0:?} head")]
    TargetKind(Head),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub head: Head,
    /// Seed the weights were initialized from.
    pub seed: u64,
}

/// Training target of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += scale * y);
        }
    }
}

impl MlpModel {
    /// He-initialized model with the given layer sizes (input first).
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Result<Self, MlpError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(MlpError::InvalidModel(format!("layer sizes {sizes:?}")));
        }
        let mut r = rng::stream(seed, "mlp-init");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive scale");
                let mut layer = Layer::zeros(w[0], w[1]);
                layer.weights.iter_mut().for_each(|x| *x = normal.sample(&mut r));
                layer
            })
            .collect();
        Ok(Self { layers, head, seed })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.extend(self.layers.last().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.layers.is_empty() {
            return Err(MlpError::InvalidModel("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(MlpError::InvalidModel(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(MlpError::InvalidModel(format!("layer {i} does not chain")));
            }
            if l.weights.iter().chain(&l.biases).any(|x| !x.is_finite()) {
                return Err(MlpError::InvalidModel(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.input_size() {
            return Err(MlpError::Dimension {
                expected: self.input_size(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(&act, &mut z);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            zs.push(z);
        }
        zs
    }

    /// Output before the head's nonlinearity.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(x)?;
        Ok(self.pre_activations(x).pop().unwrap_or_default())
    }

    /// Network output: raw values for a linear head, probabilities for a
    /// softmax head.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        let z = self.logits(x)?;
        Ok(match self.head {
            Head::Linear => z,
            Head::Softmax => softmax(&z),
        })
    }

    fn check_target(&self, target: &Target) -> Result<(), MlpError> {
        match (self.head, target) {
            (Head::Linear, Target::Values(v)) if v.len() != self.output_size() => Err(MlpError::Dimension {
                expected: self.output_size(),
                found: v.len(),
            }),
            (Head::Linear, Target::Values(_)) => Ok(()),
            (Head::Softmax, Target::Class(c)) if *c >= self.output_size() => Err(MlpError::ClassOutOfRange {
                class: *c,
                classes: self.output_size(),
            }),
            (Head::Softmax, Target::Class(_)) => Ok(()),
            (head, _) => Err(MlpError::TargetKind(head)),
        }
    }

    /// Mean squared error (linear head) or cross-entropy (softmax head).
    pub fn loss(&self, x: &[f64], target: &Target) -> Result<f64, MlpError> {
        self.check_target(target)?;
        let z = self.logits(x)?;
        Ok(loss_from_logits(self.head, &z, target))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn backward(&self, x: &[f64], target: &Target) -> Result<(Gradients, f64), MlpError> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(x, target, 1.0, &mut grads)?;
        Ok((grads, loss))
    }

    /// Adds `scale` times the gradient of the loss at `(x, target)` into
    /// `grads` and returns the unscaled loss.
    pub fn accumulate_gradients(
        &self,
        x: &[f64],
        target: &Target,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64, MlpError> {
        self.check_input(x)?;
        self.check_target(target)?;
        if grads.layers.len() != self.layers.len() {
            return Err(MlpError::InvalidModel("gradient shape differs from model".into()));
        }
        let zs = self.pre_activations(x);
        let out = zs.last().expect("at least one layer");
        let loss = loss_from_logits(self.head, out, target);
        let mut delta: Vec<f64> = match (self.head, target) {
            (Head::Linear, Target::Values(t)) => {
                let n = out.len() as f64;
                out.iter().zip(t).map(|(y, t)| 2.0 * (y - t) / n).collect()
            }
            (Head::Softmax, Target::Class(c)) => {
                let mut p = softmax(out);
                p[*c] -= 1.0;
                p
            }
            _ => unreachable!("target checked above"),
        };
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let relu;
            let input: &[f64] = if i == 0 {
                x
            } else {
                relu = zs[i - 1].iter().map(|v| v.max(0.0)).collect::<Vec<f64>>();
                &relu
            };
            let g = &mut grads.layers[i];
            for (o, d) in delta.iter().enumerate() {
                let d = scale * d;
                g.biases[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, v)| *w += d * v);
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                for (p, z) in prev.iter_mut().zip(&zs[i - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(loss)
    }

    /// Gradient-descent step `θ ← θ − rate·g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, rate: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= rate * d);
            l.biases.iter_mut().zip(&g.biases).for_each(|(b, d)| *b -= rate * d);
        }
    }
}

fn loss_from_logits(head: Head, z: &[f64], target: &Target) -> f64 {
    match (head, target) {
        (Head::Linear, Target::Values(t)) => {
            z.iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / z.len() as f64
        }
        (Head::Softmax, Target::Class(c)) => log_sum_exp(z) - z[*c],
        _ => f64::NAN,
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Index of the largest value, the lowest index among ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_model(seed: u64, head: Head) -> MlpModel {
        let mut r = rng::seeded(seed);
        let sizes = [r.random_range(1..6), r.random_range(1..7), r.random_range(1..7), r.random_range(2..5)];
        let mut m = MlpModel::new(&sizes, head, seed).unwrap();
        for l in m.layers.iter_mut() {
            l.biases.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        m
    }

    fn random_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_model_outputs_zero_and_identity_passes_through() {
        let mut m = MlpModel::new(&[3, 4, 2], Head::Linear, 1).unwrap();
        for l in m.layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let mut id = MlpModel::new(&[3, 3], Head::Linear, 1).unwrap();
        id.layers[0].weights = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(id.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert_eq!(
            id.forward(&[1.0]),
            Err(MlpError::Dimension { expected: 3, found: 1 })
        );
    }

    #[test]
    fn forward_matches_matrix_arithmetic() {
        for seed in 0..20 {
            let m = random_model(seed, Head::Linear);
            let x = random_vec(&mut rng::seeded(seed + 100), m.input_size());
            let mut a = DVector::from_vec(x.clone());
            for (i, l) in m.layers.iter().enumerate() {
                let w = DMatrix::from_row_slice(l.outputs, l.inputs, &l.weights);
                a = w * a + DVector::from_vec(l.biases.clone());
                if i + 1 < m.layers.len() {
                    a = a.map(|v| v.max(0.0));
                }
            }
            let y = m.forward(&x).unwrap();
            for (p, q) in y.iter().zip(a.iter()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    fn fd_check(m: &MlpModel, x: &[f64], t: &Target) -> f64 {
        let (g, _) = m.backward(x, t).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for li in 0..m.layers.len() {
            let n_w = m.layers[li].weights.len();
            for k in 0..n_w + m.layers[li].biases.len() {
                let mut p = m.clone();
                let mut q = m.clone();
                let (analytic, slot_p, slot_q) = if k < n_w {
                    (g.layers[li].weights[k], &mut p.layers[li].weights[k], &mut q.layers[li].weights[k])
                } else {
                    let b = k - n_w;
                    (g.layers[li].biases[b], &mut p.layers[li].biases[b], &mut q.layers[li].biases[b])
                };
                *slot_p += h;
                *slot_q -= h;
                let numeric = (p.loss(x, t).unwrap() - q.loss(x, t).unwrap()) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..25 {
            let mut r = rng::seeded(seed + 500);
            let m = random_model(seed, Head::Linear);
            let x = random_vec(&mut r, m.input_size());
            let t = Target::Values(random_vec(&mut r, m.output_size()));
            assert!(fd_check(&m, &x, &t) < 1e-4, "seed {seed}");
            let m = random_model(seed, Head::Softmax);
            let x = random_vec(&mut r, m.input_size());
            let t = Target::Class(r.random_range(0..m.output_size()));
            assert!(fd_check(&m, &x, &t) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn perfect_regression_has_zero_output_gradient() {
        let m = random_model(3, Head::Linear);
        let x = vec![0.3; m.input_size()];
        let y = m.forward(&x).unwrap();
        let (g, loss) = m.backward(&x, &Target::Values(y)).unwrap();
        assert_eq!(loss, 0.0);
        let last = g.layers.last().unwrap();
        assert!(last.weights.iter().chain(&last.biases).all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_softmax_cross_entropy_is_log_classes() {
        let mut m = MlpModel::new(&[4, 5], Head::Softmax, 2).unwrap();
        m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let l = m.loss(&[1.0, 2.0, 3.0, 4.0], &Target::Class(2)).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert_eq!(
            m.loss(&[1.0, 2.0, 3.0, 4.0], &Target::Class(5)),
            Err(MlpError::ClassOutOfRange { class: 5, classes: 5 })
        );
    }

    #[test]
    fn softmax_ignores_logit_shift() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.25).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
