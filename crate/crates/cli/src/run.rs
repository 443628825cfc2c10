//! Config resolution and run directories.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use siamhand::jsonio::{read_json, write_json};

use crate::error::{config_error, Classify, CliResult};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; every random draw derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for frame-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Run directory receiving all outputs.
    #[arg(long)]
    pub out: PathBuf,
}

/// A resolved run configuration as written to `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig<T> {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default)]
    pub settings: T,
}

fn one() -> usize {
    1
}

impl<T: DeserializeOwned + Default> RunConfig<T> {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(path) => read_json::<RunConfig<T>>(path).config()?,
            None => RunConfig {
                seed: 0,
                jobs: 1,
                settings: T::default(),
            },
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = common.jobs {
            cfg.jobs = jobs;
        }
        if cfg.jobs == 0 {
            return Err(config_error("jobs must be at least 1"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    seed: u64,
    tool_version: &'a str,
    inputs: Vec<String>,
    schema_versions: SchemaVersions,
}

#[derive(Debug, Serialize)]
struct SchemaVersions {
    scene: u32,
    pair: u32,
}

/// An output directory holding `config.json`, `run.json` and the
/// subcommand's artifacts.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create<T: Serialize>(
        root: &Path,
        subcommand: &str,
        config: &RunConfig<T>,
        inputs: &[&Path],
    ) -> CliResult<Self> {
        std::fs::create_dir_all(root).data()?;
        write_json(&root.join("config.json"), config).data()?;
        let manifest = Manifest {
            subcommand,
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            schema_versions: SchemaVersions {
                scene: siamhand::synth_oracle::SCENE_SCHEMA_VERSION,
                pair: siamhand::dataset_pairs::PAIR_SCHEMA_VERSION,
            },
        };
        write_json(&root.join("run.json"), &manifest).data()?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        write_json(&self.path(name), value).data()
    }

    pub fn write_csv<S: Serialize>(&self, name: &str, rows: &[S]) -> CliResult<()> {
        let mut w = csv::Writer::from_path(self.path(name)).data()?;
        for row in rows {
            w.serialize(row).data()?;
        }
        w.flush().data()
    }
}

/// Runs `f` on a pool of `jobs` threads.
pub fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().config()?;
    Ok(pool.install(f))
}

pub fn require_input(path: &Path) -> CliResult<()> {
    if !path.exists() {
        return Err(crate::error::data_error(format!("input {} does not exist", path.display())));
    }
    Ok(())
}
