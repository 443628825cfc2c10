use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use siamhand::jsonio::read_json;

use crate::error::{data_error, Classify, CliResult};
use crate::run::{require_input, Common, RunConfig, RunDir};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {}

#[derive(Debug, Deserialize)]
struct Manifest {
    subcommand: String,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Entry {
    run: String,
    subcommand: String,
    seed: u64,
    summary: Value,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    run: &'a str,
    subcommand: &'a str,
    seed: u64,
    metric: String,
    value: String,
}

fn candidates(root: &Path) -> CliResult<Vec<PathBuf>> {
    let mut dirs = vec![root.to_path_buf()];
    let mut subdirs = Vec::new();
    for entry in std::fs::read_dir(root).data()? {
        let path = entry.data()?.path();
        if path.is_dir() {
            subdirs.push(path);
        }
    }
    subdirs.sort();
    dirs.extend(subdirs);
    Ok(dirs)
}

/// Scalar leaves of a summary, keyed by dotted path.
fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(_) => {}
        Value::Null => {
            out.insert(prefix.to_string(), String::new());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

pub fn run(common: &Common, input: &Path) -> CliResult<()> {
    let cfg = RunConfig::<ReportSettings>::resolve(common)?;
    require_input(input)?;
    if !input.is_dir() {
        return Err(data_error(format!("{} is not a directory", input.display())));
    }
    let mut entries = Vec::new();
    for dir in candidates(input)? {
        let (summary, manifest) = (dir.join("summary.json"), dir.join("run.json"));
        if !(summary.is_file() && manifest.is_file()) {
            continue;
        }
        let m: Manifest = read_json(&manifest).data()?;
        let name = dir.strip_prefix(input).unwrap_or(&dir).display().to_string();
        entries.push(Entry {
            run: if name.is_empty() { ".".into() } else { name },
            subcommand: m.subcommand,
            seed: m.seed,
            summary: read_json(&summary).data()?,
        });
    }
    if entries.is_empty() {
        return Err(data_error(format!("no run directories with summary.json under {}", input.display())));
    }
    let dir = RunDir::create(&common.out, "report", &cfg, &[input])?;
    let mut rows = Vec::new();
    for e in &entries {
        let mut metrics = BTreeMap::new();
        flatten("", &e.summary, &mut metrics);
        rows.extend(metrics.into_iter().map(|(metric, value)| CsvRow {
            run: &e.run,
            subcommand: &e.subcommand,
            seed: e.seed,
            metric,
            value,
        }));
    }
    dir.write_csv("report.csv", &rows)?;
    dir.write_json("report.json", &entries)
}
