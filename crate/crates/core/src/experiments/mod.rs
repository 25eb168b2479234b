//! Experiment runners, dataset loaders and result emission.

pub mod clustering;
pub mod consistency;
pub mod data;
pub mod hypercube;
pub mod kernel_mnist;
pub mod linear;
pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query_engine::SessionTrace;

/// Flat `key = value` configuration with `#` comments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: n + 1, message: format!("expected key = value, got {line:?}") })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse { line: n + 1, message: "empty key".into() });
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse { line: n + 1, message: format!("duplicate key {k}") });
            }
        }
        Ok(ExperimentConfig { entries })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.entries.get(key).ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
    }

    /// Comma-separated list; `default` when the key is absent.
    pub fn get_list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.entries.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(v).map_err(|_| Error::Config(format!("cannot parse list {key} = {v:?}"))),
        }
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds: Vec<u64> = self.get_list("seeds", &[])?;
        if seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        Ok(seeds)
    }

    /// Rejects keys the runner does not understand (typos would otherwise be
    /// silently ignored).
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if k != "seeds" && k != "out" && !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k}; expected one of {}", known.join(", "))));
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
}

/// One observation of a metric. Metric names carry the arm as a prefix,
/// e.g. `sqbc/clustering_distance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub step: usize,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(experiment: &str, seed: u64, step: usize, metric: impl Into<String>, value: f64) -> ResultRow {
        ResultRow { experiment: experiment.to_string(), seed, step, metric: metric.into(), value }
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Deterministic order: seed, metric, step.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.experiment.as_str(), a.seed, a.metric.as_str(), a.step).cmp(&(b.experiment.as_str(), b.seed, b.metric.as_str(), b.step))
    });
}

/// Values of one metric for one seed, ordered by step.
pub fn series(rows: &[ResultRow], seed: u64, metric: &str) -> Vec<(usize, f64)> {
    let mut s: Vec<(usize, f64)> =
        rows.iter().filter(|r| r.seed == seed && r.metric == metric).map(|r| (r.step, r.value)).collect();
    s.sort_by_key(|p| p.0);
    s
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Everything a run produces.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// Resolved settings and defaults, written as JSON.
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub traces: Vec<(String, SessionTrace)>,
}

pub const EXPERIMENTS: [&str; 8] =
    ["hypercube", "consistency", "linear-noise", "kernel-mnist", "clustering-blobs", "clustering-iris", "clustering-wine", "clustering-mnist"];

/// Runs one experiment id for every seed. Rows are sorted.
pub fn run_experiment(id: &str, config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    if seeds.is_empty() {
        return Err(Error::Config("seeds must be non-empty".into()));
    }
    let mut out = match id {
        "hypercube" => hypercube::run(config, seeds)?,
        "consistency" => consistency::run(config, seeds)?,
        "linear-noise" => linear::run(config, seeds)?,
        "kernel-mnist" => kernel_mnist::run(config, seeds)?,
        "clustering-blobs" | "clustering-iris" | "clustering-wine" | "clustering-mnist" => {
            clustering::run(id.trim_start_matches("clustering-"), config, seeds)?
        }
        other => return Err(Error::Config(format!("unknown experiment {other}; expected one of {}", EXPERIMENTS.join(", ")))),
    };
    sort_rows(&mut out.rows);
    out.metadata.insert("experiment".into(), id.into());
    out.metadata.insert("seeds".into(), seeds.into());
    out.metadata.insert("config".into(), serde_json::to_value(config.entries())?);
    Ok(out)
}

/// Writes `results.csv`, `metadata.json`, `traces/*.jsonl` and, when
/// `plots` is set, one SVG per metric.
pub fn write_output(output: &ExperimentOutput, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv_path = dir.join("results.csv");
    write_rows(&output.rows, fs::File::create(&csv_path)?)?;
    written.push(csv_path);
    let meta_path = dir.join("metadata.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&output.metadata)?)?;
    written.push(meta_path);
    if !output.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for (name, trace) in &output.traces {
            let p = tdir.join(format!("{name}.jsonl"));
            trace.write_jsonl(std::io::BufWriter::new(fs::File::create(&p)?))?;
            written.push(p);
        }
    }
    if plots {
        for (metric, svg) in plot::metric_charts(&output.rows) {
            let p = dir.join(format!("{}.svg", metric.replace('/', "_")));
            fs::write(&p, svg)?;
            written.push(p);
        }
    }
    Ok(written)
}
