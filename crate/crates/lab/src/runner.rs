//! Strategy × seed matrix execution and the cross-seed summary.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use samosa_core::alcore::{Experiment, ExperimentConfig, RoundMetrics};
use samosa_core::strategies::StrategyKind;
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::output::{embeddings_csv, metrics_csv, scores_csv, write_atomic};

pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 5] = ["strategy", "runs", "mean_accuracy", "std_accuracy", "avg_rank"];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{strategy} seed {seed}: {source}")]
    Cell { strategy: String, seed: u64, source: samosa_core::Error },
    #[error("{failed} of {total} runs failed")]
    Failed { failed: usize, total: usize },
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("no completed runs under {0}")]
    NoRuns(PathBuf),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// What to run and where; echoed verbatim to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: FileConfig,
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub version: String,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, strategies: &[StrategyKind], seeds: &[u64], out_dir: &Path) -> Self {
        RunManifest {
            config: FileConfig::from(config),
            strategies: strategies.iter().map(|s| s.to_string()).collect(),
            seeds: seeds.to_vec(),
            out_dir: out_dir.to_path_buf(),
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    /// Every (strategy, seed) pair, strategy-major.
    pub fn cells(&self) -> Vec<(String, u64)> {
        self.strategies.iter().flat_map(|s| self.seeds.iter().map(move |&seed| (s.clone(), seed))).collect()
    }
}

pub fn cell_dir(out: &Path, strategy: &str, seed: u64) -> PathBuf {
    out.join(strategy).join(format!("seed_{seed}"))
}

/// Runs one cell, writing each round's files as soon as the round ends.
pub fn run_cell(base: &ExperimentConfig, strategy: StrategyKind, seed: u64, dir: &Path) -> Result<Vec<RoundMetrics>, RunError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let name = strategy.to_string();
    let cell_err = |source| RunError::Cell { strategy: name.clone(), seed, source };
    let cfg = ExperimentConfig { strategy, seed, ..*base };
    let mut exp = Experiment::new(cfg).map_err(cell_err)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let write = |file: String, bytes: io::Result<Vec<u8>>| -> Result<(), RunError> {
        let path = dir.join(file);
        write_atomic(&path, &bytes.map_err(io_at(&path))?).map_err(io_at(&path))
    };
    for _ in 0..cfg.rounds {
        let out = exp.step().map_err(cell_err)?;
        let t = out.metrics.round;
        write(format!("scores_round_{t}.csv"), scores_csv(&out.scores))?;
        write(format!("embeddings_round_{t}.csv"), embeddings_csv(&out.embeddings))?;
        metrics.push(out.metrics);
        write("metrics.csv".into(), metrics_csv(&name, seed, &metrics))?;
    }
    Ok(metrics)
}

/// Outcome of one finished cell.
#[derive(Debug)]
pub struct CellResult {
    pub strategy: String,
    pub seed: u64,
    pub result: Result<Vec<RoundMetrics>, RunError>,
}

/// Executes the whole matrix. A failing cell leaves its partial files plus a
/// `FAILED` marker, both in its own directory and at the top level.
pub fn run_matrix(manifest: &RunManifest) -> Result<Vec<CellResult>, RunError> {
    let base = manifest.config.resolve().map_err(|e| RunError::Malformed {
        path: manifest.out_dir.join(MANIFEST_FILE),
        reason: e.to_string(),
    })?;
    let out = &manifest.out_dir;
    fs::create_dir_all(out).map_err(io_at(out))?;
    let top_marker = out.join(FAILED_MARKER);
    if top_marker.exists() {
        fs::remove_file(&top_marker).map_err(io_at(&top_marker))?;
    }
    let manifest_path = out.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&manifest_path, &json).map_err(io_at(&manifest_path))?;

    let cells = manifest.cells();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|(strategy, seed)| {
            let dir = cell_dir(out, strategy, *seed);
            let result = strategy
                .parse::<StrategyKind>()
                .map_err(|source| RunError::Cell { strategy: strategy.clone(), seed: *seed, source })
                .and_then(|kind| {
                    let marker = dir.join(FAILED_MARKER);
                    if marker.exists() {
                        fs::remove_file(&marker).map_err(io_at(&marker))?;
                    }
                    run_cell(&base, kind, *seed, &dir)
                });
            if let Err(e) = &result {
                let _ = fs::create_dir_all(&dir);
                let _ = write_atomic(&dir.join(FAILED_MARKER), format!("{e}\n").as_bytes());
            }
            CellResult { strategy: strategy.clone(), seed: *seed, result }
        })
        .collect();

    let failed: Vec<String> = results
        .iter()
        .filter_map(|c| c.result.as_ref().err().map(|e| format!("{} seed {}: {e}", c.strategy, c.seed)))
        .collect();
    if !failed.is_empty() {
        let text = failed.join("\n") + "\n";
        write_atomic(&top_marker, text.as_bytes()).map_err(io_at(&top_marker))?;
    }
    Ok(results)
}

/// Final-round accuracy of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalAccuracy {
    pub strategy: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_accuracy: f64,
    /// Mean over seeds of the within-seed rank (1 = best, ties share the mean rank).
    pub avg_rank: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ranks descending by value; tied entries get the mean of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

pub fn summarize_runs(runs: &[FinalAccuracy]) -> Vec<SummaryRow> {
    let mut by_seed: BTreeMap<u64, Vec<&FinalAccuracy>> = BTreeMap::new();
    for r in runs {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut rank_sums: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for group in by_seed.values() {
        let accs: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
        for (r, rank) in group.iter().zip(fractional_ranks(&accs)) {
            rank_sums.entry(&r.strategy).or_default().push(rank);
        }
    }
    let mut accs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in runs {
        accs.entry(&r.strategy).or_default().push(r.accuracy);
    }
    accs.into_iter()
        .map(|(strategy, xs)| {
            let (mean_accuracy, std_accuracy) = mean_std(&xs);
            let ranks = &rank_sums[strategy];
            SummaryRow {
                strategy: strategy.to_string(),
                runs: xs.len(),
                mean_accuracy,
                std_accuracy,
                avg_rank: ranks.iter().sum::<f64>() / ranks.len() as f64,
            }
        })
        .collect()
}

/// Reads the last round of a `metrics.csv`.
pub fn read_final_accuracy(path: &Path) -> Result<FinalAccuracy, RunError> {
    let malformed = |reason: String| RunError::Malformed { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if headers.iter().ne(crate::output::METRICS_HEADER) {
        return Err(malformed("unexpected header".into()));
    }
    let mut last: Option<(usize, FinalAccuracy)> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let seed = field(1).parse().map_err(|_| malformed("bad seed".into()))?;
        let round: usize = field(2).parse().map_err(|_| malformed("bad round".into()))?;
        let accuracy = field(3).parse().map_err(|_| malformed("bad accuracy".into()))?;
        if last.as_ref().is_none_or(|(t, _)| round >= *t) {
            last = Some((round, FinalAccuracy { strategy: field(0).to_string(), seed, accuracy }));
        }
    }
    last.map(|(_, r)| r).ok_or_else(|| malformed("no rows".into()))
}

/// Collects completed runs under `out` (cells with a `FAILED` marker are
/// skipped), writes `summary.csv` and returns its rows.
pub fn summarize(out: &Path) -> Result<Vec<SummaryRow>, RunError> {
    let mut runs = Vec::new();
    let strategies = fs::read_dir(out).map_err(io_at(out))?;
    let mut cell_dirs = Vec::new();
    for s in strategies {
        let s = s.map_err(io_at(out))?.path();
        if !s.is_dir() {
            continue;
        }
        for c in fs::read_dir(&s).map_err(io_at(&s))? {
            cell_dirs.push(c.map_err(io_at(&s))?.path());
        }
    }
    cell_dirs.sort();
    for dir in cell_dirs {
        let metrics = dir.join("metrics.csv");
        if dir.join(FAILED_MARKER).exists() || !metrics.exists() {
            continue;
        }
        runs.push(read_final_accuracy(&metrics)?);
    }
    if runs.is_empty() {
        return Err(RunError::NoRuns(out.to_path_buf()));
    }
    let rows = summarize_runs(&runs);
    let mut w = csv::Writer::from_writer(Vec::new());
    let path = out.join(SUMMARY_FILE);
    let csv_err = |e: csv::Error| RunError::Malformed { path: path.clone(), reason: e.to_string() };
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.strategy.clone(),
            r.runs.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.avg_rank.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Io { path: path.clone(), source: e.into_error() })?;
    write_atomic(&path, &bytes).map_err(io_at(&path))?;
    Ok(rows)
}
