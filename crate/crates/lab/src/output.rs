//! CSV writers. Every file is written to a sibling temp file and renamed into
//! place, so a reader never observes a half-written CSV.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use samosa_core::alcore::{EmbeddingRow, PoolState, RoundMetrics, ScoreRow};
use samosa_core::synthdata::Example;

pub const METRICS_HEADER: [&str; 12] = [
    "strategy",
    "seed",
    "round",
    "accuracy",
    "precision",
    "recall",
    "n_labeled",
    "n_invalid",
    "n_valid_queries",
    "loss_sgd",
    "loss_sam",
    "loss_test",
];

pub const SCORES_HEADER: [&str; 6] = ["id", "score", "accepted", "sgd_pred", "sam_pred", "selected"];

pub const POOL_HEADER: [&str; 5] = ["id", "true_class", "subclass", "is_known", "split"];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn metrics_csv(strategy: &str, seed: u64, rows: &[RoundMetrics]) -> io::Result<Vec<u8>> {
    to_bytes(
        &header(&METRICS_HEADER),
        rows.iter().map(|m| {
            vec![
                strategy.to_string(),
                seed.to_string(),
                m.round.to_string(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.n_labeled.to_string(),
                m.n_invalid.to_string(),
                m.n_valid_queries.to_string(),
                opt(m.loss_sgd),
                opt(m.loss_sam),
                m.loss_test.to_string(),
            ]
        }),
    )
}

pub fn scores_csv(rows: &[ScoreRow]) -> io::Result<Vec<u8>> {
    to_bytes(
        &header(&SCORES_HEADER),
        rows.iter().map(|s| {
            vec![
                s.id.to_string(),
                s.score.to_string(),
                opt(s.accepted.map(u8::from)),
                opt(s.sgd_pred),
                opt(s.sam_pred),
                u8::from(s.selected).to_string(),
            ]
        }),
    )
}

pub fn embeddings_header(width: usize) -> Vec<String> {
    let mut h = header(&POOL_HEADER);
    h.extend((1..=width).map(|j| format!("e_{j}")));
    h
}

pub fn embeddings_csv(rows: &[EmbeddingRow]) -> io::Result<Vec<u8>> {
    let width = rows.first().map_or(0, |r| r.values.len());
    to_bytes(
        &embeddings_header(width),
        rows.iter().map(|r| {
            let mut v = vec![
                r.id.to_string(),
                r.true_class.to_string(),
                r.subclass.as_str().to_string(),
                u8::from(r.is_known).to_string(),
                r.split.as_str().to_string(),
            ];
            v.extend(r.values.iter().map(f64::to_string));
            v
        }),
    )
}

/// Pool snapshot: one row per example with its current split.
pub fn pool_csv(examples: &[Example], state: &PoolState) -> io::Result<Vec<u8>> {
    to_bytes(
        &header(&POOL_HEADER),
        examples.iter().map(|e| {
            vec![
                e.id.to_string(),
                e.true_class.to_string(),
                e.subclass.as_str().to_string(),
                u8::from(e.is_known).to_string(),
                state.split_of(e.id).as_str().to_string(),
            ]
        }),
    )
}

/// Raw inputs: `id,patch,x_1..x_d`, one row per patch.
pub fn patches_csv(examples: &[Example]) -> io::Result<Vec<u8>> {
    let dim = examples.first().map_or(0, |e| e.x.dim());
    let mut h = header(&["id", "patch"]);
    h.extend((1..=dim).map(|k| format!("x_{k}")));
    to_bytes(
        &h,
        examples.iter().flat_map(|e| {
            e.x.patches().enumerate().map(move |(p, v)| {
                let mut row = vec![e.id.to_string(), p.to_string()];
                row.extend(v.iter().map(f64::to_string));
                row
            })
        }),
    )
}
