//! Persisted run artifacts: the JSONL trace and the per-evaluation CSV.
//!
//! A trace is one JSON object per line, tagged by `kind`: a `header` first,
//! then one `candidate` per evaluation in order, then either a `summary` or
//! an `error`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fusion_core::search::RoundFailure;
use fusion_core::Candidate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Format version of traces and CSV files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub command: String,
    pub format: u32,
    pub version: String,
    /// Fully materialized configuration; can be fed back as `--config`.
    pub config: Value,
    pub den_timestep: u32,
    /// Noise seed of each round, in round order.
    pub seeds: Vec<u64>,
}

impl TraceHeader {
    pub fn new(command: &str, config: Value, den_timestep: u32, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            format: FORMAT_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            den_timestep,
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub accepted: bool,
    pub rounds_used: u32,
    pub best_eval_index: usize,
    pub best_total: f64,
    pub failures: Vec<RoundFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Candidate(Candidate),
    Summary(TraceSummary),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub candidates: Vec<Candidate>,
    pub summary: Option<TraceSummary>,
    pub error: Option<String>,
}

impl RunTrace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            candidates: Vec::new(),
            summary: None,
            error: None,
        }
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Header(self.header.clone())];
        out.extend(self.candidates.iter().cloned().map(TraceRecord::Candidate));
        out.extend(self.summary.clone().map(TraceRecord::Summary));
        out.extend(
            self.error
                .clone()
                .map(|message| TraceRecord::Error { message }),
        );
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let io = output_error(path);
        let mut w = BufWriter::new(File::create(path).map_err(&io)?);
        for record in self.records() {
            let line = serde_json::to_string(&record).expect("trace records serialize");
            writeln!(w, "{line}").map_err(&io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::usage(format!("{}: {msg}", path.display()));
        let file = File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
        }
        Self::from_records(records).map_err(bad)
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Result<Self, String> {
        let mut it = records.into_iter();
        let Some(TraceRecord::Header(header)) = it.next() else {
            return Err("trace does not start with a header".into());
        };
        let mut trace = RunTrace::new(header);
        for record in it {
            if trace.summary.is_some() || trace.error.is_some() {
                return Err("records after the final summary".into());
            }
            match record {
                TraceRecord::Header(_) => return Err("second header".into()),
                TraceRecord::Candidate(c) => trace.candidates.push(c),
                TraceRecord::Summary(s) => trace.summary = Some(s),
                TraceRecord::Error { message } => trace.error = Some(message),
            }
        }
        Ok(trace)
    }
}

pub(crate) fn output_error(path: &Path) -> impl Fn(std::io::Error) -> CliError {
    let path: PathBuf = path.to_path_buf();
    move |source| CliError::Output {
        path: path.clone(),
        source,
    }
}

/// Floats are written with 17 significant digits so they parse back exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column order of `evaluations.csv`.
pub const EVALUATION_COLUMNS: [&str; 13] = [
    "eval_index",
    "stage",
    "alpha",
    "beta1",
    "beta2",
    "s_i1",
    "s_i2",
    "s_t1",
    "s_t2",
    "total",
    "b_sim",
    "round",
    "seed",
];

pub fn write_evaluations(path: &Path, candidates: &[Candidate]) -> Result<(), CliError> {
    let io = output_error(path);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(EVALUATION_COLUMNS)
        .map_err(|e| io(e.into()))?;
    for c in candidates {
        let b = &c.breakdown;
        let p = &c.params;
        let mut row = vec![c.eval_index.to_string(), c.stage.name().to_string()];
        row.extend(
            [
                p.alpha, p.beta1, p.beta2, b.s_i1, b.s_i2, b.s_t1, b.s_t2, b.total, b.b_sim,
            ]
            .map(fmt_f64),
        );
        row.push(c.round.to_string());
        row.push(p.seed.to_string());
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
