//! Grid sweeps. Cells are evaluated independently (concurrently when the
//! parallel build is used) and written in grid order.

use std::path::Path;

use fusion_core::{
    scoring, BNoiseStrategy, ConceptInputs, Execution, FusionParams, MDeNoiseStrategy, Sampler,
    ScoreBreakdown, Strategies,
};

use crate::args::{Pair, SweepArgs};
use crate::config::RunConfig;
use crate::engine::Engine;
use crate::error::CliError;
use crate::trace::{fmt_f64, output_error};

/// Column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 15] = [
    "first", "second", "bnoise", "mdenoise", "alpha", "beta1", "beta2", "seed", "s_i1", "s_i2",
    "s_t1", "s_t2", "total", "b_sim", "error",
];

/// Parses `LO:HI:N` (N evenly spaced points including both ends) or a comma
/// separated list. `LO:HI:0` is the empty grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: String| CliError::usage(format!("grid `{spec}`: {why}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| bad(format!("`{s}`: {e}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[..] {
        [lo, hi, n] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|e| bad(format!("point count: {e}")))?;
            Ok(match n {
                0 => Vec::new(),
                1 => vec![lo],
                _ => {
                    let last = (n - 1) as f64;
                    (0..n)
                        .map(|i| {
                            if i == n - 1 {
                                hi
                            } else {
                                lo + (hi - lo) * i as f64 / last
                            }
                        })
                        .collect()
                }
            })
        }
        [list] if list.trim().is_empty() => Ok(Vec::new()),
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad("expected LO:HI:N or a comma list".into())),
    }
}

fn parse_names<T: std::str::FromStr<Err = fusion_core::FusionError> + Copy>(
    spec: Option<&str>,
    all: &[T],
    default: T,
) -> Result<Vec<T>, CliError> {
    match spec {
        None => Ok(vec![default]),
        Some("all") => Ok(all.to_vec()),
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(CliError::usage))
            .collect(),
    }
}

/// Cartesian product of the sweep axes, outermost first:
/// pair, noise strategy, final-pass strategy, alpha, beta1, beta2.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub pairs: Vec<[String; 2]>,
    pub bnoise: Vec<BNoiseStrategy>,
    pub mdenoise: Vec<MDeNoiseStrategy>,
    pub alpha: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub pair: usize,
    pub strategies: Strategies,
    pub params: FusionParams,
}

impl SweepGrid {
    /// Axes not given on the command line hold the configured value.
    pub fn from_args(
        args: &SweepArgs,
        cfg: &RunConfig,
        ids: Option<&[String]>,
    ) -> Result<Self, CliError> {
        let axis = |spec: &Option<String>, fixed: f64| match spec {
            Some(s) => parse_grid(s),
            None => Ok(vec![fixed]),
        };
        let pairs = match args.pairs.as_deref() {
            None => vec![cfg.pair.clone()],
            Some("all") => {
                let ids = ids.ok_or_else(|| {
                    CliError::usage("`--pairs all` needs a toy world to enumerate concepts")
                })?;
                let mut pairs = Vec::new();
                for (i, a) in ids.iter().enumerate() {
                    for b in &ids[i + 1..] {
                        pairs.push([a.clone(), b.clone()]);
                    }
                }
                pairs
            }
            Some(list) => list
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<Pair>().map(|p| p.0).map_err(CliError::usage))
                .collect::<Result<_, _>>()?,
        };
        let grid = Self {
            pairs,
            bnoise: parse_names(
                args.bnoise.as_deref(),
                &BNoiseStrategy::ALL,
                cfg.strategies.bnoise,
            )?,
            mdenoise: parse_names(
                args.mdenoise.as_deref(),
                &MDeNoiseStrategy::ALL,
                cfg.strategies.mdenoise,
            )?,
            alpha: axis(&args.alpha_grid, cfg.params.alpha)?,
            beta1: axis(&args.beta1_grid, cfg.params.beta1)?,
            beta2: axis(&args.beta2_grid, cfg.params.beta2)?,
        };
        for &alpha in &grid.alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::usage(format!("alpha {alpha} outside [0, 1]")));
            }
        }
        Ok(grid)
    }

    pub fn cells(&self, seed: u64) -> Vec<Cell> {
        let mut cells = Vec::new();
        for pair in 0..self.pairs.len() {
            for &bnoise in &self.bnoise {
                for &mdenoise in &self.mdenoise {
                    for &alpha in &self.alpha {
                        for &beta1 in &self.beta1 {
                            for &beta2 in &self.beta2 {
                                cells.push(Cell {
                                    pair,
                                    strategies: Strategies { bnoise, mdenoise },
                                    params: FusionParams {
                                        alpha,
                                        beta1,
                                        beta2,
                                        seed,
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Runs every cell. A failing cell yields its error message; the sweep goes on.
pub fn evaluate_cells(
    engine: &Engine,
    cfg: &RunConfig,
    grid: &SweepGrid,
    cells: &[Cell],
    exec: Execution,
) -> Result<Vec<Result<ScoreBreakdown, String>>, CliError> {
    let sampler = Sampler::new(cfg.sampler.clone(), engine.backend())?;
    let inputs: Vec<Result<ConceptInputs, String>> = grid
        .pairs
        .iter()
        .map(|pair| {
            engine.check_pair(pair)?;
            engine.inputs(pair)
        })
        .map(|r| r.map_err(|e| e.to_string()))
        .collect();
    let provider = engine.provider();
    Ok(exec.map(cells, |cell| {
        let inputs = inputs[cell.pair].as_ref().map_err(Clone::clone)?;
        let out = sampler
            .hsp(inputs, &cell.params, cell.strategies)
            .map_err(|e| e.to_string())?;
        scoring::evaluate(&out.decoded, inputs, provider, cfg.bounds).map_err(|e| e.to_string())
    }))
}

pub fn write_sweep(
    path: &Path,
    grid: &SweepGrid,
    cells: &[Cell],
    results: &[Result<ScoreBreakdown, String>],
) -> Result<(), CliError> {
    let io = output_error(path);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(SWEEP_COLUMNS).map_err(|e| io(e.into()))?;
    for (cell, result) in cells.iter().zip(results) {
        let [first, second] = &grid.pairs[cell.pair];
        let p = &cell.params;
        let mut row = vec![
            first.clone(),
            second.clone(),
            cell.strategies.bnoise.name().to_string(),
            cell.strategies.mdenoise.name().to_string(),
            fmt_f64(p.alpha),
            fmt_f64(p.beta1),
            fmt_f64(p.beta2),
            p.seed.to_string(),
        ];
        match result {
            Ok(b) => {
                row.extend([b.s_i1, b.s_i2, b.s_t1, b.s_t2, b.total, b.b_sim].map(fmt_f64));
                row.push(String::new());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(msg.clone());
            }
        }
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
