use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use fusion_core::sampler::BlendedNoise;
use fusion_core::search::round_seed;
use fusion_core::{
    run_eaa, scoring, Candidate, Execution, FusionParams, Latent, Sampler, ScoreBreakdown, Stage,
    ToyBackend, ToyProvider,
};
use serde::Serialize;

use crate::args::{ServeArgs, SweepArgs};
use crate::config::RunConfig;
use crate::engine::{load_world, Engine};
use crate::error::CliError;
use crate::sweep::{evaluate_cells, write_sweep, SweepGrid};
use crate::trace::{output_error, write_evaluations, RunTrace, TraceHeader, TraceSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// The search finished without reaching the threshold; artifacts were written.
    Unaccepted,
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(output_error(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(output_error(path))
}

#[derive(Serialize)]
struct FuseOutput<'a> {
    pair: &'a [String; 2],
    params: FusionParams,
    breakdown: ScoreBreakdown,
    point: &'a [f64],
    cloud: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct FuseStages<'a> {
    den_timestep: u32,
    noise: &'a BlendedNoise,
    final_latent: &'a Latent,
}

/// One fusion at the configured parameters. Writes `output.json`,
/// `stages.json` and a single-candidate `trace.jsonl`.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let engine = Engine::open(cfg)?;
    let sampler = Sampler::new(cfg.sampler.clone(), engine.backend())?;
    let inputs = engine.inputs(&cfg.pair)?;
    let out = sampler.hsp(&inputs, &cfg.params, cfg.strategies)?;
    let breakdown = scoring::evaluate(&out.decoded, &inputs, engine.provider(), cfg.bounds)?;

    prepare_out(&cfg.out)?;
    write_json(
        &cfg.out.join("output.json"),
        &FuseOutput {
            pair: &cfg.pair,
            params: out.params,
            breakdown,
            point: &out.decoded.point,
            cloud: &out.decoded.cloud,
        },
    )?;
    write_json(
        &cfg.out.join("stages.json"),
        &FuseStages {
            den_timestep: out.den_timestep,
            noise: &out.noise,
            final_latent: &out.final_latent,
        },
    )?;
    let mut trace = RunTrace::new(TraceHeader::new(
        "fuse",
        cfg.snapshot(),
        out.den_timestep,
        vec![cfg.params.seed],
    ));
    trace.candidates.push(Candidate {
        params: out.params,
        breakdown,
        stage: Stage::Init,
        round: 1,
        eval_index: 0,
    });
    trace.write(&cfg.out.join("trace.jsonl"))?;
    println!("total {:.6}  b_sim {:.6}", breakdown.total, breakdown.b_sim);
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct BestRecord<'a> {
    pair: &'a [String; 2],
    accepted: bool,
    rounds_used: u32,
    threshold: f64,
    best: &'a Candidate,
}

/// Adaptive search. Writes `trace.jsonl`, `best.json` and `evaluations.csv`.
/// After a failure the header and an error record are still written.
pub fn cmd_search(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let engine = Engine::open(cfg)?;
    let sampler = Sampler::new(cfg.sampler.clone(), engine.backend())?;
    let seeds = (1..=cfg.search.max_rounds)
        .map(|k| round_seed(cfg.search.base_seed, k))
        .collect();
    let header = TraceHeader::new(
        "search",
        cfg.snapshot(),
        sampler.schedule().den_timestep(),
        seeds,
    );
    let mut trace = RunTrace::new(header);
    prepare_out(&cfg.out)?;
    let trace_path = cfg.out.join("trace.jsonl");

    let result = engine.inputs(&cfg.pair).and_then(|inputs| {
        Ok(run_eaa(
            &inputs,
            &cfg.search,
            &sampler,
            cfg.strategies,
            engine.provider(),
            cfg.bounds,
        )?)
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            trace.error = Some(e.to_string());
            trace.write(&trace_path)?;
            write_evaluations(&cfg.out.join("evaluations.csv"), &[])?;
            return Err(e);
        }
    };

    trace.candidates = result.trace.clone();
    trace.summary = Some(TraceSummary {
        accepted: result.accepted,
        rounds_used: result.rounds_used,
        best_eval_index: result.best.eval_index,
        best_total: result.best.total(),
        failures: result.failures.clone(),
    });
    trace.write(&trace_path)?;
    write_json(
        &cfg.out.join("best.json"),
        &BestRecord {
            pair: &cfg.pair,
            accepted: result.accepted,
            rounds_used: result.rounds_used,
            threshold: cfg.search.threshold,
            best: &result.best,
        },
    )?;
    write_evaluations(&cfg.out.join("evaluations.csv"), &result.trace)?;

    let b = &result.best;
    println!(
        "{} after {} round(s): total {:.6} at alpha {:.4}, beta1 {:.4}, beta2 {:.4} ({} evaluations)",
        if result.accepted { "accepted" } else { "not accepted" },
        result.rounds_used,
        b.total(),
        b.params.alpha,
        b.params.beta1,
        b.params.beta2,
        result.trace.len(),
    );
    for f in &result.failures {
        eprintln!("round {} failed: {}", f.round, f.message);
    }
    Ok(if result.accepted {
        Outcome::Done
    } else {
        Outcome::Unaccepted
    })
}

/// Grid sweep into `sweep.csv`, one row per cell in grid order.
pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<Outcome, CliError> {
    let engine = Engine::open(cfg)?;
    let ids = engine.concept_ids();
    let grid = SweepGrid::from_args(args, cfg, ids.as_deref())?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let cells = grid.cells(cfg.params.seed);
    let results = evaluate_cells(&engine, cfg, &grid, &cells, exec)?;
    prepare_out(&cfg.out)?;
    write_sweep(&cfg.out.join("sweep.csv"), &grid, &cells, &results)?;
    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("{} cells, {failed} failed", cells.len());
    Ok(Outcome::Done)
}

/// Serves a toy world until the process is stopped.
pub fn cmd_serve(args: &ServeArgs) -> Result<Outcome, CliError> {
    let world = load_world(&args.world)?;
    let listener = TcpListener::bind(&args.listen)
        .map_err(|e| CliError::usage(format!("cannot listen on {}: {e}", args.listen)))?;
    let addr = listener
        .local_addr()
        .map_err(fusion_core::FusionError::from)?;
    eprintln!("serving {} on {addr}", args.world);
    let provider = ToyProvider::new(&world);
    fusion_core::remote::serve_tcp(
        listener,
        Arc::new(ToyBackend::new(world, args.t_max)),
        Some(Arc::new(provider)),
    )
    .map_err(fusion_core::FusionError::from)?;
    Ok(Outcome::Done)
}
