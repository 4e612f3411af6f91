use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusion_cli::trace::{RunTrace, TraceRecord};
use fusion_core::remote::spawn_loopback;
use fusion_core::sampler::ConditionBundle;
use fusion_core::*;
use serde_json::Value;

fn fusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(trace: &Path) -> Value {
    let text = fs::read_to_string(trace).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "header");
    first
}

#[test]
fn config_layers_apply_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"search": {"threshold": 2.0, "alpha_budget": 6}, "params": {"alpha": 0.3}, "pair": ["A", "C"]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let run = fusion(&[
        "search",
        "--config",
        path(&cfg),
        "--threshold",
        "2.2",
        "--out",
        path(&out),
        "--fair",
    ]);
    assert!([0, 3].contains(&code(&run)), "{run:?}");
    let cfg = &header(&out.join("trace.jsonl"))["config"];
    assert_eq!(cfg["search"]["threshold"], 2.2); // command line over file
    assert_eq!(cfg["search"]["alpha_budget"], 6); // file over default
    assert_eq!(cfg["search"]["beta_budget"], 10); // default
    assert_eq!(cfg["search"]["max_rounds"], 1);
    assert_eq!(cfg["params"]["alpha"], 0.3);
    assert_eq!(cfg["pair"], serde_json::json!(["A", "C"]));
    assert_eq!(cfg["world"], "builtin:default");
}

#[test]
fn search_artifacts_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let run = fusion(&["search", "--pair", "B,G", "--out", path(&first)]);
    assert_eq!(code(&run), 3, "{run:?}");

    let trace = RunTrace::read(&first.join("trace.jsonl")).unwrap();
    let summary = trace.summary.clone().unwrap();
    assert!(!summary.accepted);
    assert_eq!(summary.rounds_used, 3);
    assert_eq!(trace.header.seeds.len(), 3);
    assert_eq!(trace.header.den_timestep, 649);
    let max = trace
        .candidates
        .iter()
        .map(Candidate::total)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(summary.best_total, max);

    let best: Value =
        serde_json::from_str(&fs::read_to_string(first.join("best.json")).unwrap()).unwrap();
    assert_eq!(best["accepted"], false);
    assert_eq!(best["best"]["eval_index"], summary.best_eval_index);

    let mut csv = csv::Reader::from_path(first.join("evaluations.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), trace.candidates.len());
    for (row, c) in rows.iter().zip(&trace.candidates) {
        assert_eq!(row[0].parse::<usize>().unwrap(), c.eval_index);
        assert_eq!(&row[1], c.stage.name());
        assert_eq!(row[2].parse::<f64>().unwrap(), c.params.alpha);
        assert_eq!(row[9].parse::<f64>().unwrap(), c.total());
    }

    // replaying the recorded configuration reproduces the trace
    let second = dir.path().join("second");
    let replay = fusion(&[
        "search",
        "--config",
        path(&first.join("trace.jsonl")),
        "--out",
        path(&second),
    ]);
    assert_eq!(code(&replay), 3);
    for f in ["trace.jsonl", "best.json", "evaluations.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn accepted_search_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let run = fusion(&["search", "--out", path(dir.path())]);
    assert_eq!(code(&run), 0, "{run:?}");
    let trace = RunTrace::read(&dir.path().join("trace.jsonl")).unwrap();
    let summary = trace.summary.unwrap();
    assert!(summary.accepted);
    assert!(summary.best_total > 2.4);
}

#[test]
fn fuse_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(i.to_string())).collect();
    for o in &outs {
        let run = fusion(&["fuse", "--pair", "C,F", "--alpha", "0.3", "--out", path(o)]);
        assert_eq!(code(&run), 0, "{run:?}");
    }
    for f in ["output.json", "stages.json", "trace.jsonl"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let trace = RunTrace::read(&outs[0].join("trace.jsonl")).unwrap();
    assert_eq!(trace.candidates.len(), 1);
    assert_eq!(trace.candidates[0].params.alpha, 0.3);
    assert_eq!(trace.header.config["sampler"]["t_den"], 652);
    assert_eq!(trace.header.config["sampler"]["gamma_gen"], 4.0);
}

#[test]
fn random_noise_baseline_skips_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let run = fusion(&[
        "fuse",
        "--strategy-bnoise",
        "random",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&run), 0);
    let stages: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stages.json")).unwrap()).unwrap();
    assert_eq!(stages["noise"]["blended"], stages["noise"]["noise"]);
    assert_eq!(
        stages["noise"]["intermediates"].as_array().unwrap().len(),
        0
    );
    let cfg = &header(&dir.path().join("trace.jsonl"))["config"];
    assert_eq!(cfg["strategies"]["bnoise"], "random_noise");
}

#[test]
fn sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &Path| {
        csv::Reader::from_path(p.join("sweep.csv"))
            .unwrap()
            .into_records()
            .count()
    };

    let strat = dir.path().join("strat");
    assert_eq!(
        code(&fusion(&[
            "sweep",
            "--bnoise",
            "all",
            "--out",
            path(&strat)
        ])),
        0
    );
    assert_eq!(read(&strat), 4);

    let empty = dir.path().join("empty");
    assert_eq!(
        code(&fusion(&[
            "sweep",
            "--alpha-grid",
            "0:1:0",
            "--out",
            path(&empty)
        ])),
        0
    );
    assert_eq!(read(&empty), 0);
    let text = fs::read_to_string(empty.join("sweep.csv")).unwrap();
    assert!(text.starts_with("first,second,bnoise"));

    // the parallel and sequential evaluators write the same file
    let grid = [
        "sweep",
        "--world",
        "builtin:diffuse",
        "--pairs",
        "A,B;C,E",
        "--alpha-grid",
        "0:1:7",
        "--beta2-grid",
        "0.5,1.5",
    ];
    let par = dir.path().join("par");
    let seq = dir.path().join("seq");
    assert_eq!(
        code(&fusion(&[&grid[..], &["--out", path(&par)]].concat())),
        0
    );
    assert_eq!(
        code(&fusion(
            &[&grid[..], &["--out", path(&seq), "--sequential"]].concat()
        )),
        0
    );
    assert_eq!(read(&par), 2 * 7 * 2);
    assert_eq!(
        fs::read(par.join("sweep.csv")).unwrap(),
        fs::read(seq.join("sweep.csv")).unwrap()
    );

    // a bad cell is reported in its row and the sweep carries on
    let mixed = dir.path().join("mixed");
    assert_eq!(
        code(&fusion(&[
            "sweep",
            "--pairs",
            "A,B;A,Nope",
            "--out",
            path(&mixed)
        ])),
        0
    );
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(mixed.join("sweep.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0][14].is_empty() && !rows[0][12].is_empty());
    assert!(rows[1][14].contains("Nope") && rows[1][12].is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = path(dir.path());
    assert_eq!(code(&fusion(&["fuse", "--pair", "A", "--out", o])), 1);
    assert_eq!(code(&fusion(&["fuse", "--pair", "A,Zed", "--out", o])), 1);
    assert_eq!(code(&fusion(&["search", "--rounds", "0", "--out", o])), 1);
    assert_eq!(
        code(&fusion(&["search", "--beta-range", "2:1", "--out", o])),
        1
    );
    assert_eq!(
        code(&fusion(&[
            "fuse",
            "--world",
            "/no/such/world.json",
            "--out",
            o
        ])),
        1
    );
    assert_eq!(
        code(&fusion(&[
            "fuse",
            "--backend",
            "remote:127.0.0.1:1",
            "--out",
            o
        ])),
        2
    );
    assert_eq!(code(&fusion(&["--version"])), 0);
}

#[test]
fn world_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    fs::write(
        &world,
        serde_json::to_string(&ToyWorld::lift_world()).unwrap(),
    )
    .unwrap();
    let run = fusion(&[
        "search",
        "--world",
        path(&world),
        "--pair",
        "P,Q",
        "--seed",
        "15",
        "--rounds",
        "1",
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(code(&run), 0, "{run:?}");
    let trace = RunTrace::read(&dir.path().join("o/trace.jsonl")).unwrap();
    assert!(trace
        .candidates
        .iter()
        .any(|c| c.stage == Stage::BetaSearch));
}

#[test]
fn remote_backend_matches_toy_backend() {
    let world = ToyWorld::default_world();
    let addr = spawn_loopback(
        ToyBackend::new(world.clone(), 999),
        Some(ToyProvider::new(&world)),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let local = dir.path().join("local");
    let remote = dir.path().join("remote");
    assert_eq!(
        code(&fusion(&["search", "--pair", "A,C", "--out", path(&local)])),
        0
    );
    let backend = format!("remote:{addr}");
    let run = fusion(&[
        "search",
        "--pair",
        "A,C",
        "--backend",
        &backend,
        "--out",
        path(&remote),
    ]);
    assert_eq!(code(&run), 0, "{run:?}");
    for f in ["best.json", "evaluations.csv"] {
        assert_eq!(
            fs::read(local.join(f)).unwrap(),
            fs::read(remote.join(f)).unwrap(),
            "{f}"
        );
    }
}

/// Serves a toy world whose velocity calls always fail.
struct Broken(ToyBackend);

impl VelocityBackend for Broken {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }
    fn velocity(
        &self,
        _: &Latent,
        _: u32,
        _: &ConditionBundle,
        _: f64,
    ) -> Result<Latent, BackendError> {
        Err(BackendError::new("accelerator offline"))
    }
    fn decode(&self, x0: &Latent) -> Result<Decoded, BackendError> {
        self.0.decode(x0)
    }
    fn encode_image(&self, c: &str) -> Result<Embedding, BackendError> {
        self.0.encode_image(c)
    }
    fn encode_prompt(&self, t: &str) -> Result<Embedding, BackendError> {
        self.0.encode_prompt(t)
    }
}

#[test]
fn backend_failure_keeps_a_partial_trace() {
    let world = ToyWorld::default_world();
    let addr = spawn_loopback(
        Broken(ToyBackend::new(world.clone(), 999)),
        Some(ToyProvider::new(&world)),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let backend = format!("remote:{addr}");
    let run = fusion(&["search", "--backend", &backend, "--out", path(dir.path())]);
    assert_eq!(code(&run), 2, "{run:?}");
    assert!(String::from_utf8_lossy(&run.stderr).contains("accelerator offline"));
    let text = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let records: Vec<TraceRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(matches!(records[0], TraceRecord::Header(_)));
    assert!(
        matches!(records.last(), Some(TraceRecord::Error { message }) if message.contains("accelerator offline"))
    );
}
