use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fusion_core::{BNoiseStrategy, MDeNoiseStrategy};
use serde_json::{json, Value};

use crate::config::{set_path, BackendSpec};

#[derive(Debug, Parser)]
#[command(
    name = "fusion",
    version,
    about = "Concept fusion with adaptive parameter search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one fusion with explicit parameters.
    Fuse(FuseArgs),
    /// Run the adaptive search for one concept pair.
    Search(SearchArgs),
    /// Evaluate a grid of parameters and strategies.
    Sweep(SweepArgs),
    /// Serve a toy world over the line protocol.
    Serve(ServeArgs),
}

/// A concept pair written `A,B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair(pub [String; 2]);

impl std::str::FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split(',').map(str::trim).collect::<Vec<_>>()[..] {
            [a, b] if !a.is_empty() && !b.is_empty() => Ok(Pair([a.into(), b.into()])),
            _ => Err(format!("expected two concept ids `A,B`, got `{s}`")),
        }
    }
}

/// A closed interval written `LO:HI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range(pub f64, pub f64);

impl std::str::FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        match s.split_once(':') {
            Some((lo, hi)) => Ok(Range(parse(lo)?, parse(hi)?)),
            None => Err(format!("expected `LO:HI`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file, or a trace whose header configuration is reused.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Toy world file, or `builtin:NAME`.
    #[arg(long, value_name = "PATH")]
    pub world: Option<String>,
    #[arg(long, value_name = "toy|remote:ADDR")]
    pub backend: Option<BackendSpec>,
    /// Noise seed; also the base seed of search rounds.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// One search round at seed 42.
    #[arg(long, conflicts_with = "seed")]
    pub fair: bool,
    #[arg(long, value_name = "A,B")]
    pub pair: Option<Pair>,
    /// concat, interp-before, interp-after or random.
    #[arg(long, value_name = "NAME")]
    pub strategy_bnoise: Option<BNoiseStrategy>,
    /// slerp or concat.
    #[arg(long, value_name = "NAME")]
    pub strategy_mdenoise: Option<MDeNoiseStrategy>,
    #[arg(long, value_name = "G")]
    pub gamma_den: Option<f64>,
    #[arg(long, value_name = "G")]
    pub gamma_inv: Option<f64>,
    #[arg(long, value_name = "G")]
    pub gamma_gen: Option<f64>,
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    #[arg(long, value_name = "T")]
    pub t_den: Option<u32>,
}

impl CommonArgs {
    /// Command-line layer of the configuration.
    pub fn overrides(&self) -> Value {
        let mut v = json!({});
        let mut set = |path: &[&str], value: Value| set_path(&mut v, path, value);
        if let Some(w) = &self.world {
            set(&["world"], json!(w));
        }
        if let Some(b) = &self.backend {
            set(&["backend"], json!(b.to_string()));
        }
        if let Some(seed) = self.seed {
            set(&["params", "seed"], json!(seed));
            set(&["search", "base_seed"], json!(seed));
        }
        if self.fair {
            set(&["params", "seed"], json!(42));
            set(&["search", "base_seed"], json!(42));
            set(&["search", "max_rounds"], json!(1));
        }
        if let Some(out) = &self.out {
            set(&["out"], json!(out));
        }
        if let Some(Pair(p)) = &self.pair {
            set(&["pair"], json!(p));
        }
        if let Some(s) = self.strategy_bnoise {
            set(&["strategies", "bnoise"], json!(s));
        }
        if let Some(s) = self.strategy_mdenoise {
            set(&["strategies", "mdenoise"], json!(s));
        }
        for (key, value) in [
            ("gamma_den", self.gamma_den),
            ("gamma_inv", self.gamma_inv),
            ("gamma_gen", self.gamma_gen),
        ] {
            if let Some(g) = value {
                set(&["sampler", key], json!(g));
            }
        }
        if let Some(n) = self.steps {
            set(&["sampler", "num_steps"], json!(n));
        }
        if let Some(t) = self.t_den {
            set(&["sampler", "t_den"], json!(t));
        }
        v
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
}

impl FuseArgs {
    pub fn overrides(&self) -> Value {
        let mut v = self.common.overrides();
        for (key, value) in [
            ("alpha", self.alpha),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if let Some(x) = value {
                set_path(&mut v, &["params", key], json!(x));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Acceptance threshold on the total score.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Maximum number of noise resampling rounds.
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long, value_name = "N")]
    pub alpha_budget: Option<usize>,
    #[arg(long, value_name = "N")]
    pub beta_budget: Option<usize>,
    #[arg(long, value_name = "LO:HI")]
    pub beta_range: Option<Range>,
}

impl SearchArgs {
    pub fn overrides(&self) -> Value {
        let mut v = self.common.overrides();
        let mut set = |key: &str, value: Value| set_path(&mut v, &["search", key], value);
        if let Some(t) = self.threshold {
            set("threshold", json!(t));
        }
        if let Some(k) = self.rounds {
            set("max_rounds", json!(k));
        }
        if let Some(n) = self.alpha_budget {
            set("alpha_budget", json!(n));
        }
        if let Some(n) = self.beta_budget {
            set("beta_budget", json!(n));
        }
        if let Some(Range(lo, hi)) = self.beta_range {
            set("beta_range", json!([lo, hi]));
        }
        v
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mixing factors: `LO:HI:N` for N evenly spaced points, or a comma list.
    #[arg(long, value_name = "GRID")]
    pub alpha_grid: Option<String>,
    #[arg(long, value_name = "GRID")]
    pub beta1_grid: Option<String>,
    #[arg(long, value_name = "GRID")]
    pub beta2_grid: Option<String>,
    /// Noise strategies: `all` or a comma list of names.
    #[arg(long, value_name = "LIST")]
    pub bnoise: Option<String>,
    /// Final-pass strategies: `all` or a comma list of names.
    #[arg(long, value_name = "LIST")]
    pub mdenoise: Option<String>,
    /// Concept pairs: `all` (toy only) or `A,B;C,D`.
    #[arg(long, value_name = "LIST")]
    pub pairs: Option<String>,
    /// Evaluate cells one at a time.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Toy world file, or `builtin:NAME`.
    #[arg(long, value_name = "PATH", default_value = crate::config::DEFAULT_WORLD)]
    pub world: String,
    #[arg(long, value_name = "ADDR", default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Timestep count the clients' schedules use.
    #[arg(long, value_name = "T", default_value_t = 999)]
    pub t_max: u32,
}
