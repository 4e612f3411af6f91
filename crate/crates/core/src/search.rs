//! Adaptive parameter search: golden-section over the mixing factor, a
//! conditional golden-section over one noise scale, and threshold-gated
//! noise resampling across rounds.

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::sampler::{
    BlendedNoise, ConceptInputs, FusionParams, Sampler, Strategies, VelocityBackend,
};
use crate::scoring::{evaluate, NormalizationBounds, ScoreBreakdown, SimilarityProvider};

/// `(sqrt(5) - 1) / 2`
const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub threshold: f64,
    pub max_rounds: u32,
    pub alpha_budget: usize,
    pub beta_budget: usize,
    pub beta_range: (f64, f64),
    pub alpha_tol: f64,
    pub beta_tol: f64,
    pub base_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            threshold: 2.4,
            max_rounds: 3,
            alpha_budget: 10,
            beta_budget: 10,
            beta_range: (0.5, 2.0),
            alpha_tol: 0.01,
            beta_tol: 0.01,
            base_seed: 42,
        }
    }
}

impl SearchConfig {
    /// Single round at seed 42, for comparisons against fixed-seed baselines.
    pub fn fair() -> Self {
        Self {
            max_rounds: 1,
            base_seed: 42,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FusionError::InvalidConfig(msg));
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.alpha_budget < 3 || self.beta_budget < 3 {
            return bad(format!(
                "budgets must be at least 3 (alpha {}, beta {})",
                self.alpha_budget, self.beta_budget
            ));
        }
        let (lo, hi) = self.beta_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return bad(format!("beta_range [{lo}, {hi}] must satisfy 0 < lo < hi"));
        }
        for (name, tol) in [("alpha_tol", self.alpha_tol), ("beta_tol", self.beta_tol)] {
            if !(tol.is_finite() && tol > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    AlphaSearch,
    BetaSearch,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::AlphaSearch => "alpha_search",
            Stage::BetaSearch => "beta_search",
        }
    }
}

/// One scored evaluation of the hybrid sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: FusionParams,
    pub breakdown: ScoreBreakdown,
    pub stage: Stage,
    pub round: u32,
    pub eval_index: usize,
}

impl Candidate {
    pub fn total(&self) -> f64 {
        self.breakdown.total
    }
}

/// A round abandoned because a stage failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFailure {
    pub round: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EaaResult {
    pub best: Candidate,
    pub accepted: bool,
    pub rounds_used: u32,
    pub trace: Vec<Candidate>,
    pub failures: Vec<RoundFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenOutcome {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

/// Golden-section maximization of `f` on `[lo, hi]`.
///
/// One new evaluation per iteration after the first two. Stops when the
/// bracket is shorter than `tol` or `budget` evaluations have been spent and
/// returns the best evaluated point (earliest on ties).
pub fn golden_section_max<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    budget: usize,
    tol: f64,
) -> Result<GoldenOutcome>
where
    F: FnMut(f64) -> f64,
{
    try_golden_section_max(|x| Ok::<_, FusionError>(f(x)), lo, hi, budget, tol)
}

/// [`golden_section_max`] for fallible objectives; the first error aborts.
pub fn try_golden_section_max<F, E>(
    mut f: F,
    lo: f64,
    hi: f64,
    budget: usize,
    tol: f64,
) -> std::result::Result<GoldenOutcome, E>
where
    F: FnMut(f64) -> std::result::Result<f64, E>,
    E: From<FusionError>,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(FusionError::InvalidConfig(format!("bracket [{lo}, {hi}] is empty")).into());
    }
    if budget < 3 {
        return Err(FusionError::InvalidConfig(format!("budget {budget} below 3")).into());
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(FusionError::InvalidConfig(format!("tolerance {tol} must be positive")).into());
    }

    let mut best: Option<(f64, f64)> = None;
    let mut evals = 0;
    let mut probe = |x: f64| -> std::result::Result<f64, E> {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(FusionError::NonFiniteObjective { x }.into());
        }
        evals += 1;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((x, v));
        }
        Ok(v)
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = probe(x1)?;
    let mut f2 = probe(x2)?;
    let mut spent = 2;
    while spent < budget {
        if f1 >= f2 {
            b = x2;
            if b - a < tol {
                break;
            }
            (x2, f2) = (x1, f1);
            x1 = b - INV_PHI * (b - a);
            f1 = probe(x1)?;
        } else {
            a = x1;
            if b - a < tol {
                break;
            }
            (x1, f1) = (x2, f2);
            x2 = a + INV_PHI * (b - a);
            f2 = probe(x2)?;
        }
        spent += 1;
    }
    let (x, value) = best.expect("at least two evaluations");
    Ok(GoldenOutcome { x, value, evals })
}

/// Noise seed of round `k` (1-based). Round 1 uses the base seed itself so a
/// single-round run at seed 42 samples exactly that noise; later rounds mix
/// the round index into the base with a SplitMix64 finalizer.
pub fn round_seed(base_seed: u64, round: u32) -> u64 {
    if round <= 1 {
        return base_seed;
    }
    let mut z = base_seed ^ u64::from(round).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Which noise scale the conditional stage searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaBranch {
    /// First concept dominates: hold `beta1`, search `beta2`.
    SearchBeta2,
    /// Otherwise (ties included): hold `beta2`, search `beta1`.
    SearchBeta1,
}

impl BetaBranch {
    pub fn for_breakdown(b: &ScoreBreakdown) -> Self {
        if b.first_side() > b.second_side() {
            BetaBranch::SearchBeta2
        } else {
            BetaBranch::SearchBeta1
        }
    }
}

/// State of one search run: the bound sampler and provider plus the growing
/// trace.
pub struct Search<'a, B: ?Sized, P: ?Sized> {
    sampler: &'a Sampler<'a, B>,
    provider: &'a P,
    inputs: &'a ConceptInputs,
    strategies: Strategies,
    bounds: NormalizationBounds,
    config: SearchConfig,
    round: u32,
    trace: Vec<Candidate>,
}

impl<'a, B, P> Search<'a, B, P>
where
    B: VelocityBackend + ?Sized,
    P: SimilarityProvider + ?Sized,
{
    pub fn new(
        sampler: &'a Sampler<'a, B>,
        provider: &'a P,
        inputs: &'a ConceptInputs,
        strategies: Strategies,
        bounds: NormalizationBounds,
        config: SearchConfig,
    ) -> Result<Self> {
        config.validate()?;
        bounds.validate()?;
        Ok(Self {
            sampler,
            provider,
            inputs,
            strategies,
            bounds,
            config,
            round: 1,
            trace: Vec::new(),
        })
    }

    pub fn trace(&self) -> &[Candidate] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<Candidate> {
        self.trace
    }

    /// Sets the round number stamped on subsequent candidates.
    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    fn record(
        &mut self,
        params: FusionParams,
        breakdown: ScoreBreakdown,
        stage: Stage,
    ) -> Candidate {
        let c = Candidate {
            params,
            breakdown,
            stage,
            round: self.round,
            eval_index: self.trace.len(),
        };
        self.trace.push(c.clone());
        c
    }

    fn score_noise(&self, params: &FusionParams, noise: BlendedNoise) -> Result<ScoreBreakdown> {
        let out = self
            .sampler
            .finish(self.inputs, params, self.strategies.mdenoise, noise)?;
        evaluate(&out.decoded, self.inputs, self.provider, self.bounds)
    }

    /// Runs the full hybrid sampler at `params` and records the result.
    pub fn evaluate_params(&mut self, params: FusionParams, stage: Stage) -> Result<Candidate> {
        let out = self.sampler.hsp(self.inputs, &params, self.strategies)?;
        let breakdown = evaluate(&out.decoded, self.inputs, self.provider, self.bounds)?;
        Ok(self.record(params, breakdown, stage))
    }

    /// Golden-section over the mixing factor with the noise scales and seed of
    /// `init` held fixed. The blended noise does not depend on the mixing
    /// factor, so it is computed once. Returns the best of `init` and the
    /// probed candidates.
    pub fn search_alpha(&mut self, init: &Candidate) -> Result<Candidate> {
        let base = init.params;
        let noise = self
            .sampler
            .blend_noise(&base, self.inputs, self.strategies.bnoise)
            .map_err(|e| e.in_stage("noise blending"))?;
        let mut best = init.clone();
        let (budget, tol) = (self.config.alpha_budget, self.config.alpha_tol);
        try_golden_section_max(
            |alpha| {
                let params = FusionParams { alpha, ..base };
                let breakdown = self.score_noise(&params, noise.clone())?;
                let c = self.record(params, breakdown, Stage::AlphaSearch);
                if c.total() > best.total() {
                    best = c;
                }
                Ok::<_, FusionError>(breakdown.total)
            },
            0.0,
            1.0,
            budget,
            tol,
        )?;
        Ok(best)
    }

    /// Conditional noise-scale adjustment around `current`. The weaker
    /// concept's scale is searched over `beta_range`; every probe re-runs the
    /// whole sampler. Never returns anything worse than `current`.
    pub fn adjust_betas(&mut self, current: &Candidate) -> Result<Candidate> {
        let base = current.params;
        let branch = BetaBranch::for_breakdown(&current.breakdown);
        let mut best = current.clone();
        let (lo, hi) = self.config.beta_range;
        let (budget, tol) = (self.config.beta_budget, self.config.beta_tol);
        try_golden_section_max(
            |beta| {
                let params = match branch {
                    BetaBranch::SearchBeta2 => FusionParams {
                        beta2: beta,
                        ..base
                    },
                    BetaBranch::SearchBeta1 => FusionParams {
                        beta1: beta,
                        ..base
                    },
                };
                let c = self.evaluate_params(params, Stage::BetaSearch)?;
                if c.total() > best.total() {
                    best = c.clone();
                }
                Ok::<_, FusionError>(c.total())
            },
            lo,
            hi,
            budget,
            tol,
        )?;
        Ok(best)
    }

    /// One round: init, mixing-factor search and, below threshold, the
    /// noise-scale adjustment. Returns the round's best candidate.
    pub fn run_round(&mut self, round: u32) -> Result<Candidate> {
        self.set_round(round);
        let init = FusionParams {
            alpha: 0.5,
            beta1: 1.0,
            beta2: 1.0,
            seed: round_seed(self.config.base_seed, round),
        };
        let init = self.evaluate_params(init, Stage::Init)?;
        let alpha_best = self.search_alpha(&init)?;
        if alpha_best.total() > self.config.threshold {
            return Ok(alpha_best);
        }
        self.adjust_betas(&alpha_best)
    }
}

/// Runs the full adaptive search.
///
/// A round that fails is recorded in `failures` and the next round starts;
/// candidates evaluated before the failure stay in the trace. If no candidate
/// could be evaluated at all, the first error is returned.
pub fn run_eaa<B, P>(
    inputs: &ConceptInputs,
    config: &SearchConfig,
    sampler: &Sampler<'_, B>,
    strategies: Strategies,
    provider: &P,
    bounds: NormalizationBounds,
) -> Result<EaaResult>
where
    B: VelocityBackend + ?Sized,
    P: SimilarityProvider + ?Sized,
{
    let mut search = Search::new(
        sampler,
        provider,
        inputs,
        strategies,
        bounds,
        config.clone(),
    )?;
    let mut failures = Vec::new();
    let mut first_error = None;
    let mut rounds_used = 0;
    let mut accepted = false;
    for round in 1..=config.max_rounds {
        rounds_used = round;
        match search.run_round(round) {
            Ok(best) if best.total() > config.threshold => {
                accepted = true;
                break;
            }
            Ok(_) => {}
            Err(e) => {
                failures.push(RoundFailure {
                    round,
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let trace = search.into_trace();
    let Some(best) = best_of(&trace) else {
        return Err(first_error.unwrap_or(FusionError::EmptySet));
    };
    let best = best.clone();
    Ok(EaaResult {
        accepted: accepted || best.total() > config.threshold,
        best,
        rounds_used,
        trace,
        failures,
    })
}

/// Highest-total candidate, earliest on ties.
pub fn best_of(trace: &[Candidate]) -> Option<&Candidate> {
    trace
        .iter()
        .fold(None, |best: Option<&Candidate>, c| match best {
            Some(b) if b.total() >= c.total() => Some(b),
            _ => Some(c),
        })
}
