use std::sync::atomic::{AtomicUsize, Ordering};

use fusion_core::sampler::ConditionBundle;
use fusion_core::search::{best_of, round_seed, BetaBranch, Search};
use fusion_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    world: ToyWorld,
    backend: ToyBackend,
    provider: ToyProvider,
}

impl Setup {
    fn new(world: ToyWorld) -> Self {
        Self {
            backend: ToyBackend::new(world.clone(), 999),
            provider: ToyProvider::new(&world),
            world,
        }
    }

    fn inputs(&self, a: &str, b: &str) -> ConceptInputs {
        ConceptInputs::from_backend(&self.backend, ConceptRef::new(a), ConceptRef::new(b)).unwrap()
    }

    fn run(&self, a: &str, b: &str, cfg: &SearchConfig) -> EaaResult {
        let sampler = Sampler::new(SamplerConfig::default(), &self.backend).unwrap();
        run_eaa(
            &self.inputs(a, b),
            cfg,
            &sampler,
            Strategies::default(),
            &self.provider,
            NormalizationBounds::default(),
        )
        .unwrap()
    }
}

fn per_round(trace: &[Candidate], round: u32) -> Vec<&Candidate> {
    trace.iter().filter(|c| c.round == round).collect()
}

fn alpha_stage_best(round: &[&Candidate]) -> Candidate {
    let pre: Vec<Candidate> = round
        .iter()
        .filter(|c| c.stage != Stage::BetaSearch)
        .map(|c| (*c).clone())
        .collect();
    best_of(&pre).unwrap().clone()
}

#[test]
fn fair_mode_runs_one_round_at_seed_42() {
    let s = Setup::new(ToyWorld::default_world());
    let r = s.run("B", "G", &SearchConfig::fair());
    assert_eq!(r.rounds_used, 1);
    assert!(!r.accepted);
    assert!(r.trace.iter().all(|c| c.round == 1 && c.params.seed == 42));
    assert_eq!(r.trace[0].stage, Stage::Init);
}

#[test]
fn calibrated_pair_is_accepted_in_the_first_round() {
    let s = Setup::new(ToyWorld::default_world());
    let cfg = SearchConfig::default();
    let r = s.run("A", "B", &cfg);
    assert!(r.accepted);
    assert!(r.best.total() > 2.4);
    assert_eq!(r.rounds_used, 1);
    assert!(r.trace.len() <= cfg.alpha_budget + cfg.beta_budget + 2);
    // accepted after the mixing-factor stage, so no noise-scale probes
    assert!(r.trace.iter().all(|c| c.stage != Stage::BetaSearch));
}

#[test]
fn hard_pair_exhausts_all_rounds() {
    let s = Setup::new(ToyWorld::default_world());
    let cfg = SearchConfig::default();
    let r = s.run("B", "G", &cfg);
    assert!(!r.accepted);
    assert_eq!(r.rounds_used, 3);
    let max = r
        .trace
        .iter()
        .map(Candidate::total)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.best.total(), max);
    for k in 1..=3 {
        let round = per_round(&r.trace, k);
        assert!(
            round.len() <= cfg.alpha_budget + cfg.beta_budget + 2,
            "round {k}"
        );
        for stage in [Stage::Init, Stage::AlphaSearch, Stage::BetaSearch] {
            assert!(
                round.iter().any(|c| c.stage == stage),
                "round {k} lacks {stage:?}"
            );
        }
        assert!(round.iter().all(|c| c.params.seed == round_seed(42, k)));
    }
}

#[test]
fn trace_bookkeeping() {
    let s = Setup::new(ToyWorld::diffuse_world());
    let r = s.run("A", "F", &SearchConfig::default());
    for (i, c) in r.trace.iter().enumerate() {
        assert_eq!(c.eval_index, i);
    }
    let mut running = f64::NEG_INFINITY;
    for c in &r.trace {
        let next = running.max(c.total());
        assert!(next >= running);
        running = next;
    }
    assert_eq!(r.best.total(), running);
    assert_eq!(r.accepted, r.best.total() > 2.4);
}

#[test]
fn identical_configs_give_identical_traces() {
    let s = Setup::new(ToyWorld::diffuse_world());
    let a = serde_json::to_string(&s.run("C", "G", &SearchConfig::default())).unwrap();
    let b = serde_json::to_string(&s.run("C", "G", &SearchConfig::default())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn noise_scale_stage_follows_the_weaker_side() {
    let worlds = [ToyWorld::diffuse_world(), ToyWorld::lift_world()];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 50 {
        let s = Setup::new(worlds[rng.random_range(0..worlds.len())].clone());
        let ids: Vec<String> = s.world.ids().map(String::from).collect();
        let i = rng.random_range(0..ids.len());
        let j = (i + rng.random_range(1..ids.len())) % ids.len();
        let cfg = SearchConfig {
            base_seed: rng.random(),
            max_rounds: 1,
            ..SearchConfig::default()
        };
        let r = s.run(&ids[i], &ids[j], &cfg);
        let round = per_round(&r.trace, 1);
        let betas: Vec<&&Candidate> = round
            .iter()
            .filter(|c| c.stage == Stage::BetaSearch)
            .collect();
        if betas.is_empty() {
            continue;
        }
        checked += 1;
        let pre = alpha_stage_best(&round);
        assert!(pre.total() <= cfg.threshold);
        let (lo, hi) = cfg.beta_range;
        for c in &betas {
            assert_eq!(c.params.alpha, pre.params.alpha);
            match BetaBranch::for_breakdown(&pre.breakdown) {
                BetaBranch::SearchBeta2 => {
                    assert_eq!(c.params.beta1, pre.params.beta1);
                    assert!((lo..=hi).contains(&c.params.beta2));
                }
                BetaBranch::SearchBeta1 => {
                    assert_eq!(c.params.beta2, pre.params.beta2);
                    assert!((lo..=hi).contains(&c.params.beta1));
                }
            }
        }
        assert!(r.best.total() >= pre.total());
    }
}

#[test]
fn noise_scale_adjustment_lifts_a_stalled_pair_over_threshold() {
    let s = Setup::new(ToyWorld::lift_world());
    let cfg = SearchConfig {
        base_seed: 15,
        ..SearchConfig::fair()
    };
    let r = s.run("P", "Q", &cfg);
    let round = per_round(&r.trace, 1);
    let pre = alpha_stage_best(&round);
    assert!(
        pre.total() < 2.2,
        "mixing-factor stage reached {}",
        pre.total()
    );
    assert!(r.accepted);
    assert!(r.best.total() > 2.4);
    assert_eq!(r.best.stage, Stage::BetaSearch);
    assert_eq!(r.best.params.beta1, 1.0);
    assert_ne!(r.best.params.beta2, 1.0);
}

fn alpha_objective(s: &Setup, inputs: &ConceptInputs, alpha: f64) -> f64 {
    let sampler = Sampler::new(SamplerConfig::default(), &s.backend).unwrap();
    let theta = FusionParams {
        alpha,
        ..FusionParams::default()
    };
    let out = sampler.hsp(inputs, &theta, Strategies::default()).unwrap();
    scoring::evaluate(
        &out.decoded,
        inputs,
        &s.provider,
        NormalizationBounds::default(),
    )
    .unwrap()
    .total
}

fn searched_alpha(s: &Setup, inputs: &ConceptInputs) -> Candidate {
    let sampler = Sampler::new(SamplerConfig::default(), &s.backend).unwrap();
    let mut search = Search::new(
        &sampler,
        &s.provider,
        inputs,
        Strategies::default(),
        NormalizationBounds::default(),
        SearchConfig::default(),
    )
    .unwrap();
    let init = search
        .evaluate_params(FusionParams::default(), Stage::Init)
        .unwrap();
    let best = search.search_alpha(&init).unwrap();
    assert!(search.trace().len() <= 1 + SearchConfig::default().alpha_budget);
    best
}

fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
    (0..=100)
        .map(|i| f64::from(i) / 100.0)
        .map(|a| (a, f(a)))
        .fold(
            (0.0, f64::NEG_INFINITY),
            |b, (a, v)| if v > b.1 { (a, v) } else { b },
        )
        .0
}

#[test]
fn mixing_factor_search_on_a_symmetric_pair_centres() {
    let s = Setup::new(ToyWorld::default_world());
    let inputs = s.inputs("A", "B");
    let best = searched_alpha(&s, &inputs);
    assert!((best.params.alpha - 0.5).abs() < 0.05);
    let grid = grid_argmax(|a| alpha_objective(&s, &inputs, a));
    assert!((grid - 0.5).abs() <= 0.01);
}

#[test]
fn mixing_factor_search_matches_grid_on_an_asymmetric_pair() {
    let base = ToyWorld::diffuse_world();
    let doubled = base.concept("A").unwrap().embedding.scaled(2.0).unwrap();
    let s = Setup::new(base.with_embedding("A", doubled).unwrap());
    let inputs = s.inputs("A", "D");
    let best = searched_alpha(&s, &inputs);
    let grid = grid_argmax(|a| alpha_objective(&s, &inputs, a));
    assert!(
        (best.params.alpha - grid).abs() <= 0.01 + 0.01,
        "search {} grid {grid}",
        best.params.alpha
    );
}

/// Toy backend whose velocity fails on selected calls.
struct Flaky {
    inner: ToyBackend,
    calls: AtomicUsize,
    fail_from: usize,
    fail_until: usize,
}

impl VelocityBackend for Flaky {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }
    fn velocity(
        &self,
        x: &Latent,
        t: u32,
        cond: &ConditionBundle,
        guidance: f64,
    ) -> Result<Latent, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if (self.fail_from..self.fail_until).contains(&n) {
            return Err(BackendError::new("device lost"));
        }
        self.inner.velocity(x, t, cond, guidance)
    }
    fn decode(&self, x0: &Latent) -> Result<Decoded, BackendError> {
        self.inner.decode(x0)
    }
    fn encode_image(&self, c: &str) -> Result<Embedding, BackendError> {
        self.inner.encode_image(c)
    }
    fn encode_prompt(&self, t: &str) -> Result<Embedding, BackendError> {
        self.inner.encode_prompt(t)
    }
}

#[test]
fn failed_round_is_recorded_and_the_next_round_runs() {
    let s = Setup::new(ToyWorld::default_world());
    let inputs = s.inputs("B", "G");
    // one hsp is 7 + 7 + 20 velocity calls; fail inside round 1's alpha stage
    let flaky = Flaky {
        inner: s.backend.clone(),
        calls: AtomicUsize::new(0),
        fail_from: 100,
        fail_until: 101,
    };
    let sampler = Sampler::new(SamplerConfig::default(), &flaky).unwrap();
    let cfg = SearchConfig::default();
    let r = run_eaa(
        &inputs,
        &cfg,
        &sampler,
        Strategies::default(),
        &s.provider,
        NormalizationBounds::default(),
    )
    .unwrap();
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].round, 1);
    assert!(r.failures[0].message.contains("device lost"));
    assert_eq!(r.rounds_used, 3);
    assert!(!per_round(&r.trace, 1).is_empty());
    assert!(!per_round(&r.trace, 2).is_empty());

    let dead = Flaky {
        inner: s.backend.clone(),
        calls: AtomicUsize::new(0),
        fail_from: 0,
        fail_until: usize::MAX,
    };
    let sampler = Sampler::new(SamplerConfig::default(), &dead).unwrap();
    let err = run_eaa(
        &inputs,
        &cfg,
        &sampler,
        Strategies::default(),
        &s.provider,
        NormalizationBounds::default(),
    )
    .unwrap_err();
    assert!(err.is_backend_failure(), "{err}");
}
