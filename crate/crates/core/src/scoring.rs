//! Similarity score and balance metric over pluggable similarity providers.

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, FusionError, Result};
use crate::sampler::{ConceptInputs, Decoded};

/// Scores a decoded output against a reference concept (visual) and a
/// category label (semantic, in the provider's raw range).
pub trait SimilarityProvider: Send + Sync {
    fn visual(&self, output: &Decoded, concept: &str) -> Result<f64, BackendError>;

    fn semantic_raw(&self, output: &Decoded, label: &str) -> Result<f64, BackendError>;
}

impl<P: SimilarityProvider + ?Sized> SimilarityProvider for &P {
    fn visual(&self, output: &Decoded, concept: &str) -> Result<f64, BackendError> {
        (**self).visual(output, concept)
    }

    fn semantic_raw(&self, output: &Decoded, label: &str) -> Result<f64, BackendError> {
        (**self).semantic_raw(output, label)
    }
}

/// Raw semantic scores are mapped linearly from `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for NormalizationBounds {
    fn default() -> Self {
        Self { lo: 0.15, hi: 0.45 }
    }
}

impl NormalizationBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(FusionError::InvalidConfig(format!(
                "normalization bounds [{}, {}] must satisfy lo < hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

pub fn normalize_semantic(raw: f64, bounds: NormalizationBounds) -> f64 {
    ((raw - bounds.lo) / (bounds.hi - bounds.lo)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_i1: f64,
    pub s_i2: f64,
    pub s_t1: f64,
    pub s_t2: f64,
    /// Similarity sum minus the visual and semantic imbalance penalties.
    pub total: f64,
    /// `|s_i1 - s_i2| + |s_t1 - s_t2|`.
    pub b_sim: f64,
}

impl ScoreBreakdown {
    /// Combined visual + semantic similarity to the first concept.
    pub fn first_side(&self) -> f64 {
        self.s_i1 + self.s_t1
    }

    pub fn second_side(&self) -> f64 {
        self.s_i2 + self.s_t2
    }
}

pub fn score(s_i1: f64, s_i2: f64, s_t1: f64, s_t2: f64) -> Result<ScoreBreakdown> {
    if ![s_i1, s_i2, s_t1, s_t2].iter().all(|v| v.is_finite()) {
        return Err(FusionError::NonFinite("score component"));
    }
    let visual_gap = (s_i1 - s_i2).abs();
    let semantic_gap = (s_t1 - s_t2).abs();
    Ok(ScoreBreakdown {
        s_i1,
        s_i2,
        s_t1,
        s_t2,
        total: s_i1 + s_i2 + s_t1 + s_t2 - visual_gap - semantic_gap,
        b_sim: visual_gap + semantic_gap,
    })
}

/// Scores `output` against both concepts of `inputs`.
pub fn evaluate<P: SimilarityProvider + ?Sized>(
    output: &Decoded,
    inputs: &ConceptInputs,
    provider: &P,
    bounds: NormalizationBounds,
) -> Result<ScoreBreakdown> {
    let fail = |concept: usize| move |source| FusionError::ProviderFailure { concept, source };
    let s_i1 = provider.visual(output, &inputs.first.id).map_err(fail(1))?;
    let s_i2 = provider
        .visual(output, &inputs.second.id)
        .map_err(fail(2))?;
    let t1 = provider
        .semantic_raw(output, &inputs.first.label)
        .map_err(fail(1))?;
    let t2 = provider
        .semantic_raw(output, &inputs.second.label)
        .map_err(fail(2))?;
    score(
        s_i1,
        s_i2,
        normalize_semantic(t1, bounds),
        normalize_semantic(t2, bounds),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_ops::Embedding;
    use crate::sampler::ConceptRef;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        let b = NormalizationBounds::default();
        assert_eq!(normalize_semantic(0.15, b), 0.0);
        assert_eq!(normalize_semantic(0.45, b), 1.0);
        assert!((normalize_semantic(0.30, b) - 0.5).abs() < 1e-12);
        assert_eq!(normalize_semantic(0.10, b), 0.0);
        assert_eq!(normalize_semantic(0.50, b), 1.0);
    }

    #[test]
    fn bounds_validation() {
        assert!(NormalizationBounds { lo: 0.4, hi: 0.2 }.validate().is_err());
        NormalizationBounds::default().validate().unwrap();
    }

    #[test]
    fn score_examples() {
        let s = score(0.6, 0.6, 0.6, 0.6).unwrap();
        assert!((s.total - 2.4).abs() < 1e-12);
        assert_eq!(s.b_sim, 0.0);

        let s = score(0.6, 0.4, 0.5, 0.5).unwrap();
        assert!((s.total - 1.8).abs() < 1e-12);
        assert!((s.b_sim - 0.2).abs() < 1e-12);

        let s = score(1.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(s.total, 0.0);
        assert_eq!(s.b_sim, 2.0);

        assert!(matches!(
            score(f64::NAN, 0.0, 0.0, 0.0),
            Err(FusionError::NonFinite(_))
        ));
    }

    struct Flaky;

    impl SimilarityProvider for Flaky {
        fn visual(&self, _o: &Decoded, concept: &str) -> Result<f64, BackendError> {
            if concept == "bad" {
                Err(BackendError::new("encoder offline"))
            } else {
                Ok(0.5)
            }
        }
        fn semantic_raw(&self, _o: &Decoded, _l: &str) -> Result<f64, BackendError> {
            Ok(0.3)
        }
    }

    #[test]
    fn provider_failure_names_the_concept() {
        let e = Embedding::new(vec![1.0]).unwrap();
        let inputs = ConceptInputs {
            first: ConceptRef::new("ok"),
            second: ConceptRef::new("bad"),
            z1: e.clone(),
            z2: e.clone(),
            prompt: e,
        };
        let out = Decoded {
            point: vec![0.0],
            cloud: vec![],
        };
        let err = evaluate(&out, &inputs, &Flaky, NormalizationBounds::default()).unwrap_err();
        assert!(matches!(
            err,
            FusionError::ProviderFailure { concept: 2, .. }
        ));
    }

    proptest! {
        #[test]
        fn total_equals_twice_the_minima(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, d in 0.0f64..1.0) {
            let s = score(a, b, c, d).unwrap();
            prop_assert!((s.total - (2.0 * a.min(b) + 2.0 * c.min(d))).abs() < 1e-12);
            prop_assert!(s.b_sim >= 0.0);
            prop_assert_eq!(s.b_sim == 0.0, a == b && c == d);
        }

        #[test]
        fn raising_the_smaller_visual_never_lowers_total(a in 0.0f64..1.0, b in 0.0f64..1.0,
                                                         c in 0.0f64..1.0, d in 0.0f64..1.0,
                                                         bump in 0.0f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let before = score(lo, hi, c, d).unwrap().total;
            let after = score(lo + bump, hi, c, d).unwrap().total;
            prop_assert!(after >= before - 1e-12);
        }
    }
}
