//! Vector geometry for conditioning embeddings.
//!
//! Two ways of combining a pair of concept embeddings are provided:
//! spherical interpolation ([`slerp`]), which produces a single unit-norm
//! embedding, and scale concatenation ([`scale_concat`]), which keeps both
//! embeddings side by side with a positive weight on each.

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// Below this angle (or this close to antipodal) slerp switches to
/// normalized linear interpolation.
pub const SLERP_DEGENERATE_ANGLE: f64 = 1e-7;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FusionError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("embedding"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    fn check_dim(&self, other: &Embedding) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(FusionError::DimMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = FusionError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Two embeddings placed side by side, each multiplied by its own weight.
///
/// `left` and `right` hold the already-scaled vectors; the weights are kept
/// so a consumer can recover the weighted mean of the originals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatEmbedding {
    left: Embedding,
    right: Embedding,
    beta1: f64,
    beta2: f64,
}

impl ConcatEmbedding {
    /// Builds a concatenation from pre-scaled halves. Weights may be zero
    /// (concatenation fusion uses `alpha` and `1 - alpha`) but not both.
    pub fn from_parts(left: Embedding, right: Embedding, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1.is_finite() && beta2.is_finite()) || beta1 < 0.0 || beta2 < 0.0 {
            return Err(FusionError::NonPositiveScale { beta1, beta2 });
        }
        if beta1 + beta2 <= 0.0 {
            return Err(FusionError::NonPositiveScale { beta1, beta2 });
        }
        Ok(Self {
            left,
            right,
            beta1,
            beta2,
        })
    }

    /// Weighted concatenation with non-negative weights, used for the
    /// concatenation-fusion variant of the final denoising pass.
    pub fn weighted(z1: &Embedding, z2: &Embedding, w1: f64, w2: f64) -> Result<Self> {
        Self::from_parts(z1.scaled(w1)?, z2.scaled(w2)?, w1, w2)
    }

    pub fn left(&self) -> &Embedding {
        &self.left
    }

    pub fn right(&self) -> &Embedding {
        &self.right
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    /// Dimension of the concatenated vector.
    pub fn dim(&self) -> usize {
        self.left.dim() + self.right.dim()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(self.left.values());
        out.extend_from_slice(self.right.values());
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `z` to unit Euclidean norm.
pub fn normalize(z: &Embedding) -> Result<Embedding> {
    let norm = z.norm();
    if norm == 0.0 {
        return Err(FusionError::ZeroVector);
    }
    Embedding::new(z.values().iter().map(|v| v / norm).collect())
}

/// Angle between two unit vectors as `2 atan2(|a - b|, |a + b|)`, which stays
/// accurate near 0 and pi where `acos` of the dot product does not.
fn unit_angle(a: &Embedding, b: &Embedding) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Angle in radians between two nonzero vectors, in `[0, pi]`.
pub fn angle(z1: &Embedding, z2: &Embedding) -> Result<f64> {
    z1.check_dim(z2)?;
    let (a, b) = (normalize(z1)?, normalize(z2)?);
    Ok(unit_angle(&a, &b))
}

/// Spherical interpolation on the unit sphere.
///
/// `alpha` weights `z1`: `alpha = 1` yields `normalize(z1)` and `alpha = 0`
/// yields `normalize(z2)`. Nearly parallel or antipodal inputs fall back to
/// normalized linear interpolation, which fails with [`FusionError::ZeroVector`]
/// when the interpolant passes through the origin.
pub fn slerp(z1: &Embedding, z2: &Embedding, alpha: f64) -> Result<Embedding> {
    z1.check_dim(z2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FusionError::InvalidConfig(format!(
            "interpolation factor {alpha} outside [0, 1]"
        )));
    }
    let (a, b) = (normalize(z1)?, normalize(z2)?);
    let delta = unit_angle(&a, &b);

    if delta < SLERP_DEGENERATE_ANGLE || std::f64::consts::PI - delta < SLERP_DEGENERATE_ANGLE {
        let mixed = Embedding::new(
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect(),
        )?;
        return normalize(&mixed);
    }

    let sin_delta = delta.sin();
    let c1 = (alpha * delta).sin() / sin_delta;
    let c2 = ((1.0 - alpha) * delta).sin() / sin_delta;
    Embedding::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| c1 * x + c2 * y)
            .collect(),
    )
}

/// Scale concatenation `concat(beta1 * z1, beta2 * z2)` with strictly positive weights.
pub fn scale_concat(
    z1: &Embedding,
    z2: &Embedding,
    beta1: f64,
    beta2: f64,
) -> Result<ConcatEmbedding> {
    if !(beta1 > 0.0 && beta2 > 0.0) || !beta1.is_finite() || !beta2.is_finite() {
        return Err(FusionError::NonPositiveScale { beta1, beta2 });
    }
    ConcatEmbedding::weighted(z1, z2, beta1, beta2)
}
