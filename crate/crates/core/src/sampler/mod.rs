//! Flow-matching Euler sampling over an abstract velocity backend.
//!
//! A hybrid sampling run has two stages. Noise blending denoises a seeded
//! Gaussian sample to an intermediate timestep under strong concatenated
//! conditioning and then inverts it back to full noise under weak guidance.
//! Mixing denoise then integrates the blended noise all the way to `t = 0`
//! under an interpolated (or weighted-concatenated) condition and decodes it.

mod pipeline;
mod schedule;

pub use pipeline::{
    denoise_segment, gaussian_noise, invert_segment, BlendedNoise, ConceptInputs, ConceptRef,
    HspOutput, Sampler, SIGMA_MIN,
};
pub use schedule::{build_schedule, Schedule, ScheduleKind};

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, FusionError, Result};
use crate::latent_ops::{ConcatEmbedding, Embedding};

/// Fixed sampler settings shared by every evaluation of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub gamma_den: f64,
    pub gamma_inv: f64,
    pub gamma_gen: f64,
    pub t_max: u32,
    pub t_den: u32,
    pub num_steps: u32,
    pub schedule_kind: ScheduleKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            gamma_den: 5.0,
            gamma_inv: 0.0,
            gamma_gen: 4.0,
            t_max: 999,
            t_den: 652,
            num_steps: 20,
            schedule_kind: ScheduleKind::LinearSigma,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FusionError::InvalidConfig(msg));
        if !(self.t_den > 0 && self.t_den < self.t_max) {
            return bad(format!(
                "t_den = {} must lie strictly inside (0, {})",
                self.t_den, self.t_max
            ));
        }
        if self.num_steps < 2 {
            return bad(format!("num_steps = {} (minimum 2)", self.num_steps));
        }
        if ![self.gamma_den, self.gamma_inv, self.gamma_gen]
            .iter()
            .all(|g| g.is_finite())
        {
            return bad("guidance scales must be finite".into());
        }
        if self.gamma_inv < 0.0 {
            return bad(format!("gamma_inv = {} must be >= 0", self.gamma_inv));
        }
        Ok(())
    }
}

/// A latent state of the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FusionError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("latent"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
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
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + scale * v`, elementwise.
    pub(crate) fn step(&self, scale: f64, v: &Latent) -> Result<Latent> {
        if v.dim() != self.dim() {
            return Err(FusionError::DimMismatch {
                expected: self.dim(),
                actual: v.dim(),
            });
        }
        Latent::new(
            self.0
                .iter()
                .zip(&v.0)
                .map(|(x, dv)| x + scale * dv)
                .collect(),
        )
    }
}

impl TryFrom<Vec<f64>> for Latent {
    type Error = FusionError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Latent> for Vec<f64> {
    fn from(l: Latent) -> Self {
        l.0
    }
}

/// How the pair of concept embeddings enters the velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Conditioning {
    /// Scale concatenation of both embeddings.
    Concat(ConcatEmbedding),
    /// A single (interpolated) embedding.
    Interp(Embedding),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    pub mode: Conditioning,
    pub prompt: Embedding,
}

/// Decoder output: a point in output space plus an optional sample cloud
/// around it, so set-based similarities can be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub point: Vec<f64>,
    #[serde(default)]
    pub cloud: Vec<Vec<f64>>,
}

impl Decoded {
    /// The cloud, or the point alone when no cloud was produced.
    pub fn samples(&self) -> Vec<&[f64]> {
        if self.cloud.is_empty() {
            vec![self.point.as_slice()]
        } else {
            self.cloud.iter().map(Vec::as_slice).collect()
        }
    }
}

/// A velocity-field provider with its decoder and encoders.
///
/// Implementations must be deterministic: identical arguments give identical
/// results, and `velocity` preserves the latent dimension. Guidance is passed
/// through opaquely; the backend combines its conditional and unconditional
/// predictions as it sees fit.
pub trait VelocityBackend: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn velocity(
        &self,
        x: &Latent,
        t: u32,
        cond: &ConditionBundle,
        guidance: f64,
    ) -> Result<Latent, BackendError>;

    fn decode(&self, x0: &Latent) -> Result<Decoded, BackendError>;

    fn encode_image(&self, concept: &str) -> Result<Embedding, BackendError>;

    fn encode_prompt(&self, text: &str) -> Result<Embedding, BackendError>;
}

impl<B: VelocityBackend + ?Sized> VelocityBackend for &B {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }

    fn velocity(
        &self,
        x: &Latent,
        t: u32,
        cond: &ConditionBundle,
        guidance: f64,
    ) -> Result<Latent, BackendError> {
        (**self).velocity(x, t, cond, guidance)
    }

    fn decode(&self, x0: &Latent) -> Result<Decoded, BackendError> {
        (**self).decode(x0)
    }

    fn encode_image(&self, concept: &str) -> Result<Embedding, BackendError> {
        (**self).encode_image(concept)
    }

    fn encode_prompt(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).encode_prompt(text)
    }
}

/// The searchable parameters of one fusion: mixing factor, the two noise
/// scale factors, and the seed that generates the initial Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta1: 1.0,
            beta2: 1.0,
            seed: 42,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FusionError::InvalidConfig(format!(
                "alpha = {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.beta1.is_finite()
            && self.beta2.is_finite())
        {
            return Err(FusionError::NonPositiveScale {
                beta1: self.beta1,
                beta2: self.beta2,
            });
        }
        Ok(())
    }
}

/// How the initial noise is prepared before the final denoising pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BNoiseStrategy {
    /// Denoise and invert under scale-concatenated conditioning.
    #[default]
    ConcatBeforeInversion,
    /// Denoise and invert under the slerp midpoint of the two embeddings.
    InterpBeforeInversion,
    /// Refine a noise per embedding, then slerp the two refined noises.
    InterpAfterInversion,
    /// Skip refinement and use the seeded noise directly.
    RandomNoise,
}

impl BNoiseStrategy {
    pub const ALL: [BNoiseStrategy; 4] = [
        BNoiseStrategy::ConcatBeforeInversion,
        BNoiseStrategy::InterpBeforeInversion,
        BNoiseStrategy::InterpAfterInversion,
        BNoiseStrategy::RandomNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BNoiseStrategy::ConcatBeforeInversion => "concat",
            BNoiseStrategy::InterpBeforeInversion => "interp-before",
            BNoiseStrategy::InterpAfterInversion => "interp-after",
            BNoiseStrategy::RandomNoise => "random",
        }
    }
}

impl std::str::FromStr for BNoiseStrategy {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FusionError::InvalidStrategy(s.to_string()))
    }
}

/// Conditioning used by the final denoising pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MDeNoiseStrategy {
    #[default]
    SlerpFusion,
    /// Weighted concatenation `concat(alpha * z1, (1 - alpha) * z2)`.
    ConcatFusion,
}

impl MDeNoiseStrategy {
    pub const ALL: [MDeNoiseStrategy; 2] = [
        MDeNoiseStrategy::SlerpFusion,
        MDeNoiseStrategy::ConcatFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MDeNoiseStrategy::SlerpFusion => "slerp",
            MDeNoiseStrategy::ConcatFusion => "concat",
        }
    }
}

impl std::str::FromStr for MDeNoiseStrategy {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FusionError::InvalidStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Strategies {
    pub bnoise: BNoiseStrategy,
    pub mdenoise: MDeNoiseStrategy,
}
