use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    build_schedule, BNoiseStrategy, ConditionBundle, Conditioning, Decoded, FusionParams, Latent,
    MDeNoiseStrategy, SamplerConfig, Schedule, Strategies, VelocityBackend,
};
use crate::error::{FusionError, Result};
use crate::latent_ops::{self, scale_concat, ConcatEmbedding, Embedding};

/// Velocity is never evaluated below this noise level; the step is skipped
/// (zero velocity) instead.
pub const SIGMA_MIN: f64 = 1e-12;

/// Standard-normal vector of length `dim` generated from `seed`.
pub fn gaussian_noise(seed: u64, dim: usize) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..dim.max(1))
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Latent(values)
}

fn eval_velocity<B: VelocityBackend + ?Sized>(
    backend: &B,
    x: &Latent,
    index: usize,
    schedule: &Schedule,
    cond: &ConditionBundle,
    guidance: f64,
) -> Result<Option<Latent>> {
    if schedule.sigmas[index] < SIGMA_MIN {
        return Ok(None);
    }
    let v = backend
        .velocity(x, schedule.timesteps[index], cond, guidance)
        .map_err(|source| FusionError::BackendFailure {
            step: index,
            source,
        })?;
    if v.dim() != x.dim() {
        return Err(FusionError::DimMismatch {
            expected: x.dim(),
            actual: v.dim(),
        });
    }
    Ok(Some(v))
}

fn check_indices(schedule: &Schedule, a: usize, b: usize) -> Result<()> {
    if a.max(b) > schedule.last_index() {
        return Err(FusionError::InvalidConfig(format!(
            "segment index {} beyond schedule end {}",
            a.max(b),
            schedule.last_index()
        )));
    }
    Ok(())
}

/// Euler denoising from grid index `from_idx` down to the later index `to_idx`:
/// `x <- x - (sigma_i - sigma_{i+1}) * v(x, t_i)`.
pub fn denoise_segment<B: VelocityBackend + ?Sized>(
    x: &Latent,
    from_idx: usize,
    to_idx: usize,
    cond: &ConditionBundle,
    guidance: f64,
    backend: &B,
    schedule: &Schedule,
) -> Result<Latent> {
    check_indices(schedule, from_idx, to_idx)?;
    if from_idx > to_idx {
        return Err(FusionError::InvalidConfig(format!(
            "denoise runs forward along the grid, got {from_idx} -> {to_idx}"
        )));
    }
    let mut x = x.clone();
    for i in from_idx..to_idx {
        if let Some(v) = eval_velocity(backend, &x, i, schedule, cond, guidance)? {
            let ds = schedule.sigmas[i] - schedule.sigmas[i + 1];
            x = x.step(-ds, &v)?;
        }
    }
    Ok(x)
}

/// Euler inversion from grid index `from_idx` back to the earlier index
/// `to_idx`: `x <- x + (sigma_{i-1} - sigma_i) * v(x, t_i)`.
pub fn invert_segment<B: VelocityBackend + ?Sized>(
    x: &Latent,
    from_idx: usize,
    to_idx: usize,
    cond: &ConditionBundle,
    guidance: f64,
    backend: &B,
    schedule: &Schedule,
) -> Result<Latent> {
    check_indices(schedule, from_idx, to_idx)?;
    if from_idx < to_idx {
        return Err(FusionError::InvalidConfig(format!(
            "inversion runs backward along the grid, got {from_idx} -> {to_idx}"
        )));
    }
    let mut x = x.clone();
    for i in ((to_idx + 1)..=from_idx).rev() {
        if let Some(v) = eval_velocity(backend, &x, i, schedule, cond, guidance)? {
            let ds = schedule.sigmas[i - 1] - schedule.sigmas[i];
            x = x.step(ds, &v)?;
        }
    }
    Ok(x)
}

/// Reference to one input concept: the id used to fetch its image embedding
/// and the label used for semantic scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRef {
    pub id: String,
    pub label: String,
}

impl ConceptRef {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            label: id.clone(),
            id,
        }
    }
}

/// Both concepts plus their embeddings and the guiding prompt embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptInputs {
    pub first: ConceptRef,
    pub second: ConceptRef,
    pub z1: Embedding,
    pub z2: Embedding,
    pub prompt: Embedding,
}

impl ConceptInputs {
    pub fn guiding_prompt(first: &str, second: &str) -> String {
        format!("A photo of {first} creatively fused with {second}.")
    }

    /// Encodes both concepts and the guiding prompt through `backend`.
    pub fn from_backend<B: VelocityBackend + ?Sized>(
        backend: &B,
        first: ConceptRef,
        second: ConceptRef,
    ) -> Result<Self> {
        let z1 = backend.encode_image(&first.id)?;
        let z2 = backend.encode_image(&second.id)?;
        let prompt = backend.encode_prompt(&Self::guiding_prompt(&first.label, &second.label))?;
        Ok(Self {
            first,
            second,
            z1,
            z2,
            prompt,
        })
    }

    fn bundle(&self, mode: Conditioning) -> ConditionBundle {
        ConditionBundle {
            mode,
            prompt: self.prompt.clone(),
        }
    }
}

/// Result of the noise-blending stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendedNoise {
    /// Seeded Gaussian starting noise.
    pub noise: Latent,
    /// Latents reached at the intermediate timestep (one per refinement pass).
    pub intermediates: Vec<Latent>,
    /// Refined noise handed to the final denoising pass.
    pub blended: Latent,
}

/// Everything produced by one hybrid sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HspOutput {
    pub params: FusionParams,
    pub den_timestep: u32,
    pub noise: BlendedNoise,
    pub final_latent: Latent,
    pub decoded: Decoded,
}

/// Sampler bound to one configuration, its schedule and a backend.
pub struct Sampler<'b, B: ?Sized> {
    config: SamplerConfig,
    schedule: Schedule,
    backend: &'b B,
}

impl<'b, B: VelocityBackend + ?Sized> Sampler<'b, B> {
    pub fn new(config: SamplerConfig, backend: &'b B) -> Result<Self> {
        let schedule = build_schedule(&config)?;
        Ok(Self {
            config,
            schedule,
            backend,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn backend(&self) -> &'b B {
        self.backend
    }

    /// Denoise to the intermediate timestep and invert back to full noise.
    fn refine(&self, noise: &Latent, cond: &ConditionBundle) -> Result<(Latent, Latent)> {
        let den = self.schedule.den_index;
        let mid = denoise_segment(
            noise,
            0,
            den,
            cond,
            self.config.gamma_den,
            self.backend,
            &self.schedule,
        )?;
        let back = invert_segment(
            &mid,
            den,
            0,
            cond,
            self.config.gamma_inv,
            self.backend,
            &self.schedule,
        )?;
        Ok((mid, back))
    }

    /// Noise blending: turns the seeded noise into an information-bearing
    /// starting point for the final pass.
    pub fn blend_noise(
        &self,
        params: &FusionParams,
        inputs: &ConceptInputs,
        strategy: BNoiseStrategy,
    ) -> Result<BlendedNoise> {
        params.validate()?;
        let noise = gaussian_noise(params.seed, self.backend.latent_dim());
        match strategy {
            BNoiseStrategy::RandomNoise => Ok(BlendedNoise {
                blended: noise.clone(),
                noise,
                intermediates: Vec::new(),
            }),
            BNoiseStrategy::ConcatBeforeInversion => {
                let scat = scale_concat(&inputs.z1, &inputs.z2, params.beta1, params.beta2)?;
                let (mid, blended) =
                    self.refine(&noise, &inputs.bundle(Conditioning::Concat(scat)))?;
                Ok(BlendedNoise {
                    noise,
                    intermediates: vec![mid],
                    blended,
                })
            }
            BNoiseStrategy::InterpBeforeInversion => {
                let sinp = latent_ops::slerp(&inputs.z1, &inputs.z2, 0.5)?;
                let (mid, blended) =
                    self.refine(&noise, &inputs.bundle(Conditioning::Interp(sinp)))?;
                Ok(BlendedNoise {
                    noise,
                    intermediates: vec![mid],
                    blended,
                })
            }
            BNoiseStrategy::InterpAfterInversion => {
                let c1 = Conditioning::Interp(latent_ops::normalize(&inputs.z1)?);
                let c2 = Conditioning::Interp(latent_ops::normalize(&inputs.z2)?);
                let (mid1, back1) = self.refine(&noise, &inputs.bundle(c1))?;
                let (mid2, back2) = self.refine(&noise, &inputs.bundle(c2))?;
                let target_norm = 0.5 * (back1.norm() + back2.norm());
                let e1 = Embedding::new(back1.into_values())?;
                let e2 = Embedding::new(back2.into_values())?;
                let dir = latent_ops::slerp(&e1, &e2, 0.5)?;
                let blended = Latent::new(dir.values().iter().map(|v| v * target_norm).collect())?;
                Ok(BlendedNoise {
                    noise,
                    intermediates: vec![mid1, mid2],
                    blended,
                })
            }
        }
    }

    /// Final denoising pass from full noise to `t = 0`, followed by decoding.
    pub fn mixing_denoise(
        &self,
        blended: &Latent,
        inputs: &ConceptInputs,
        alpha: f64,
        strategy: MDeNoiseStrategy,
    ) -> Result<(Latent, Decoded)> {
        let mode = match strategy {
            MDeNoiseStrategy::SlerpFusion => {
                Conditioning::Interp(latent_ops::slerp(&inputs.z1, &inputs.z2, alpha)?)
            }
            MDeNoiseStrategy::ConcatFusion => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(FusionError::InvalidConfig(format!(
                        "alpha = {alpha} outside [0, 1]"
                    )));
                }
                Conditioning::Concat(ConcatEmbedding::weighted(
                    &inputs.z1,
                    &inputs.z2,
                    alpha,
                    1.0 - alpha,
                )?)
            }
        };
        let x0 = denoise_segment(
            blended,
            0,
            self.schedule.last_index(),
            &inputs.bundle(mode),
            self.config.gamma_gen,
            self.backend,
            &self.schedule,
        )?;
        let decoded = self.backend.decode(&x0)?;
        Ok((x0, decoded))
    }

    /// Hybrid sampling: noise blending followed by mixing denoise.
    pub fn hsp(
        &self,
        inputs: &ConceptInputs,
        theta: &FusionParams,
        strategies: Strategies,
    ) -> Result<HspOutput> {
        let noise = self
            .blend_noise(theta, inputs, strategies.bnoise)
            .map_err(|e| e.in_stage("noise blending"))?;
        self.finish(inputs, theta, strategies.mdenoise, noise)
    }

    /// Runs the final pass on an already blended noise.
    pub fn finish(
        &self,
        inputs: &ConceptInputs,
        theta: &FusionParams,
        strategy: MDeNoiseStrategy,
        noise: BlendedNoise,
    ) -> Result<HspOutput> {
        let (final_latent, decoded) = self
            .mixing_denoise(&noise.blended, inputs, theta.alpha, strategy)
            .map_err(|e| e.in_stage("mixing denoise"))?;
        Ok(HspOutput {
            params: *theta,
            den_timestep: self.schedule.den_timestep(),
            noise,
            final_latent,
            decoded,
        })
    }
}
