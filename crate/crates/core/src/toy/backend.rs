use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{concept_mean, ToyWorld};
use crate::error::{BackendError, Result};
use crate::latent_ops::{normalize, Embedding};
use crate::sampler::{ConditionBundle, Decoded, Latent, VelocityBackend};

/// Guided velocity `v_u + guidance * (v_c - v_u)` of the toy field at
/// `sigma = t / t_max`. The unconditional field targets the origin.
///
/// With zero spread this is `(x - guidance * mu) / sigma`. At `sigma = 0`
/// the velocity is zero by convention.
pub fn affine_velocity(
    x: &Latent,
    t: u32,
    t_max: u32,
    cond: &ConditionBundle,
    guidance: f64,
    world: &ToyWorld,
) -> Result<Latent> {
    let mu = concept_mean(cond, world)?;
    if x.dim() != mu.len() {
        return Err(crate::error::FusionError::DimMismatch {
            expected: mu.len(),
            actual: x.dim(),
        });
    }
    let sigma = f64::from(t) / f64::from(t_max);
    if sigma == 0.0 {
        return Ok(Latent::zeros(x.dim()));
    }
    let values = if world.spread == 0.0 {
        x.values()
            .iter()
            .zip(&mu)
            .map(|(xi, mi)| (xi - guidance * mi) / sigma)
            .collect()
    } else {
        // conditional flow towards N(mu, s^2 I):
        // v = c x - mu (1 + c (1 - sigma)),  c = (sigma - (1 - sigma) s^2) / var
        let s2 = world.spread * world.spread;
        let var = (1.0 - sigma).powi(2) * s2 + sigma * sigma;
        let c = (sigma - (1.0 - sigma) * s2) / var;
        let pull = 1.0 + c * (1.0 - sigma);
        x.values()
            .iter()
            .zip(&mu)
            .map(|(xi, mi)| c * xi - guidance * mi * pull)
            .collect()
    };
    Latent::new(values)
}

/// The point `x0` plus `decode_cloud_size` samples from `N(x0, std^2 I)`.
pub fn toy_decode(x0: &Latent, world: &ToyWorld, seed: u64) -> Decoded {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = (0..world.decode_cloud_size)
        .map(|_| {
            x0.values()
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + world.decode_cloud_std * z
                })
                .collect()
        })
        .collect();
    Decoded {
        point: x0.values().to_vec(),
        cloud,
    }
}

/// 64-bit FNV-1a, used to derive stable seeds from strings.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// In-process toy backend.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    world: Arc<ToyWorld>,
    t_max: u32,
}

impl ToyBackend {
    pub fn new(world: ToyWorld, t_max: u32) -> Self {
        Self {
            world: Arc::new(world),
            t_max,
        }
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }
}

fn backend_err(e: crate::error::FusionError) -> BackendError {
    BackendError::new(e.to_string())
}

impl VelocityBackend for ToyBackend {
    fn latent_dim(&self) -> usize {
        self.world.latent_dim
    }

    fn velocity(
        &self,
        x: &Latent,
        t: u32,
        cond: &ConditionBundle,
        guidance: f64,
    ) -> Result<Latent, BackendError> {
        affine_velocity(x, t, self.t_max, cond, guidance, &self.world).map_err(backend_err)
    }

    fn decode(&self, x0: &Latent) -> Result<Decoded, BackendError> {
        if x0.dim() != self.world.latent_dim {
            return Err(BackendError::new(format!(
                "decode expects dimension {}, got {}",
                self.world.latent_dim,
                x0.dim()
            )));
        }
        Ok(toy_decode(x0, &self.world, self.world.decode_seed))
    }

    fn encode_image(&self, concept: &str) -> Result<Embedding, BackendError> {
        self.world
            .concept(concept)
            .map(|c| c.embedding.clone())
            .map_err(backend_err)
    }

    fn encode_prompt(&self, text: &str) -> Result<Embedding, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text.as_bytes()));
        let raw = (0..self.world.embed_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Embedding::new(raw)
            .and_then(|e| normalize(&e))
            .map_err(backend_err)
    }
}
