//! Concept fusion with rectified-flow samplers.
//!
//! Two concepts are fused by first refining seeded Gaussian noise (denoise
//! part way under concatenated conditioning, then invert back to full noise)
//! and then denoising it under a spherically interpolated conditioning. A
//! similarity score over the result drives a small derivative-free search
//! over the mixing factor, the two noise scales and the seed.
//!
//! The sampler is generic over [`sampler::VelocityBackend`]. The [`toy`]
//! module provides a closed-form affine backend with matching similarity
//! providers, and [`remote`] speaks a line-delimited JSON protocol for
//! out-of-process backends.

pub mod error;
pub mod exec;
pub mod latent_ops;
pub mod remote;
pub mod sampler;
pub mod scoring;
pub mod search;
pub mod toy;

pub use error::{BackendError, FusionError, Result};
pub use exec::Execution;
pub use latent_ops::{ConcatEmbedding, Embedding};
pub use sampler::{
    BNoiseStrategy, ConceptInputs, ConceptRef, Decoded, FusionParams, HspOutput, Latent,
    MDeNoiseStrategy, Sampler, SamplerConfig, Strategies, VelocityBackend,
};
pub use scoring::{NormalizationBounds, ScoreBreakdown, SimilarityProvider};
pub use search::{run_eaa, Candidate, EaaResult, SearchConfig, Stage};
pub use toy::{ToyBackend, ToyProvider, ToyWorld};
