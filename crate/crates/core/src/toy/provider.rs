use std::collections::HashMap;

use super::backend::{fnv1a, toy_decode};
use super::mmd::{median_distance, mmd_similarity_with, Bandwidth};
use super::ToyWorld;
use crate::error::BackendError;
use crate::exec::Execution;
use crate::sampler::{Decoded, Latent};
use crate::scoring::{NormalizationBounds, SimilarityProvider};

/// Similarity provider over a toy world.
///
/// Visual similarity compares the decoded cloud with a reference cloud drawn
/// around the concept's target mean (MMD with a Gaussian kernel). Semantic
/// similarity falls linearly with the distance from the decoded point to the
/// target, from `hi` at distance 0 to `lo` at one world scale. The world
/// scale (also the kernel bandwidth) is the median pairwise distance between
/// concept targets.
#[derive(Debug, Clone)]
pub struct ToyProvider {
    targets: HashMap<String, Vec<f64>>,
    references: HashMap<String, Vec<Vec<f64>>>,
    scale: f64,
    raw_range: NormalizationBounds,
    exec: Execution,
}

impl ToyProvider {
    pub fn new(world: &ToyWorld) -> Self {
        let means: Vec<&[f64]> = world
            .concepts
            .iter()
            .map(|c| c.target_mean.as_slice())
            .collect();
        let scale = median_distance(&means);
        let mut targets = HashMap::new();
        let mut references = HashMap::new();
        for c in &world.concepts {
            let center = Latent::new(c.target_mean.clone()).expect("validated world");
            let seed = world.decode_seed ^ fnv1a(c.id.as_bytes());
            let reference = toy_decode(&center, world, seed);
            let samples = if reference.cloud.is_empty() {
                vec![reference.point]
            } else {
                reference.cloud
            };
            targets.insert(c.id.clone(), c.target_mean.clone());
            references.insert(c.id.clone(), samples);
        }
        Self {
            targets,
            references,
            scale,
            raw_range: NormalizationBounds::default(),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// World length scale used for the kernel bandwidth and the semantic falloff.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn target(&self, id: &str) -> Result<&[f64], BackendError> {
        self.targets
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| BackendError::new(format!("unknown concept `{id}`")))
    }
}

impl SimilarityProvider for ToyProvider {
    fn visual(&self, output: &Decoded, concept: &str) -> Result<f64, BackendError> {
        let reference = self
            .references
            .get(concept)
            .ok_or_else(|| BackendError::new(format!("unknown concept `{concept}`")))?;
        let samples = output.samples();
        if samples.iter().any(|s| s.len() != reference[0].len()) {
            return Err(BackendError::new("output dimension does not match world"));
        }
        mmd_similarity_with(&samples, reference, Bandwidth::Fixed(self.scale), self.exec)
            .map_err(|e| BackendError::new(e.to_string()))
    }

    fn semantic_raw(&self, output: &Decoded, label: &str) -> Result<f64, BackendError> {
        let target = self.target(label)?;
        if target.len() != output.point.len() {
            return Err(BackendError::new("output dimension does not match world"));
        }
        let dist = output
            .point
            .iter()
            .zip(target)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let NormalizationBounds { lo, hi } = self.raw_range;
        Ok(hi - (hi - lo) * dist / self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::normalize_semantic;

    fn decoded_at(world: &ToyWorld, point: Vec<f64>) -> Decoded {
        toy_decode(&Latent::new(point).unwrap(), world, world.decode_seed)
    }

    #[test]
    fn output_on_target_scores_high_for_that_concept() {
        let w = ToyWorld::default_world();
        let p = ToyProvider::new(&w);
        let at_a = decoded_at(&w, w.concept("A").unwrap().target_mean.clone());
        let s_a = p.visual(&at_a, "A").unwrap();
        let s_f = p.visual(&at_a, "F").unwrap();
        assert!(s_a > 0.99, "{s_a}");
        assert!(s_f < 0.5, "{s_f}");
        let raw = p.semantic_raw(&at_a, "A").unwrap();
        assert_eq!(raw, 0.45);
        assert_eq!(normalize_semantic(raw, NormalizationBounds::default()), 1.0);
    }

    #[test]
    fn unknown_concepts_fail() {
        let w = ToyWorld::default_world();
        let p = ToyProvider::new(&w);
        let d = decoded_at(&w, vec![0.0, 0.0]);
        assert!(p.visual(&d, "nope").is_err());
        assert!(p.semantic_raw(&d, "nope").is_err());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let w = ToyWorld::default_world();
        let d = decoded_at(&w, vec![1.0, 2.0]);
        let a = ToyProvider::new(&w).with_execution(Execution::Sequential);
        let b = ToyProvider::new(&w).with_execution(Execution::Parallel);
        let (x, y) = (a.visual(&d, "B").unwrap(), b.visual(&d, "B").unwrap());
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
