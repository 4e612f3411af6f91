use fusion_core::remote::RemoteBackend;
use fusion_core::{
    ConceptInputs, ConceptRef, SimilarityProvider, ToyBackend, ToyProvider, ToyWorld,
    VelocityBackend,
};

use crate::config::{BackendSpec, RunConfig, DEFAULT_WORLD};
use crate::error::CliError;

/// Resolves `builtin:NAME` or a path to a world file.
pub fn load_world(spec: &str) -> Result<ToyWorld, CliError> {
    match spec.strip_prefix("builtin:") {
        Some(name) => ToyWorld::builtin(name),
        None => ToyWorld::load(spec),
    }
    .map_err(|e| CliError::usage(format!("world `{spec}`: {e}")))
}

/// The backend and similarity provider selected by a configuration.
pub enum Engine {
    Toy {
        world: ToyWorld,
        backend: ToyBackend,
        provider: ToyProvider,
    },
    Remote(RemoteBackend),
}

impl Engine {
    pub fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        match &cfg.backend {
            BackendSpec::Toy => {
                let world = load_world(cfg.world.as_deref().unwrap_or(DEFAULT_WORLD))?;
                let engine = Engine::Toy {
                    backend: ToyBackend::new(world.clone(), cfg.sampler.t_max),
                    provider: ToyProvider::new(&world),
                    world,
                };
                engine.check_pair(&cfg.pair)?;
                Ok(engine)
            }
            BackendSpec::Remote(addr) => RemoteBackend::connect(addr.as_str())
                .map(Engine::Remote)
                .map_err(|source| CliError::Connect {
                    addr: addr.clone(),
                    source,
                }),
        }
    }

    pub fn backend(&self) -> &dyn VelocityBackend {
        match self {
            Engine::Toy { backend, .. } => backend,
            Engine::Remote(r) => r,
        }
    }

    pub fn provider(&self) -> &dyn SimilarityProvider {
        match self {
            Engine::Toy { provider, .. } => provider,
            Engine::Remote(r) => r,
        }
    }

    /// Concept ids known locally; `None` for a remote backend.
    pub fn concept_ids(&self) -> Option<Vec<String>> {
        match self {
            Engine::Toy { world, .. } => Some(world.ids().map(String::from).collect()),
            Engine::Remote(_) => None,
        }
    }

    /// Rejects ids the toy world does not define. Remote ids are checked by the server.
    pub fn check_pair(&self, pair: &[String; 2]) -> Result<(), CliError> {
        if let Engine::Toy { world, .. } = self {
            for id in pair {
                world.concept(id).map_err(CliError::usage)?;
            }
        }
        Ok(())
    }

    pub fn inputs(&self, pair: &[String; 2]) -> Result<ConceptInputs, CliError> {
        Ok(ConceptInputs::from_backend(
            self.backend(),
            ConceptRef::new(pair[0].as_str()),
            ConceptRef::new(pair[1].as_str()),
        )?)
    }
}
