//! Annotation service: the engine that drives the loop, admin statistics,
//! configuration and the HTTP router.

pub mod config;
pub mod engine;
pub mod http;
pub mod stats;

use std::path::Path;

use mtloop_core::store::{Store, SystemClock};
use thiserror::Error;

pub use config::{ConfigError, ServiceConfig};
pub use engine::{Engine, EngineConfig, EngineError, Providers};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("seeding segment {id}: {source}")]
    Seed {
        id: String,
        #[source]
        source: EngineError,
    },
}

/// Opens the store under `data_dir` (relative to `base`) and wires the
/// configured providers. On an empty store the configured threshold and
/// weights are committed and the corpus is ingested; afterwards the log is
/// authoritative.
pub fn open_engine(cfg: &ServiceConfig, base: &Path) -> Result<Engine, StartupError> {
    let corpus = cfg.load_corpus(base)?;
    let providers = cfg.build_providers(&corpus)?;
    let data_dir = base.join(&cfg.server.data_dir);
    let store = Store::open_dir(&data_dir, Box::new(SystemClock)).map_err(EngineError::from)?;
    let mut engine_cfg = cfg.engine_config()?;
    engine_cfg.snapshot_dir = Some(data_dir);
    let mut engine = Engine::new(store, providers, engine_cfg)?;
    if engine.state().last_seq == 0 {
        let wanted = cfg.threshold();
        if wanted.tau != engine.state().config.tau {
            engine.set_threshold(wanted.tau)?;
        }
        if wanted.weights != engine.state().config.weights {
            let w = wanted.weights;
            engine.set_weights(w.quality, w.ter, w.llm)?;
        }
        for entry in &corpus {
            engine.ingest(entry.into()).map_err(|source| StartupError::Seed {
                id: entry.id.clone(),
                source,
            })?;
        }
    }
    Ok(engine)
}
