//! Service configuration file (TOML) and the wiring it describes.
//!
//! ```toml
//! [server]
//! bind = "127.0.0.1:8080"
//! data_dir = "data"
//! auth_token = "secret"          # optional static bearer token
//! lease_ttl_secs = 900
//! annotators = ["alice", "bob"]
//! corpus = "corpus.jsonl"        # ingested into an empty store; feeds mock providers
//! webapp_dir = "webapp/dist"     # optional static bundle served at /app
//!
//! [learner]
//! learning_rate = 0.05
//! l2 = 0.0001
//! ranker_learning_rate = 0.5
//!
//! [scheduler]
//! tau = 0.9
//! weights = { quality = 0.34, ter = 0.33, llm = 0.33 }
//! default_strategy = "tripartite"
//! batch_size = 5
//!
//! [[providers]]
//! id = "judge"
//! kind = "llm"                   # mt | llm | embedding
//! roles = ["judge", "teacher"]   # llm only
//! endpoint = "mock:reference"    # or an http(s) URL
//! timeout_ms = 10000
//! retries = 3
//! concurrency = 4
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use mtloop_core::corpus::{read_corpus, CorpusEntry, CorpusError};
use mtloop_core::domain::{PriorityWeights, ProviderKind, ProviderModel, ThresholdConfig};
use mtloop_core::learner::Hyperparams;
use mtloop_core::providers::mock::{MockEmbedder, MockLlm, MockMt, References};
use mtloop_core::providers::{
    api_key_env_var, Backend, HttpBackend, LlmClient, Provider, ProviderEmbedder, RetryPolicy, TeacherMetric,
};
use mtloop_core::scheduler::Strategy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, Providers, DEFAULT_LEASE_TTL_MS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub providers: Vec<ProviderSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub data_dir: PathBuf,
    pub auth_token: Option<String>,
    pub lease_ttl_secs: u64,
    pub annotators: Vec<String>,
    pub corpus: Option<PathBuf>,
    pub synthesize: bool,
    pub snapshot_every: u64,
    pub webapp_dir: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            auth_token: None,
            lease_ttl_secs: DEFAULT_LEASE_TTL_MS / 1000,
            annotators: Vec::new(),
            corpus: None,
            synthesize: true,
            snapshot_every: 1000,
            webapp_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub learning_rate: f64,
    pub l2: f64,
    pub ranker_learning_rate: Option<f64>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            learning_rate: hp.learning_rate,
            l2: hp.l2,
            ranker_learning_rate: hp.ranker_learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub tau: f64,
    pub weights: PriorityWeights,
    pub default_strategy: String,
    /// Most segments `GET /api/v1/segments/batch` leases at once.
    pub batch_size: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let cfg = ThresholdConfig::default();
        Self {
            tau: cfg.tau,
            weights: cfg.weights,
            default_strategy: "tripartite".into(),
            batch_size: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Mt,
    Llm,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmRole {
    Judge,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub id: String,
    pub kind: KindName,
    pub endpoint: String,
    #[serde(default)]
    pub display_name: Option<String>,
    /// LLM roles; both when omitted.
    #[serde(default)]
    pub roles: Option<Vec<LlmRole>>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Embedding width (embedding providers).
    #[serde(default)]
    pub dim: Option<usize>,
    /// Seed and amplitude of mock noise.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ThresholdConfig::new(self.scheduler.tau, self.scheduler.weights).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hyperparams().check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.strategy()?;
        if self.scheduler.batch_size == 0 {
            return invalid("scheduler.batch_size must be at least 1");
        }
        if self.server.lease_ttl_secs == 0 {
            return invalid("server.lease_ttl_secs must be positive");
        }
        let mut ids = BTreeSet::new();
        let mut judges = 0;
        let mut teachers = 0;
        let mut embedders = 0;
        for p in &self.providers {
            if !ids.insert(p.id.as_str()) {
                return invalid(format!("duplicate provider id `{}`", p.id));
            }
            if p.retries == 0 || p.concurrency == 0 || p.timeout_ms == 0 {
                return invalid(format!("provider `{}`: retries, concurrency and timeout must be positive", p.id));
            }
            match p.kind {
                KindName::Llm => {
                    let roles = p.llm_roles();
                    judges += usize::from(roles.contains(&LlmRole::Judge));
                    teachers += usize::from(roles.contains(&LlmRole::Teacher));
                }
                KindName::Embedding => {
                    embedders += 1;
                    if p.dim.unwrap_or(0) == 0 {
                        return invalid(format!("embedding provider `{}` needs dim >= 1", p.id));
                    }
                }
                KindName::Mt => {}
            }
        }
        if judges > 1 || teachers > 1 || embedders > 1 {
            return invalid("at most one judge, one teacher and one embedding provider");
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let l = &self.learner;
        Hyperparams {
            learning_rate: l.learning_rate,
            l2: l.l2,
            ranker_learning_rate: l.ranker_learning_rate,
        }
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        Strategy::parse(&self.scheduler.default_strategy)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown strategy `{}`", self.scheduler.default_strategy)))
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            tau: self.scheduler.tau,
            weights: self.scheduler.weights,
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        Ok(EngineConfig {
            lease_ttl_ms: self.server.lease_ttl_secs.saturating_mul(1000),
            annotators: self.server.annotators.iter().cloned().collect(),
            hyperparams: self.hyperparams(),
            synthesize: self.server.synthesize,
            default_strategy: self.strategy()?,
            snapshot_dir: Some(self.server.data_dir.clone()),
            snapshot_every: self.server.snapshot_every,
        })
    }

    /// Corpus named by `server.corpus`, resolved against `base`.
    pub fn load_corpus(&self, base: &Path) -> Result<Vec<CorpusEntry>, ConfigError> {
        let Some(rel) = &self.server.corpus else {
            return Ok(Vec::new());
        };
        let path = base.join(rel);
        let file = File::open(&path).map_err(|source| ConfigError::Io { path, source })?;
        Ok(read_corpus(BufReader::new(file))?)
    }

    /// Instantiates every configured provider. Mock endpoints draw on `corpus`.
    pub fn build_providers(&self, corpus: &[CorpusEntry]) -> Result<Providers, ConfigError> {
        let references: References = Arc::new(corpus.iter().map(|e| (e.source.clone(), e.reference.clone())).collect());
        let mut out = Providers::default();
        for p in &self.providers {
            match p.kind {
                KindName::Mt => out.mt.push(p.provider(ProviderKind::MT, mt_backend(p, corpus)?)?),
                KindName::Llm => {
                    let backend: Arc<dyn Backend> = match mock_name(p) {
                        Some("reference") => Arc::new(MockLlm::new(Arc::clone(&references)).with_noise(p.seed, p.noise)),
                        Some(other) => return invalid(format!("provider `{}`: unknown mock `{other}`", p.id)),
                        None => p.http()?,
                    };
                    let client = LlmClient::new(p.provider(ProviderKind::LLM, backend)?);
                    let roles = p.llm_roles();
                    if roles.contains(&LlmRole::Teacher) {
                        out.teacher = Some(Arc::new(client.clone()) as Arc<dyn TeacherMetric>);
                    }
                    if roles.contains(&LlmRole::Judge) {
                        out.judge = Some(client);
                    }
                }
                KindName::Embedding => {
                    let dim = p.dim.unwrap_or(1);
                    out.embedder = Some(match mock_name(p) {
                        Some("reference") => Arc::new(MockEmbedder::new(Arc::clone(&references), dim, p.seed, p.noise)),
                        Some(other) => return invalid(format!("provider `{}`: unknown mock `{other}`", p.id)),
                        None => Arc::new(ProviderEmbedder::new(p.provider(ProviderKind::Embedding, p.http()?)?, dim)),
                    });
                }
            }
        }
        Ok(out)
    }
}

fn mock_name(p: &ProviderSection) -> Option<&str> {
    p.endpoint.strip_prefix("mock:")
}

fn mt_backend(p: &ProviderSection, corpus: &[CorpusEntry]) -> Result<Arc<dyn Backend>, ConfigError> {
    match mock_name(p) {
        Some("corpus") => {
            let mut table = MockMt::new();
            let mut seen = HashMap::new();
            for e in corpus {
                if let Some(h) = e.hypotheses.iter().find(|h| h.provider_id == p.id) {
                    table = table.with(&e.source, &e.target_lang, &h.text);
                    seen.insert(e.id.as_str(), ());
                }
            }
            if seen.is_empty() {
                return invalid(format!("mock MT `{}` has no translations in the corpus", p.id));
            }
            Ok(Arc::new(table))
        }
        Some(other) => invalid(format!("provider `{}`: unknown mock `{other}`", p.id)),
        None => p.http(),
    }
}

impl ProviderSection {
    fn llm_roles(&self) -> Vec<LlmRole> {
        self.roles.clone().unwrap_or_else(|| vec![LlmRole::Judge, LlmRole::Teacher])
    }

    fn http(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        let backend = HttpBackend::new(&self.id, &self.endpoint, Duration::from_millis(self.timeout_ms))
            .map_err(|e| ConfigError::Invalid(format!("provider `{}`: {e}", self.id)))?
            .with_api_key(std::env::var(api_key_env_var(&self.id)).ok());
        Ok(Arc::new(backend))
    }

    fn provider(&self, kind: ProviderKind, backend: Arc<dyn Backend>) -> Result<Provider, ConfigError> {
        let model = ProviderModel {
            id: self.id.clone(),
            kind,
            endpoint: self.endpoint.clone(),
            display_name: self.display_name.clone().unwrap_or_else(|| self.id.clone()),
        };
        Ok(Provider::new(model, backend)
            .with_retry(RetryPolicy {
                attempts: self.retries,
                ..RetryPolicy::default()
            })
            .with_concurrency(self.concurrency))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let cfg = ServiceConfig::parse("").unwrap();
        assert_eq!(cfg.server.lease_ttl_secs, 900);
        assert_eq!(cfg.strategy().unwrap(), Strategy::Tripartite);

        let bad_tau = "[scheduler]\ntau = 1.5\n";
        assert!(matches!(ServiceConfig::parse(bad_tau), Err(ConfigError::Invalid(_))));
        let bad_weights = "[scheduler]\nweights = { quality = 0.5, ter = 0.5, llm = 0.2 }\n";
        assert!(matches!(ServiceConfig::parse(bad_weights), Err(ConfigError::Invalid(_))));
        let unknown_key = "[server]\nport = 1\n";
        assert!(matches!(ServiceConfig::parse(unknown_key), Err(ConfigError::Parse(_))));
        let dup = r#"
            [[providers]]
            id = "a"
            kind = "mt"
            endpoint = "mock:corpus"
            [[providers]]
            id = "a"
            kind = "mt"
            endpoint = "mock:corpus"
        "#;
        assert!(matches!(ServiceConfig::parse(dup), Err(ConfigError::Invalid(_))));
        let no_dim = "[[providers]]\nid = \"e\"\nkind = \"embedding\"\nendpoint = \"mock:reference\"\n";
        assert!(ServiceConfig::parse(no_dim).is_err());
    }

    #[test]
    fn builds_mock_providers() {
        let cfg = ServiceConfig::parse(
            r#"
            [[providers]]
            id = "mt0"
            kind = "mt"
            endpoint = "mock:corpus"
            [[providers]]
            id = "judge"
            kind = "llm"
            endpoint = "mock:reference"
            [[providers]]
            id = "emb"
            kind = "embedding"
            endpoint = "mock:reference"
            dim = 3
            "#,
        )
        .unwrap();
        let corpus = vec![CorpusEntry {
            id: "s1".into(),
            source: "hola".into(),
            source_lang: "es".into(),
            target_lang: "en".into(),
            reference: "hello".into(),
            topic: None,
            hypotheses: vec![mtloop_core::corpus::CorpusHypothesis {
                provider_id: "mt0".into(),
                text: "hi".into(),
            }],
        }];
        let p = cfg.build_providers(&corpus).unwrap();
        assert_eq!(p.mt.len(), 1);
        assert!(p.judge.is_some() && p.teacher.is_some());
        assert_eq!(p.embedder.as_ref().unwrap().dim(), 3);
        let h = mtloop_core::providers::translate(&p.mt[0], "hola", mtloop_core::providers::Langs::new("es", "en")).unwrap();
        assert_eq!(h.text, "hi");
    }
}
