//! Closed-loop simulation: a synthetic annotator labels segments served by
//! the engine while the online ranker is scored on a held-out split.
//!
//! The annotator and the held-out oracle see the hidden references through
//! the mock judge's noiseless direct assessment, `100·(1 − TER)`. The engine
//! only sees provider outputs: noisy judge and teacher scores and noisy
//! embeddings.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mtloop_api::engine::{Engine, EngineConfig, EngineError, IngestRequest, Providers, SubmitRequest};
use mtloop_api::stats::admin_stats;
use mtloop_core::corpus::{read_corpus, CorpusEntry, CorpusError};
use mtloop_core::domain::{ErrorCategory, PriorityWeights, ProviderKind, ProviderModel};
use mtloop_core::features::FeatureVector;
use mtloop_core::learner::{rank_best, Hyperparams};
use mtloop_core::metrics::{ter_text, CorrelationReport, ImprovementStats};
use mtloop_core::providers::mock::{MockEmbedder, MockLlm};
use mtloop_core::providers::{Embedder, Langs, LlmClient, Provider, TeacherMetric};
use mtloop_core::scheduler::Strategy;
use mtloop_core::store::{Event, ManualClock, Store};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{self, SynthConfig};

pub const ANNOTATOR: &str = "sim-annotator";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("corpus {path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("budget must be at least one annotation")]
    BudgetZero,
    #[error(transparent)]
    Engine(#[from] EngineError),
    /// A config or corpus file that cannot be read.
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub quality: f64,
    pub ter: f64,
    pub llm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// JSONL corpus with hypotheses; a synthetic corpus is generated when absent.
    pub corpus_path: Option<PathBuf>,
    /// Synthetic corpus size.
    pub segments: usize,
    /// Synthetic share of segments every provider gets right.
    pub easy_fraction: f64,
    /// Providers in the synthetic corpus; taken from the file otherwise.
    pub n_providers: usize,
    pub seed: u64,
    /// Probability that the annotator picks the second-best hypothesis.
    pub annotator_noise: f64,
    pub strategy: String,
    pub tau: f64,
    pub weights: WeightsSpec,
    /// Maximum number of human annotations.
    pub budget: usize,
    pub held_out_fraction: f64,
    /// Run an auto-label pass every this many annotations; 0 disables the
    /// periodic passes.
    pub auto_label_every: usize,
    /// Run an auto-label pass after the annotation loop.
    pub final_auto_label: bool,
    /// Stop as soon as held-out top-1 reaches this value.
    pub target_top1: Option<f64>,
    pub judge_noise: f64,
    pub teacher_noise: f64,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub ranker_learning_rate: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            corpus_path: None,
            segments: 500,
            easy_fraction: 0.5,
            n_providers: 5,
            seed: 1,
            annotator_noise: 0.0,
            strategy: "tripartite".into(),
            tau: 0.99,
            weights: WeightsSpec {
                quality: 1.0 / 3.0,
                ter: 1.0 / 3.0,
                llm: 1.0 / 3.0,
            },
            budget: 200,
            held_out_fraction: 0.2,
            auto_label_every: 25,
            final_auto_label: true,
            target_top1: None,
            judge_noise: 5.0,
            teacher_noise: 15.0,
            embedding_dim: 4,
            embedding_noise: 0.05,
            learning_rate: 0.05,
            l2: 1e-4,
            ranker_learning_rate: 2.0,
        }
    }
}

impl SimulationConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Reads a TOML file; a relative `corpus_path` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Input {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(c), Some(dir)) = (&cfg.corpus_path, path.parent()) {
            if c.is_relative() {
                cfg.corpus_path = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(2..=10).contains(&self.n_providers) {
            return bad(format!("n_providers {} outside 2..=10", self.n_providers));
        }
        if !(0.0..=1.0).contains(&self.annotator_noise) {
            return bad(format!("annotator_noise {} outside [0, 1]", self.annotator_noise));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return bad(format!("easy_fraction {} outside [0, 1]", self.easy_fraction));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return bad(format!("held_out_fraction {} outside [0, 1)", self.held_out_fraction));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        PriorityWeights::new(self.weights.quality, self.weights.ter, self.weights.llm).map_err(|e| SimError::Config(e.to_string()))?;
        self.strategy()?;
        let h = self.hyperparams();
        h.check().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    /// Parsed strategy; `random` is salted with the seed.
    pub fn strategy(&self) -> Result<Strategy, SimError> {
        match Strategy::parse(&self.strategy) {
            Some(Strategy::Random { .. }) => Ok(Strategy::Random { salt: self.seed }),
            Some(s) => Ok(s),
            None => Err(SimError::Config(format!("unknown strategy `{}`", self.strategy))),
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams::new(self.learning_rate, self.l2).with_ranker_rate(self.ranker_learning_rate)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            segments: self.segments,
            providers: self.n_providers,
            easy_fraction: self.easy_fraction,
            ..SynthConfig::default()
        }
    }

    /// The corpus file, or the synthetic corpus for this seed.
    pub fn corpus(&self) -> Result<Vec<CorpusEntry>, SimError> {
        let Some(path) = &self.corpus_path else {
            return Ok(synth::generate(&self.synth(), self.seed));
        };
        let file = File::open(path).map_err(|source| SimError::Input {
            path: path.clone(),
            source,
        })?;
        let corpus = read_corpus(BufReader::new(file)).map_err(|source| SimError::Corpus {
            path: path.clone(),
            source,
        })?;
        if let Some(e) = corpus.iter().find(|e| e.hypotheses.len() < 2) {
            return Err(SimError::Config(format!("corpus entry {} needs at least two hypotheses", e.id)));
        }
        Ok(corpus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub human_labels: usize,
    pub heldout_top1: f64,
    pub heldout_top3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoLabelPoint {
    pub human_labels: usize,
    pub labeled: usize,
    pub pool_size: usize,
    pub fraction_auto: f64,
}

/// One row of the best-model-prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub model: String,
    pub top1: f64,
    pub top3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub segments: usize,
    pub top1: f64,
    pub top3: f64,
    /// Expected top-1 of a uniform random pick, `1 / n_providers`.
    pub random_baseline_top1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub labeled: usize,
    /// Pseudo labels naming a hypothesis with the highest hidden score.
    pub agreeing: usize,
    /// `agreeing / labeled`; absent when nothing was labeled.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub strategy: String,
    pub n_providers: usize,
    pub train_segments: usize,
    pub human_labels: usize,
    pub pseudo_labels: usize,
    pub pool_exhausted: bool,
    /// Human labels at the first time held-out top-1 reached the target.
    pub annotations_to_target: Option<usize>,
    pub learning_curve: Vec<CurvePoint>,
    pub heldout: HeldOut,
    pub topk: Vec<TopkRow>,
    pub correlation: Option<CorrelationReport>,
    pub improvement: Option<ImprovementStats>,
    pub fraction_auto: Vec<AutoLabelPoint>,
    pub pseudo_label_quality: PseudoLabelQuality,
    pub state_hash: String,
}

/// A finished run: the report plus the committed events, for replay checks.
#[derive(Debug)]
pub struct SimulationRun {
    pub report: SimulationReport,
    pub events: Vec<Event>,
    /// Ranker confidence per unlabeled training segment when human labeling
    /// stopped, before the final auto-label pass.
    pub pool_confidences: Vec<f64>,
}

/// Hidden-reference oracle for one segment.
struct Oracle {
    /// Noiseless direct assessment per hypothesis, in segment order.
    scores: Vec<f64>,
}

impl Oracle {
    fn best(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_best(&self, i: usize) -> bool {
        self.scores[i] == self.best()
    }

    /// Indices by descending score, ties in hypothesis order.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

struct HeldOutSet {
    features: Vec<Vec<FeatureVector>>,
    oracles: Vec<Oracle>,
}

impl HeldOutSet {
    fn evaluate(&self, engine: &Engine) -> Result<(f64, f64), SimError> {
        if self.oracles.is_empty() {
            return Ok((0.0, 0.0));
        }
        let model = engine.model();
        let (mut top1, mut top3) = (0usize, 0usize);
        for (fvs, oracle) in self.features.iter().zip(&self.oracles) {
            let ranking = rank_best(model, fvs).map_err(EngineError::from)?;
            if oracle.is_best(ranking.order[0]) {
                top1 += 1;
            }
            if ranking.order.iter().take(3).any(|&i| oracle.is_best(i)) {
                top3 += 1;
            }
        }
        let n = self.oracles.len() as f64;
        Ok((top1 as f64 / n, top3 as f64 / n))
    }
}

fn provider(id: &str, kind: ProviderKind, backend: Arc<dyn mtloop_core::providers::Backend>) -> Provider {
    Provider::new(
        ProviderModel {
            id: id.into(),
            kind,
            endpoint: "mock:reference".into(),
            display_name: id.into(),
        },
        backend,
    )
}

fn simulated_providers(cfg: &SimulationConfig, refs: Arc<HashMap<String, String>>) -> Providers {
    let judge = LlmClient::new(provider(
        "judge",
        ProviderKind::LLM,
        Arc::new(MockLlm::new(Arc::clone(&refs)).with_noise(cfg.seed, cfg.judge_noise)),
    ));
    let teacher = LlmClient::new(provider(
        "teacher",
        ProviderKind::LLM,
        Arc::new(MockLlm::new(Arc::clone(&refs)).with_noise(cfg.seed ^ 0x7EAC_4E55, cfg.teacher_noise)),
    ));
    let embedder = MockEmbedder::new(refs, cfg.embedding_dim, cfg.seed, cfg.embedding_noise);
    Providers {
        mt: Vec::new(),
        judge: Some(judge),
        teacher: Some(Arc::new(teacher) as Arc<dyn TeacherMetric>),
        embedder: Some(Arc::new(embedder) as Arc<dyn Embedder>),
    }
}

fn oracle_for(judge: &MockLlm, source: &str, texts: &[&str]) -> Oracle {
    Oracle {
        scores: texts
            .iter()
            .map(|t| judge.direct_assessment(source, t).expect("every corpus source has a reference"))
            .collect(),
    }
}

/// Runs the loop described by `cfg`. The outcome depends on `cfg` alone.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationRun, SimError> {
    let corpus = cfg.corpus()?;
    let mut cfg = cfg.clone();
    if cfg.corpus_path.is_some() {
        let ids: BTreeSet<&str> = corpus.iter().flat_map(|e| e.hypotheses.iter().map(|h| h.provider_id.as_str())).collect();
        cfg.n_providers = ids.len();
    }
    cfg.validate()?;
    let strategy = cfg.strategy()?;

    let refs: Arc<HashMap<String, String>> = Arc::new(corpus.iter().map(|e| (e.source.clone(), e.reference.clone())).collect());
    let hidden = MockLlm::new(Arc::clone(&refs));

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED)));
    let n_held = (corpus.len() as f64 * cfg.held_out_fraction).round() as usize;
    let held: BTreeSet<usize> = order[..n_held].iter().copied().collect();

    let clock = Arc::new(ManualClock::new(0));
    let store = Store::in_memory(Box::new(Arc::clone(&clock)));
    let engine_cfg = EngineConfig {
        annotators: BTreeSet::from([ANNOTATOR.to_string()]),
        hyperparams: cfg.hyperparams(),
        synthesize: false,
        default_strategy: strategy,
        snapshot_dir: None,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(store, simulated_providers(&cfg, Arc::clone(&refs)), engine_cfg)?;
    engine.set_threshold(cfg.tau)?;
    engine.set_weights(cfg.weights.quality, cfg.weights.ter, cfg.weights.llm)?;

    let mut heldout = HeldOutSet {
        features: Vec::new(),
        oracles: Vec::new(),
    };
    let mut by_id: HashMap<String, &CorpusEntry> = HashMap::new();
    for (i, entry) in corpus.iter().enumerate() {
        let texts: Vec<&str> = entry.hypotheses.iter().map(|h| h.text.as_str()).collect();
        if held.contains(&i) {
            // A segment whose hypotheses all score alike has no wrong answer;
            // scoring it would only inflate accuracy.
            let oracle = oracle_for(&hidden, &entry.source, &texts);
            if oracle.scores.iter().all(|&s| s == oracle.scores[0]) {
                continue;
            }
            let langs = Langs::new(&entry.source_lang, &entry.target_lang);
            heldout.features.push(engine.features_for(&entry.source, &texts, langs)?);
            heldout.oracles.push(oracle);
        } else {
            engine.ingest(IngestRequest::from(entry))?;
            by_id.insert(entry.id.clone(), entry);
        }
    }
    let train_segments = by_id.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xA11CE));
    let mut curve = Vec::new();
    let mut auto_points = Vec::new();
    let mut annotations_to_target = None;
    let mut human = 0usize;
    let mut pool_exhausted = false;

    let record = |engine: &Engine, human: usize, curve: &mut Vec<CurvePoint>, hit: &mut Option<usize>| -> Result<(), SimError> {
        let (top1, top3) = heldout.evaluate(engine)?;
        curve.push(CurvePoint {
            human_labels: human,
            heldout_top1: top1,
            heldout_top3: top3,
        });
        if hit.is_none() && cfg.target_top1.is_some_and(|t| top1 >= t) {
            *hit = Some(human);
        }
        Ok(())
    };
    record(&engine, 0, &mut curve, &mut annotations_to_target)?;

    while human < cfg.budget && annotations_to_target.is_none() {
        let sample = match engine.next_sample(ANNOTATOR, None) {
            Ok(s) => s,
            Err(EngineError::PoolEmpty) => {
                pool_exhausted = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let seg = &sample.segment;
        let entry = by_id[&seg.id];
        let texts: Vec<&str> = seg.hypotheses.iter().map(|h| h.text.as_str()).collect();
        let oracle = oracle_for(&hidden, &seg.source_text, &texts);
        let ranked = oracle.order();
        let pick = if ranked.len() > 1 && rng.random_bool(cfg.annotator_noise) {
            ranked[1]
        } else {
            ranked[0]
        };
        let chosen = &seg.hypotheses[pick];
        let request = if chosen.text == entry.reference {
            SubmitRequest {
                segment_id: seg.id.clone(),
                annotator_id: ANNOTATOR.into(),
                chosen_provider_id: chosen.provider_id.clone(),
                error_categories: BTreeSet::from([ErrorCategory::NoEdit]),
                post_edit_text: None,
            }
        } else {
            let ter = ter_text(&chosen.text, &entry.reference).unwrap_or(1.0);
            let category = if ter >= 0.3 { ErrorCategory::Accuracy } else { ErrorCategory::Fluency };
            SubmitRequest {
                segment_id: seg.id.clone(),
                annotator_id: ANNOTATOR.into(),
                chosen_provider_id: chosen.provider_id.clone(),
                error_categories: BTreeSet::from([category]),
                post_edit_text: Some(entry.reference.clone()),
            }
        };
        clock.advance(1_000);
        engine.submit(request)?;
        human += 1;
        record(&engine, human, &mut curve, &mut annotations_to_target)?;
        if cfg.auto_label_every > 0 && human.is_multiple_of(cfg.auto_label_every) {
            auto_points.push(auto_label(&mut engine, human)?);
        }
    }
    let pool_confidences = engine.pool_confidences()?;
    if cfg.final_auto_label {
        auto_points.push(auto_label(&mut engine, human)?);
    }

    let state = engine.state();
    let mut quality = PseudoLabelQuality {
        labeled: 0,
        agreeing: 0,
        precision: None,
    };
    for rec in state.final_labels().values().filter(|r| r.annotation.is_pseudo) {
        let seg = &state.segments[&rec.annotation.segment_id];
        let texts: Vec<&str> = seg.hypotheses.iter().map(|h| h.text.as_str()).collect();
        let oracle = oracle_for(&hidden, &seg.source_text, &texts);
        let chosen = seg.hypothesis_index(&rec.annotation.chosen_provider_id).expect("label names a hypothesis");
        quality.labeled += 1;
        if oracle.is_best(chosen) {
            quality.agreeing += 1;
        }
    }
    quality.precision = (quality.labeled > 0).then(|| quality.agreeing as f64 / quality.labeled as f64);

    let stats = admin_stats(state, &engine.pool_confidences()?);
    let mut topk = Vec::new();
    for (name, acc) in [("LLM-based", stats.topk.llm), ("Online ranker", stats.topk.ranker)] {
        if let Some(a) = acc {
            topk.push(TopkRow {
                model: name.into(),
                top1: a.top1,
                top3: a.top3,
                n: a.n,
            });
        }
    }
    let last = *curve.last().expect("curve starts with the untrained point");
    let report = SimulationReport {
        seed: cfg.seed,
        strategy: strategy.name().to_string(),
        n_providers: cfg.n_providers,
        train_segments,
        human_labels: human,
        pseudo_labels: quality.labeled,
        pool_exhausted,
        annotations_to_target,
        heldout: HeldOut {
            segments: heldout.oracles.len(),
            top1: last.heldout_top1,
            top3: last.heldout_top3,
            random_baseline_top1: 1.0 / cfg.n_providers as f64,
        },
        learning_curve: curve,
        topk,
        correlation: stats.correlation,
        improvement: stats.improvement,
        fraction_auto: auto_points,
        pseudo_label_quality: quality,
        state_hash: state.hash(),
    };
    Ok(SimulationRun {
        report,
        events: engine.store().events().map_err(EngineError::from)?,
        pool_confidences,
    })
}

fn auto_label(engine: &mut Engine, human: usize) -> Result<AutoLabelPoint, SimError> {
    let out = engine.auto_label()?;
    Ok(AutoLabelPoint {
        human_labels: human,
        labeled: out.labeled_count,
        pool_size: out.pool_size,
        fraction_auto: out.fraction_auto,
    })
}
