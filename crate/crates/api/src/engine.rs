//! The annotation workflow on top of the store: ingestion and enrichment,
//! leasing, submission with online model updates, pseudo-labeling and
//! admin configuration. Every mutation is a committed event.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use mtloop_core::corpus::{CorpusEntry, CorpusHypothesis};
use mtloop_core::domain::{
    check_tau, Annotation, ErrorCategory, Hypothesis, PriorityWeights, Segment, SegmentStatus, ThresholdConfig,
    ENSEMBLE_PROVIDER_ID, MAX_HYPOTHESES,
};
use mtloop_core::features::{FeatureAssembler, FeatureError, FeatureVector};
use mtloop_core::learner::{
    predict, update_ranker, update_regressor, update_ter_head, Hyperparams, LearnerError, ModelState, SegmentPrediction,
};
use mtloop_core::metrics::{improvement_pct, ter_text};
use mtloop_core::providers::{fan_out, Embedder, Langs, LlmAnalysis, LlmClient, Provider, ProviderError, TeacherMetric};
use mtloop_core::scheduler::{order_pool, pseudo_label_pass, PoolEntry, PriorityRecord, SchedulerError, Strategy};
use mtloop_core::store::{write_corpus_jsonl, write_snapshot, Event, EventPayload, HypothesisScores, ProjectState, Store, StoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::stats::{admin_stats, annotator_summaries, segments_overview, AdminStats, AnnotatorSummary, SegmentsOverview};

pub const DEFAULT_LEASE_TTL_MS: u64 = 15 * 60 * 1000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("no segment is available for annotation")]
    PoolEmpty,
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("segment `{0}` already exists")]
    DuplicateSegment(String),
    #[error("segment `{0}` is already human-labeled")]
    StaleSegment(String),
    #[error("lease on `{0}` has expired")]
    LeaseExpired(String),
    #[error("segment `{segment_id}` is not leased to `{annotator_id}`")]
    NotLeased { segment_id: String, annotator_id: String },
    #[error("invalid request: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("{0}")]
    OutOfRange(String),
    #[error("stored model uses feature schema {model:08x}, configured features use {configured:08x}")]
    SchemaMismatch { model: u32, configured: u32 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl From<SchedulerError> for EngineError {
    fn from(e: SchedulerError) -> Self {
        match e {
            SchedulerError::EmptyPool => EngineError::PoolEmpty,
            other => EngineError::OutOfRange(other.to_string()),
        }
    }
}

/// External services the engine talks to. Every one is optional; missing
/// services leave the corresponding scores absent.
#[derive(Clone, Default)]
pub struct Providers {
    pub mt: Vec<Provider>,
    /// LLM used for direct assessment, synthesis, recommendation and analysis.
    pub judge: Option<LlmClient>,
    /// Score the regressor learns from.
    pub teacher: Option<Arc<dyn TeacherMetric>>,
    pub embedder: Option<Arc<dyn Embedder>>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("mt", &self.mt.iter().map(Provider::id).collect::<Vec<_>>())
            .field("judge", &self.judge.as_ref().map(|j| j.provider().id().to_string()))
            .field("teacher", &self.teacher.as_ref().map(|t| t.id().to_string()))
            .field("embedder", &self.embedder.as_ref().map(|e| e.dim()))
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub lease_ttl_ms: u64,
    pub annotators: BTreeSet<String>,
    pub hyperparams: Hyperparams,
    /// Attach an LLM ensemble translation when a segment has room for one.
    pub synthesize: bool,
    pub default_strategy: Strategy,
    /// Write `snapshot-<seq>.json` into this directory every `snapshot_every` events.
    pub snapshot_dir: Option<PathBuf>,
    pub snapshot_every: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            lease_ttl_ms: DEFAULT_LEASE_TTL_MS,
            annotators: BTreeSet::new(),
            hyperparams: Hyperparams::default(),
            synthesize: true,
            default_strategy: Strategy::Tripartite,
            snapshot_dir: None,
            snapshot_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub id: String,
    pub source: String,
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    /// Pre-computed translations; when empty the MT providers are asked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hypotheses: Vec<CorpusHypothesis>,
}

impl From<&CorpusEntry> for IngestRequest {
    fn from(e: &CorpusEntry) -> Self {
        Self {
            id: e.id.clone(),
            source: e.source.clone(),
            source_lang: e.source_lang.clone(),
            target_lang: e.target_lang.clone(),
            topic: e.topic.clone(),
            hypotheses: e.hypotheses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextSample {
    /// Hypotheses carry the current model's predicted quality and TER.
    pub segment: Segment,
    pub strategy: String,
    pub priority: PriorityRecord,
    /// Provider ids by descending ranker probability.
    pub ranker_order: Vec<String>,
    pub ranker_confidence: f64,
    pub ranker_margin: f64,
    /// Provider ids with the LLM's recommendation first.
    pub llm_ranking: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_recommendation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation_rationale: Option<String>,
    pub lease_expires_at: u64,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub segment_id: String,
    pub annotator_id: String,
    pub chosen_provider_id: String,
    pub error_categories: BTreeSet<ErrorCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_edit_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReceipt {
    pub segment_id: String,
    pub seq: u64,
    /// `100·(after − before)/before` on the chosen hypothesis; absent when
    /// either score is unavailable or the pre-edit score is 0.
    pub improvement_pct: Option<f64>,
    pub score_before: Option<f64>,
    pub score_after: Option<f64>,
    pub resolved_categories: BTreeSet<ErrorCategory>,
    pub remaining_categories: BTreeSet<ErrorCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_text: Option<String>,
    pub new_model_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoLabelOutcome {
    pub labeled_count: usize,
    pub pool_size: usize,
    pub fraction_auto: f64,
}

pub struct Engine {
    store: Store,
    providers: Providers,
    cfg: EngineConfig,
    assembler: FeatureAssembler,
    fresh_model: ModelState,
    features: HashMap<String, Vec<FeatureVector>>,
    predictions: HashMap<String, SegmentPrediction>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store)
            .field("providers", &self.providers)
            .finish_non_exhaustive()
    }
}

fn langs(seg: &Segment) -> Langs<'_> {
    Langs::new(&seg.source_lang, &seg.target_lang)
}

impl Engine {
    pub fn new(store: Store, providers: Providers, cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.hyperparams.check()?;
        let mut assembler = FeatureAssembler::new();
        if let Some(e) = &providers.embedder {
            assembler.register_embedding_dim(e.dim());
        }
        let schema = Arc::clone(assembler.schema());
        if let Some(m) = &store.state().model {
            if m.schema_checksum != schema.checksum() {
                return Err(EngineError::SchemaMismatch {
                    model: m.schema_checksum,
                    configured: schema.checksum(),
                });
            }
        }
        let mut engine = Self {
            store,
            providers,
            cfg,
            fresh_model: ModelState::new(&schema, Hyperparams::default()),
            assembler,
            features: HashMap::new(),
            predictions: HashMap::new(),
        };
        engine.fresh_model.hyperparams = engine.cfg.hyperparams;
        let ids: Vec<String> = engine.store.state().segments.keys().cloned().collect();
        for id in ids {
            engine.refresh_features(&id)?;
        }
        Ok(engine)
    }

    pub fn state(&self) -> &ProjectState {
        self.store.state()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn assembler(&self) -> &FeatureAssembler {
        &self.assembler
    }

    /// Latest committed model, or an untrained one.
    pub fn model(&self) -> &ModelState {
        self.state().model.as_ref().unwrap_or(&self.fresh_model)
    }

    pub fn now_ms(&self) -> u64 {
        self.store.clock().now_ms()
    }

    pub fn features_of(&self, segment_id: &str) -> Option<&[FeatureVector]> {
        self.features.get(segment_id).map(Vec::as_slice)
    }

    /// Feature vectors for `hypotheses` of a segment outside the store,
    /// embedding through the configured embedder.
    pub fn features_for(&self, source: &str, hypotheses: &[&str], langs: Langs<'_>) -> Result<Vec<FeatureVector>, EngineError> {
        hypotheses
            .iter()
            .map(|h| {
                let emb = match &self.providers.embedder {
                    Some(e) => Some(e.embed(source, h, langs)?),
                    None => None,
                };
                Ok(self.assembler.extract(source, h, emb.as_deref())?)
            })
            .collect()
    }

    fn commit(&mut self, payload: EventPayload) -> Result<Event, EngineError> {
        let event = self.store.commit(payload)?;
        match &event.payload {
            EventPayload::SegmentIngested { segment } => self.refresh_features(&segment.id)?,
            EventPayload::HypothesisAttached { segment_id, .. } | EventPayload::ScoresAttached { segment_id, .. } => {
                self.refresh_features(segment_id)?
            }
            EventPayload::ModelUpdated { .. } => self.predictions.clear(),
            _ => {}
        }
        if let Some(dir) = &self.cfg.snapshot_dir {
            if self.cfg.snapshot_every > 0 && event.seq % self.cfg.snapshot_every == 0 {
                write_snapshot(dir, self.store.state())?;
            }
        }
        Ok(event)
    }

    fn refresh_features(&mut self, id: &str) -> Result<(), EngineError> {
        let state = self.store.state();
        let seg = state.segment(id).ok_or_else(|| EngineError::UnknownSegment(id.into()))?;
        let stored = state.embeddings.get(id);
        let zeros = self.assembler.embedding_dim().map(|d| vec![0.0; d]);
        let fvs = seg
            .hypotheses
            .iter()
            .map(|h| {
                let emb = stored.and_then(|m| m.get(&h.provider_id)).or(zeros.as_ref());
                self.assembler.extract(&seg.source_text, &h.text, emb.map(Vec::as_slice))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.features.insert(id.to_string(), fvs);
        self.predictions.remove(id);
        Ok(())
    }

    fn prediction(&mut self, id: &str) -> Result<&SegmentPrediction, EngineError> {
        if !self.predictions.contains_key(id) {
            let fvs = self.features.get(id).ok_or_else(|| EngineError::UnknownSegment(id.into()))?;
            let p = predict(self.model(), fvs)?;
            self.predictions.insert(id.to_string(), p);
        }
        Ok(&self.predictions[id])
    }

    fn check_annotator(&self, id: &str) -> Result<(), EngineError> {
        if self.cfg.annotators.contains(id) {
            Ok(())
        } else {
            Err(EngineError::UnknownAnnotator(id.into()))
        }
    }

    fn actively_leased(&self, id: &str, now: u64) -> bool {
        self.state().leases.get(id).is_some_and(|l| l.expires_at > now)
    }

    /// Commits a new segment, filling in MT hypotheses when none are given,
    /// then attaches ensemble, scores, embeddings and the LLM recommendation.
    pub fn ingest(&mut self, req: IngestRequest) -> Result<Segment, EngineError> {
        if self.state().segments.contains_key(&req.id) {
            return Err(EngineError::DuplicateSegment(req.id));
        }
        let mut hyps: Vec<Hypothesis> = req
            .hypotheses
            .iter()
            .map(|h| Hypothesis::new(h.provider_id.clone(), h.text.clone()))
            .collect();
        if hyps.is_empty() {
            let l = Langs::new(&req.source_lang, &req.target_lang);
            let mut first_err = None;
            for r in fan_out(&self.providers.mt, &req.source, l) {
                match r {
                    Ok(h) => hyps.push(h),
                    Err(e) => {
                        warn!(segment = %req.id, error = %e, "translation failed");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if hyps.is_empty() {
                return Err(match first_err {
                    Some(e) => e.into(),
                    None => EngineError::Validation(vec!["no hypotheses given and no MT provider configured".into()]),
                });
            }
        }
        let mut seg = Segment::new(req.id, req.source, req.source_lang, req.target_lang, hyps);
        seg.topic = req.topic;
        let problems = seg.violations();
        if !problems.is_empty() {
            return Err(EngineError::Validation(problems.iter().map(ToString::to_string).collect()));
        }
        // Provider calls happen before anything is committed, so a failing
        // provider leaves no half-ingested segment behind.
        let follow_up = self.enrichment(&seg)?;
        let id = seg.id.clone();
        self.commit(EventPayload::SegmentIngested { segment: seg })?;
        for event in follow_up {
            self.commit(event)?;
        }
        Ok(self.state().segments[&id].clone())
    }

    /// Ensemble hypothesis and scores for a not yet committed segment.
    fn enrichment(&self, seg: &Segment) -> Result<Vec<EventPayload>, EngineError> {
        let l = langs(seg);
        let id = seg.id.clone();
        let mut hyps = seg.hypotheses.clone();
        let mut events = Vec::new();
        if let Some(judge) = &self.providers.judge {
            let room = hyps.len() >= 2 && hyps.len() < MAX_HYPOTHESES;
            if self.cfg.synthesize && room && seg.hypothesis(ENSEMBLE_PROVIDER_ID).is_none() {
                let h = judge.synthesize_translation(&seg.source_text, &hyps, l)?;
                events.push(EventPayload::HypothesisAttached {
                    segment_id: id.clone(),
                    hypothesis: h.clone(),
                });
                hyps.push(h);
            }
        }
        let mut scores = Vec::new();
        for h in &hyps {
            let teacher_score = match &self.providers.teacher {
                Some(t) => Some(t.score(&seg.source_text, &h.text, l)?),
                None => None,
            };
            let llm_score = match &self.providers.judge {
                Some(j) => Some(j.score_direct_assessment(&seg.source_text, &h.text, l)?),
                None => None,
            };
            let embedding = match &self.providers.embedder {
                Some(e) => Some(e.embed(&seg.source_text, &h.text, l)?),
                None => None,
            };
            if teacher_score.is_some() || llm_score.is_some() || embedding.is_some() {
                scores.push(HypothesisScores {
                    provider_id: h.provider_id.clone(),
                    teacher_score,
                    llm_score,
                    embedding,
                });
            }
        }
        let mut llm_ranking = Vec::new();
        let mut rationale = None;
        if let (Some(judge), true) = (&self.providers.judge, hyps.len() >= 2) {
            let rec = judge.recommend_best(&seg.source_text, &hyps, l)?;
            llm_ranking = llm_order(&hyps, &scores, &rec.provider_id);
            rationale = Some(rec.rationale);
        }
        if !scores.is_empty() || !llm_ranking.is_empty() {
            events.push(EventPayload::ScoresAttached {
                segment_id: id,
                scores,
                llm_ranking,
                recommendation_rationale: rationale,
            });
        }
        Ok(events)
    }

    /// Leases the head of the pool, in `strategy` order, to `annotator`.
    pub fn next_sample(&mut self, annotator: &str, strategy: Option<Strategy>) -> Result<NextSample, EngineError> {
        let mut batch = self.next_batch(annotator, strategy, 1)?;
        Ok(batch.remove(0))
    }

    /// Leases up to `count` segments from the head of the pool.
    pub fn next_batch(&mut self, annotator: &str, strategy: Option<Strategy>, count: usize) -> Result<Vec<NextSample>, EngineError> {
        self.check_annotator(annotator)?;
        if count == 0 {
            return Err(EngineError::OutOfRange("batch size must be at least 1".into()));
        }
        let strategy = strategy.unwrap_or(self.cfg.default_strategy);
        let now = self.now_ms();
        let ids: Vec<String> = self
            .state()
            .unlabeled()
            .filter(|s| !self.actively_leased(&s.id, now))
            .map(|s| s.id.clone())
            .collect();
        if ids.is_empty() {
            return Err(EngineError::PoolEmpty);
        }
        let mut pool = Vec::with_capacity(ids.len());
        for id in &ids {
            let llm: Vec<Option<f64>> = self.state().segments[id].hypotheses.iter().map(|h| h.llm_score).collect();
            let p = self.prediction(id)?;
            pool.push(PoolEntry::from_prediction(id.clone(), p, &llm));
        }
        let version = self.model().version;
        let head = order_pool(&pool, &self.state().config, strategy, version)?;
        let expires_at = now.saturating_add(self.cfg.lease_ttl_ms);
        let mut out = Vec::with_capacity(count.min(head.len()));
        for record in head.into_iter().take(count) {
            self.commit(EventPayload::SegmentLeased {
                segment_id: record.segment_id.clone(),
                annotator_id: annotator.to_string(),
                expires_at,
            })?;
            out.push(self.sample_view(record, strategy, expires_at)?);
        }
        Ok(out)
    }

    fn sample_view(&mut self, priority: PriorityRecord, strategy: Strategy, expires_at: u64) -> Result<NextSample, EngineError> {
        let id = priority.segment_id.clone();
        let prediction = self.prediction(&id)?.clone();
        let version = self.model().version;
        let state = self.state();
        let mut segment = state.segments[&id].clone();
        for (h, p) in segment.hypotheses.iter_mut().zip(&prediction.predictions) {
            h.predicted_quality = Some(p.quality);
            h.predicted_ter = Some(p.ter_estimate);
        }
        let llm_ranking = state.llm_rankings.get(&id).cloned().unwrap_or_default();
        Ok(NextSample {
            ranker_order: prediction
                .ranking
                .order
                .iter()
                .map(|&i| segment.hypotheses[i].provider_id.clone())
                .collect(),
            ranker_confidence: prediction.ranking.confidence,
            ranker_margin: prediction.ranking.margin,
            llm_recommendation: llm_ranking.first().cloned(),
            llm_ranking,
            recommendation_rationale: state.recommendation_rationales.get(&id).cloned(),
            lease_expires_at: expires_at,
            model_version: version,
            strategy: strategy.name().to_string(),
            priority,
            segment,
        })
    }

    /// Direct assessment by the judge, falling back to the teacher.
    fn score_text(&self, seg: &Segment, text: &str) -> Result<Option<f64>, EngineError> {
        let l = langs(seg);
        if let Some(j) = &self.providers.judge {
            return Ok(Some(j.score_direct_assessment(&seg.source_text, text, l)?));
        }
        if let Some(t) = &self.providers.teacher {
            return Ok(Some(t.score(&seg.source_text, text, l)?));
        }
        Ok(None)
    }

    /// Records a human label, scores and analyses the post-edit, then trains
    /// the model on it. Nothing is committed when validation or a provider
    /// call fails.
    pub fn submit(&mut self, req: SubmitRequest) -> Result<AnnotationReceipt, EngineError> {
        self.check_annotator(&req.annotator_id)?;
        let now = self.now_ms();
        let seg = self
            .state()
            .segment(&req.segment_id)
            .ok_or_else(|| EngineError::UnknownSegment(req.segment_id.clone()))?
            .clone();
        if seg.status == SegmentStatus::HumanLabeled {
            return Err(EngineError::StaleSegment(seg.id));
        }
        match self.state().leases.get(&seg.id) {
            Some(l) if l.annotator_id == req.annotator_id => {
                if now >= l.expires_at {
                    return Err(EngineError::LeaseExpired(seg.id));
                }
            }
            _ => {
                return Err(EngineError::NotLeased {
                    segment_id: seg.id,
                    annotator_id: req.annotator_id,
                })
            }
        }

        let no_edit = req.error_categories.contains(&ErrorCategory::NoEdit);
        let chosen = seg.hypothesis_index(&req.chosen_provider_id);
        let annotation = Annotation {
            segment_id: seg.id.clone(),
            annotator_id: req.annotator_id.clone(),
            chosen_provider_id: req.chosen_provider_id.clone(),
            error_categories: req.error_categories.clone(),
            post_edit_text: req.post_edit_text.clone(),
            is_pseudo: false,
            confidence: None,
            timestamp: self.store.next_seq(),
        };
        let mut problems: Vec<String> = annotation.violations(None).iter().map(ToString::to_string).collect();
        if chosen.is_none() {
            problems.push(format!("segment has no hypothesis from `{}`", req.chosen_provider_id));
        }
        if let Some(p) = &req.post_edit_text {
            if p.trim().is_empty() {
                problems.push("post-edit text is empty".into());
            }
        }
        let Some(chosen) = chosen.filter(|_| problems.is_empty()) else {
            return Err(EngineError::Validation(problems));
        };
        let chosen_text = seg.hypotheses[chosen].text.clone();
        let edited = req.post_edit_text.as_deref().filter(|p| p.trim() != chosen_text.trim());
        if no_edit && edited.is_some() {
            return Err(EngineError::Validation(vec!["NoEdit label with a changed post-edit".into()]));
        }

        let h = &seg.hypotheses[chosen];
        let score_before = match h.llm_score.or(h.teacher_score) {
            Some(s) => Some(s),
            None => self.score_text(&seg, &chosen_text)?,
        };
        let prior: BTreeSet<ErrorCategory> = req
            .error_categories
            .iter()
            .copied()
            .filter(|c| *c != ErrorCategory::NoEdit)
            .collect();
        let (score_after, analysis): (Option<f64>, Option<LlmAnalysis>) = match edited {
            None => (score_before, None),
            Some(post) => {
                let after = self.score_text(&seg, post)?;
                let analysis = match &self.providers.judge {
                    Some(j) => Some(j.analyze_annotation(&seg.source_text, &chosen_text, post, &prior, langs(&seg))?),
                    None => None,
                };
                (after, analysis)
            }
        };
        let final_text = edited.unwrap_or(&chosen_text).to_string();
        let observed_ter = ter_text(&chosen_text, &final_text).ok();

        let features = self.features[&seg.id].clone();
        let ranking_before = self.prediction(&seg.id)?.ranking.order.clone();
        let event = self.commit(EventPayload::AnnotationSubmitted {
            annotation,
            ranker_ranking: ranking_before
                .iter()
                .map(|&i| seg.hypotheses[i].provider_id.clone())
                .collect(),
            score_before,
            score_after,
            analysis: analysis.clone(),
            observed_ter,
        })?;

        let mut model = self.model().clone();
        for (h, fv) in seg.hypotheses.iter().zip(&features) {
            if let Some(t) = h.teacher_score {
                model = update_regressor(&model, fv, t)?;
            }
            if let Ok(t) = ter_text(&h.text, &final_text) {
                model = update_ter_head(&model, fv, t)?;
            }
        }
        model = update_ranker(&model, &features, chosen)?;
        let new_model_version = model.version;
        self.commit(EventPayload::ModelUpdated { model })?;

        let (resolved, remaining, feedback) = match analysis {
            Some(a) => (a.resolved_categories, a.remaining_categories, Some(a.feedback_text)),
            None => (BTreeSet::new(), prior, None),
        };
        Ok(AnnotationReceipt {
            segment_id: seg.id,
            seq: event.seq,
            improvement_pct: match (score_before, score_after) {
                (Some(b), Some(a)) => improvement_pct(b, a).ok(),
                _ => None,
            },
            score_before,
            score_after,
            resolved_categories: resolved,
            remaining_categories: remaining,
            feedback_text: feedback,
            new_model_version,
        })
    }

    /// Pseudo-labels every unleased unlabeled segment whose ranker confidence
    /// reaches the threshold. The pass is recorded even when it labels nothing.
    pub fn auto_label(&mut self) -> Result<AutoLabelOutcome, EngineError> {
        let now = self.now_ms();
        let state = self.store.state();
        let pool: Vec<(&Segment, &[FeatureVector])> = state
            .unlabeled()
            .filter(|s| !self.actively_leased(&s.id, now))
            .map(|s| (s, self.features[&s.id].as_slice()))
            .collect();
        let tau = state.config.tau;
        let pass = pseudo_label_pass(&pool, self.model(), &state.config, self.store.next_seq());
        let pool_size = pool.len();
        let labeled_count = pass.annotations.len();
        self.commit(EventPayload::PseudoLabeled {
            annotations: pass.annotations,
            pool_size,
            tau,
        })?;
        Ok(AutoLabelOutcome {
            labeled_count,
            pool_size,
            fraction_auto: pass.fraction_auto,
        })
    }

    pub fn set_threshold(&mut self, tau: f64) -> Result<ThresholdConfig, EngineError> {
        check_tau(tau).map_err(|e| EngineError::OutOfRange(e.to_string()))?;
        self.commit(EventPayload::ThresholdChanged { tau })?;
        Ok(self.state().config)
    }

    pub fn set_weights(&mut self, quality: f64, ter: f64, llm: f64) -> Result<ThresholdConfig, EngineError> {
        let weights = PriorityWeights::new(quality, ter, llm).map_err(|e| EngineError::OutOfRange(e.to_string()))?;
        self.commit(EventPayload::WeightsChanged { weights })?;
        Ok(self.state().config)
    }

    /// Ranker confidence of every unlabeled segment, in id order.
    pub fn pool_confidences(&self) -> Result<Vec<f64>, EngineError> {
        let model = self.model();
        self.state()
            .unlabeled()
            .map(|s| match self.predictions.get(&s.id) {
                Some(p) => Ok(p.ranking.confidence),
                None => Ok(predict(model, &self.features[&s.id])?.ranking.confidence),
            })
            .collect()
    }

    pub fn stats(&self) -> Result<AdminStats, EngineError> {
        Ok(admin_stats(self.state(), &self.pool_confidences()?))
    }

    pub fn segments_overview(&self, rated: Option<bool>) -> SegmentsOverview {
        segments_overview(self.state(), rated)
    }

    pub fn annotators(&self) -> Vec<AnnotatorSummary> {
        annotator_summaries(self.state(), &self.cfg.annotators, self.now_ms())
    }

    pub fn export_corpus(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_corpus_jsonl(self.state(), &mut out).expect("writing to memory");
        out
    }
}

/// Recommended provider first, then the rest by descending LLM score, ties
/// in hypothesis order.
fn llm_order(hyps: &[Hypothesis], scores: &[HypothesisScores], recommended: &str) -> Vec<String> {
    let score_of = |id: &str| {
        scores
            .iter()
            .find(|s| s.provider_id == id)
            .and_then(|s| s.llm_score)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut rest: Vec<&Hypothesis> = hyps.iter().filter(|h| h.provider_id != recommended).collect();
    rest.sort_by(|a, b| score_of(&b.provider_id).total_cmp(&score_of(&a.provider_id)));
    std::iter::once(recommended.to_string())
        .chain(rest.into_iter().map(|h| h.provider_id.clone()))
        .collect()
}
