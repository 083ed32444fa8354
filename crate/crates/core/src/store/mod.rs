//! Event-sourced persistence. Every mutation is an appended [`Event`];
//! [`ProjectState`] is a deterministic fold over the log.

mod clock;
mod export;
mod history;
mod log;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    validate_annotation, validate_segment, Annotation, Hypothesis, PriorityWeights, Segment, SegmentStatus,
    ThresholdConfig, MAX_HYPOTHESES,
};
use crate::learner::ModelState;
use crate::providers::LlmAnalysis;

pub use clock::{Clock, ManualClock, SystemClock};
pub use history::random_history;
pub use export::{corpus_records, write_corpus_jsonl, CorpusRecord, Provenance, CORPUS_FILE};
pub use log::{decode, frame, Decoded, EventLog, FileLog, MemoryLog, LOG_FILE};
pub use snapshot::{latest_snapshot, load_snapshot, snapshot_file_name, write_snapshot, Snapshot};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full (limit {limit} bytes)")]
    StorageFull { limit: u64 },
    #[error("event cannot be serialized faithfully: {0}")]
    Serialization(String),
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("event rejected: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-hypothesis scores delivered by the teacher and the LLM judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HypothesisScores {
    pub provider_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
    /// Sentence-pair embedding used as extra learner features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    SegmentIngested {
        segment: Segment,
    },
    HypothesisAttached {
        segment_id: String,
        hypothesis: Hypothesis,
    },
    ScoresAttached {
        segment_id: String,
        scores: Vec<HypothesisScores>,
        /// Provider ids in the LLM's preference order, recommended first.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        llm_ranking: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        recommendation_rationale: Option<String>,
    },
    /// A segment handed to an annotator until `expires_at` (ms).
    SegmentLeased {
        segment_id: String,
        annotator_id: String,
        expires_at: u64,
    },
    AnnotationSubmitted {
        annotation: Annotation,
        /// Provider ids in the ranker's order before it learned from this label.
        #[serde(default)]
        ranker_ranking: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score_before: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score_after: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        analysis: Option<LlmAnalysis>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observed_ter: Option<f64>,
    },
    PseudoLabeled {
        annotations: Vec<Annotation>,
        pool_size: usize,
        tau: f64,
    },
    ModelUpdated {
        model: ModelState,
    },
    ThresholdChanged {
        tau: f64,
    },
    WeightsChanged {
        weights: PriorityWeights,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SegmentIngested { .. } => "SegmentIngested",
            EventPayload::HypothesisAttached { .. } => "HypothesisAttached",
            EventPayload::ScoresAttached { .. } => "ScoresAttached",
            EventPayload::SegmentLeased { .. } => "SegmentLeased",
            EventPayload::AnnotationSubmitted { .. } => "AnnotationSubmitted",
            EventPayload::PseudoLabeled { .. } => "PseudoLabeled",
            EventPayload::ModelUpdated { .. } => "ModelUpdated",
            EventPayload::ThresholdChanged { .. } => "ThresholdChanged",
            EventPayload::WeightsChanged { .. } => "WeightsChanged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Event {
    pub seq: u64,
    /// Wall-clock milliseconds; informational, never folded into state.
    pub at: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// A committed label together with what was known when it was committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AnnotationRecord {
    pub seq: u64,
    pub annotation: Annotation,
    pub ranker_ranking: Vec<String>,
    pub llm_ranking: Vec<String>,
    pub score_before: Option<f64>,
    pub score_after: Option<f64>,
    pub analysis: Option<LlmAnalysis>,
    pub observed_ter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Lease {
    pub annotator_id: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PseudoPassRecord {
    pub seq: u64,
    pub labeled: usize,
    pub pool_size: usize,
    pub tau: f64,
}

/// Everything the log implies. Serialization is canonical (ordered maps,
/// fixed field order) so [`ProjectState::hash`] is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProjectState {
    pub last_seq: u64,
    pub segments: BTreeMap<String, Segment>,
    pub annotations: Vec<AnnotationRecord>,
    pub leases: BTreeMap<String, Lease>,
    pub llm_rankings: BTreeMap<String, Vec<String>>,
    pub recommendation_rationales: BTreeMap<String, String>,
    /// segment id -> provider id -> embedding.
    pub embeddings: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub pseudo_passes: Vec<PseudoPassRecord>,
    pub model: Option<ModelState>,
    pub config: ThresholdConfig,
}

fn reject<T>(msg: impl Into<String>) -> Result<T, StoreError> {
    Err(StoreError::InvalidEvent(msg.into()))
}

fn promote(seg: &mut Segment, to: SegmentStatus) -> Result<(), StoreError> {
    if seg.status == SegmentStatus::Pending && to != SegmentStatus::Prioritized {
        seg.status = SegmentStatus::Prioritized;
    }
    if !seg.status.can_transition_to(to) {
        return reject(format!("segment {} cannot move from {:?} to {:?}", seg.id, seg.status, to));
    }
    seg.status = to;
    Ok(())
}

fn check_score(v: Option<f64>, what: &str) -> Result<(), StoreError> {
    match v {
        Some(s) if !(0.0..=100.0).contains(&s) => reject(format!("{what} {s} outside [0, 100]")),
        _ => Ok(()),
    }
}

impl ProjectState {
    pub fn new() -> Self {
        Self::default()
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.get(id)
    }

    /// Segments still waiting for a label, in id order.
    pub fn unlabeled(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values().filter(|s| s.status.is_unlabeled())
    }

    /// Latest human label per segment, falling back to the latest pseudo label.
    pub fn final_labels(&self) -> BTreeMap<&str, &AnnotationRecord> {
        let mut out: BTreeMap<&str, &AnnotationRecord> = BTreeMap::new();
        for r in &self.annotations {
            let id = r.annotation.segment_id.as_str();
            match out.get(id) {
                Some(prev) if !prev.annotation.is_pseudo && r.annotation.is_pseudo => {}
                _ => {
                    out.insert(id, r);
                }
            }
        }
        out
    }

    /// Checks `payload` against the current state and applies it as event
    /// `seq`. On error the state is untouched.
    pub fn apply(&mut self, seq: u64, payload: &EventPayload) -> Result<(), StoreError> {
        if seq != self.last_seq + 1 {
            return reject(format!("expected seq {}, got {seq}", self.last_seq + 1));
        }
        match payload {
            EventPayload::SegmentIngested { segment } => {
                if self.segments.contains_key(&segment.id) {
                    return reject(format!("segment {} already exists", segment.id));
                }
                if segment.status != SegmentStatus::Pending {
                    return reject("segments are ingested as Pending");
                }
                validate_segment(segment).or_else(|v| reject(format!("{v:?}")))?;
                self.segments.insert(segment.id.clone(), segment.clone());
            }
            EventPayload::HypothesisAttached { segment_id, hypothesis } => {
                let seg = self.segment_mut(segment_id)?;
                if seg.hypothesis(&hypothesis.provider_id).is_some() {
                    return reject(format!("{segment_id} already has {}", hypothesis.provider_id));
                }
                if seg.hypotheses.len() >= MAX_HYPOTHESES {
                    return reject(format!("{segment_id} already has {MAX_HYPOTHESES} hypotheses"));
                }
                seg.hypotheses.push(hypothesis.clone());
                if let Err(v) = validate_segment(seg) {
                    seg.hypotheses.pop();
                    return reject(format!("{v:?}"));
                }
            }
            EventPayload::ScoresAttached {
                segment_id,
                scores,
                llm_ranking,
                recommendation_rationale,
            } => {
                let seg = self.segments.get(segment_id).ok_or_else(|| unknown(segment_id))?;
                for s in scores {
                    if seg.hypothesis(&s.provider_id).is_none() {
                        return reject(format!("{segment_id} has no hypothesis from {}", s.provider_id));
                    }
                    check_score(s.teacher_score, "teacher score")?;
                    check_score(s.llm_score, "llm score")?;
                    if let Some(e) = &s.embedding {
                        if e.is_empty() || e.iter().any(|v| !v.is_finite()) {
                            return reject("embedding must be non-empty and finite");
                        }
                    }
                }
                if let Some(p) = llm_ranking.iter().find(|p| seg.hypothesis(p).is_none()) {
                    return reject(format!("ranking names unknown provider {p}"));
                }
                let seg = self.segment_mut(segment_id)?;
                for s in scores {
                    let h = seg.hypotheses.iter_mut().find(|h| h.provider_id == s.provider_id).unwrap();
                    if s.teacher_score.is_some() {
                        h.teacher_score = s.teacher_score;
                    }
                    if s.llm_score.is_some() {
                        h.llm_score = s.llm_score;
                    }
                }
                for s in scores {
                    if let Some(e) = &s.embedding {
                        self.embeddings
                            .entry(segment_id.clone())
                            .or_default()
                            .insert(s.provider_id.clone(), e.clone());
                    }
                }
                if !llm_ranking.is_empty() {
                    self.llm_rankings.insert(segment_id.clone(), llm_ranking.clone());
                }
                if let Some(r) = recommendation_rationale {
                    self.recommendation_rationales.insert(segment_id.clone(), r.clone());
                }
            }
            EventPayload::SegmentLeased {
                segment_id,
                annotator_id,
                expires_at,
            } => {
                let seg = self.segment_mut(segment_id)?;
                if !seg.status.is_unlabeled() {
                    return reject(format!("{segment_id} is already labeled"));
                }
                if seg.status == SegmentStatus::Pending {
                    seg.status = SegmentStatus::Prioritized;
                }
                self.leases.insert(
                    segment_id.clone(),
                    Lease {
                        annotator_id: annotator_id.clone(),
                        expires_at: *expires_at,
                    },
                );
            }
            EventPayload::AnnotationSubmitted {
                annotation,
                ranker_ranking,
                score_before,
                score_after,
                analysis,
                observed_ter,
            } => {
                if annotation.is_pseudo {
                    return reject("pseudo labels are committed through PseudoLabeled");
                }
                validate_annotation(annotation, None).or_else(|v| reject(format!("{v:?}")))?;
                check_score(*score_before, "score before")?;
                check_score(*score_after, "score after")?;
                if let Some(t) = observed_ter {
                    if !(t.is_finite() && *t >= 0.0) {
                        return reject(format!("observed TER {t} invalid"));
                    }
                }
                let id = &annotation.segment_id;
                let seg = self.segments.get(id).ok_or_else(|| unknown(id))?;
                if seg.hypothesis(&annotation.chosen_provider_id).is_none() {
                    return reject(format!("{id} has no hypothesis from {}", annotation.chosen_provider_id));
                }
                let mut next = seg.clone();
                promote(&mut next, SegmentStatus::HumanLabeled)?;
                self.segments.insert(id.clone(), next);
                self.leases.remove(id);
                self.annotations.push(AnnotationRecord {
                    seq,
                    annotation: annotation.clone(),
                    ranker_ranking: ranker_ranking.clone(),
                    llm_ranking: self.llm_rankings.get(id).cloned().unwrap_or_default(),
                    score_before: *score_before,
                    score_after: *score_after,
                    analysis: analysis.clone(),
                    observed_ter: *observed_ter,
                });
            }
            EventPayload::PseudoLabeled {
                annotations,
                pool_size,
                tau,
            } => {
                if annotations.len() > *pool_size {
                    return reject("more pseudo labels than pool segments");
                }
                let mut touched = BTreeSet::new();
                let mut updated = Vec::with_capacity(annotations.len());
                for a in annotations {
                    if !a.is_pseudo {
                        return reject("PseudoLabeled carries only pseudo labels");
                    }
                    validate_annotation(a, Some(*tau)).or_else(|v| reject(format!("{v:?}")))?;
                    if !touched.insert(a.segment_id.as_str()) {
                        return reject(format!("{} labeled twice in one pass", a.segment_id));
                    }
                    let seg = self.segments.get(&a.segment_id).ok_or_else(|| unknown(&a.segment_id))?;
                    if seg.hypothesis(&a.chosen_provider_id).is_none() {
                        return reject(format!("{} has no hypothesis from {}", a.segment_id, a.chosen_provider_id));
                    }
                    let mut next = seg.clone();
                    promote(&mut next, SegmentStatus::AutoLabeled)?;
                    updated.push(next);
                }
                for seg in updated {
                    self.leases.remove(&seg.id);
                    self.segments.insert(seg.id.clone(), seg);
                }
                let llm = &self.llm_rankings;
                self.annotations.extend(annotations.iter().map(|a| AnnotationRecord {
                    seq,
                    annotation: a.clone(),
                    ranker_ranking: Vec::new(),
                    llm_ranking: llm.get(&a.segment_id).cloned().unwrap_or_default(),
                    score_before: None,
                    score_after: None,
                    analysis: None,
                    observed_ter: None,
                }));
                self.pseudo_passes.push(PseudoPassRecord {
                    seq,
                    labeled: annotations.len(),
                    pool_size: *pool_size,
                    tau: *tau,
                });
            }
            EventPayload::ModelUpdated { model } => {
                if let Some(cur) = &self.model {
                    if model.version <= cur.version {
                        return reject(format!("model version {} not after {}", model.version, cur.version));
                    }
                }
                self.model = Some(model.clone());
            }
            EventPayload::ThresholdChanged { tau } => {
                let next = ThresholdConfig {
                    tau: *tau,
                    weights: self.config.weights,
                };
                next.check().or_else(|e| reject(e.to_string()))?;
                self.config = next;
            }
            EventPayload::WeightsChanged { weights } => {
                weights.check().or_else(|e| reject(e.to_string()))?;
                self.config.weights = *weights;
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    fn segment_mut(&mut self, id: &str) -> Result<&mut Segment, StoreError> {
        self.segments.get_mut(id).ok_or_else(|| unknown(id))
    }
}

fn unknown(id: &str) -> StoreError {
    StoreError::InvalidEvent(format!("unknown segment {id}"))
}

/// Left fold of a gapless log starting at seq 1.
pub fn replay(events: &[Event]) -> Result<ProjectState, StoreError> {
    replay_onto(ProjectState::new(), events)
}

/// Folds the events after `state.last_seq` onto `state`.
pub fn replay_onto(mut state: ProjectState, events: &[Event]) -> Result<ProjectState, StoreError> {
    let start = state.last_seq;
    for e in events.iter().filter(|e| e.seq > start) {
        state.apply(e.seq, &e.payload).map_err(|err| StoreError::CorruptLog {
            seq: e.seq,
            reason: err.to_string(),
        })?;
    }
    Ok(state)
}

/// Single-writer store: validates, appends, then folds.
pub struct Store {
    log: Box<dyn EventLog>,
    state: ProjectState,
    clock: Box<dyn Clock>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("last_seq", &self.state.last_seq)
            .field("log_bytes", &self.log.len_bytes())
            .finish_non_exhaustive()
    }
}

impl Store {
    /// Store over an in-memory log.
    pub fn in_memory(clock: Box<dyn Clock>) -> Self {
        Self {
            log: Box::new(MemoryLog::new()),
            state: ProjectState::new(),
            clock,
        }
    }

    /// Replays an existing log into a store.
    pub fn from_log(log: Box<dyn EventLog>, clock: Box<dyn Clock>) -> Result<Self, StoreError> {
        let state = replay(&log.read_all()?)?;
        Ok(Self { log, state, clock })
    }

    /// Opens `dir/events.ndjson.log`, starting from the newest valid snapshot
    /// in `dir` when there is one.
    pub fn open_dir(dir: &std::path::Path, clock: Box<dyn Clock>) -> Result<Self, StoreError> {
        let log = FileLog::open(dir)?;
        let events = log.read_all()?;
        let base = match latest_snapshot(dir)? {
            Some(snap) if snap.state.last_seq <= events.len() as u64 => snap.state,
            _ => ProjectState::new(),
        };
        let state = replay_onto(base, &events)?;
        Ok(Self {
            log: Box::new(log),
            state,
            clock,
        })
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn next_seq(&self) -> u64 {
        self.state.last_seq + 1
    }

    pub fn events(&self) -> Result<Vec<Event>, StoreError> {
        self.log.read_all()
    }

    /// Validates and durably appends `payload`. Either the event is in the log
    /// and folded into the state, or neither changed.
    pub fn commit(&mut self, payload: EventPayload) -> Result<Event, StoreError> {
        let event = Event {
            seq: self.next_seq(),
            at: self.clock.now_ms(),
            payload,
        };
        let json = serde_json::to_vec(&event).map_err(|e| StoreError::Serialization(e.to_string()))?;
        let back: Event = serde_json::from_slice(&json).map_err(|e| StoreError::Serialization(e.to_string()))?;
        if back != event {
            return Err(StoreError::Serialization(format!(
                "{} payload does not survive a JSON round trip",
                event.payload.kind()
            )));
        }
        dry_run(&self.state, event.seq, &event.payload)?;
        self.log.append(&frame(&json))?;
        self.state
            .apply(event.seq, &event.payload)
            .expect("payload validated before append");
        Ok(event)
    }
}

/// Validates `payload` against a scratch copy holding only what the checks read.
fn dry_run(state: &ProjectState, seq: u64, payload: &EventPayload) -> Result<(), StoreError> {
    let mut scratch = ProjectState {
        last_seq: state.last_seq,
        segments: touched_segments(state, payload),
        model: match payload {
            EventPayload::ModelUpdated { .. } => state.model.clone(),
            _ => None,
        },
        config: state.config,
        ..ProjectState::default()
    };
    scratch.apply(seq, payload)
}

fn touched_segments(state: &ProjectState, payload: &EventPayload) -> BTreeMap<String, Segment> {
    let ids: Vec<&str> = match payload {
        EventPayload::SegmentIngested { segment } => vec![segment.id.as_str()],
        EventPayload::HypothesisAttached { segment_id, .. }
        | EventPayload::ScoresAttached { segment_id, .. }
        | EventPayload::SegmentLeased { segment_id, .. } => vec![segment_id.as_str()],
        EventPayload::AnnotationSubmitted { annotation, .. } => vec![annotation.segment_id.as_str()],
        EventPayload::PseudoLabeled { annotations, .. } => annotations.iter().map(|a| a.segment_id.as_str()).collect(),
        EventPayload::ModelUpdated { .. } | EventPayload::ThresholdChanged { .. } | EventPayload::WeightsChanged { .. } => {
            Vec::new()
        }
    };
    ids.into_iter()
        .filter_map(|id| state.segments.get(id).map(|s| (id.to_string(), s.clone())))
        .collect()
}
