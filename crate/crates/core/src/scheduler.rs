//! Annotation queue ordering and threshold-gated pseudo-labeling.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Annotation, ErrorCategory, Segment, ThresholdConfig, PSEUDO_ANNOTATOR};
use crate::features::FeatureVector;
use crate::learner::{rank_best, ModelState, SegmentPrediction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("pool is empty")]
    EmptyPool,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
}

/// Segment-level signals feeding the priority score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub segment_id: String,
    /// Best predicted quality over the segment's hypotheses.
    pub quality: f64,
    /// Lowest predicted TER over the segment's hypotheses.
    pub ter: f64,
    /// Highest LLM score over the segment's hypotheses, if any was scored.
    pub llm: Option<f64>,
    /// Ranker margin p(1st) - p(2nd).
    pub margin: f64,
}

impl PoolEntry {
    pub fn from_prediction(segment_id: impl Into<String>, prediction: &SegmentPrediction, llm_scores: &[Option<f64>]) -> Self {
        let quality = prediction.predictions.iter().map(|p| p.quality).fold(f64::NEG_INFINITY, f64::max);
        let ter = prediction.predictions.iter().map(|p| p.ter_estimate).fold(f64::INFINITY, f64::min);
        let llm = llm_scores.iter().flatten().copied().reduce(f64::max);
        Self {
            segment_id: segment_id.into(),
            quality,
            ter,
            llm,
            margin: prediction.ranking.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityParts {
    pub q_norm: f64,
    pub ter_norm: f64,
    pub llm_norm: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityRecord {
    pub segment_id: String,
    pub priority: f64,
    pub parts: PriorityParts,
    pub computed_at_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Tripartite,
    UncertaintyMargin,
    Hybrid,
    /// Uniformly shuffled order, seeded by `salt`. Baseline for comparisons.
    Random { salt: u64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Tripartite => "tripartite",
            Strategy::UncertaintyMargin => "uncertainty_margin",
            Strategy::Hybrid => "hybrid",
            Strategy::Random { .. } => "random",
        }
    }

    /// Parses a strategy name; `random` gets salt 0.
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tripartite" => Some(Strategy::Tripartite),
            "uncertainty_margin" | "uncertainty" | "margin" => Some(Strategy::UncertaintyMargin),
            "hybrid" => Some(Strategy::Hybrid),
            "random" => Some(Strategy::Random { salt: 0 }),
            _ => None,
        }
    }
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    move |v| {
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

fn by_score_desc(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Tripartite priority `w_q(1-q_norm) + w_t·ter_norm + w_l(1-llm_norm)` with
/// min-max normalization over the pool. Sorted by descending priority, ties by id.
pub fn compute_priorities(pool: &[PoolEntry], cfg: &ThresholdConfig, model_version: u64) -> Result<Vec<PriorityRecord>, SchedulerError> {
    if pool.is_empty() {
        return Err(SchedulerError::EmptyPool);
    }
    let q = min_max(pool.iter().map(|e| e.quality));
    let t = min_max(pool.iter().map(|e| e.ter));
    let l = min_max(pool.iter().filter_map(|e| e.llm));
    let w = cfg.weights;
    let mut out: Vec<PriorityRecord> = pool
        .iter()
        .map(|e| {
            let parts = PriorityParts {
                q_norm: q(e.quality),
                ter_norm: t(e.ter),
                llm_norm: e.llm.map_or(0.5, &l),
                margin: e.margin.clamp(0.0, 1.0),
            };
            let priority = w.quality * (1.0 - parts.q_norm) + w.ter * parts.ter_norm + w.llm * (1.0 - parts.llm_norm);
            PriorityRecord {
                segment_id: e.segment_id.clone(),
                priority: priority.clamp(0.0, 1.0),
                parts,
                computed_at_version: model_version,
            }
        })
        .collect();
    out.sort_by(|a, b| by_score_desc((a.priority, &a.segment_id), (b.priority, &b.segment_id)));
    Ok(out)
}

/// Hybrid score: mean of the priority and the ranker's uncertainty.
pub fn hybrid_score(record: &PriorityRecord) -> f64 {
    (record.priority + (1.0 - record.parts.margin)) / 2.0
}

/// Full pool in strategy order.
pub fn order_pool(pool: &[PoolEntry], cfg: &ThresholdConfig, strategy: Strategy, model_version: u64) -> Result<Vec<PriorityRecord>, SchedulerError> {
    let mut records = compute_priorities(pool, cfg, model_version)?;
    match strategy {
        Strategy::Tripartite => {}
        Strategy::UncertaintyMargin => records.sort_by(|a, b| {
            a.parts
                .margin
                .total_cmp(&b.parts.margin)
                .then_with(|| a.segment_id.cmp(&b.segment_id))
        }),
        Strategy::Hybrid => {
            records.sort_by(|a, b| by_score_desc((hybrid_score(a), &a.segment_id), (hybrid_score(b), &b.segment_id)))
        }
        Strategy::Random { salt } => {
            records.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
            records.shuffle(&mut ChaCha8Rng::seed_from_u64(salt));
        }
    }
    Ok(records)
}

/// First `batch_size` segment ids in strategy order.
pub fn next_batch(
    pool: &[PoolEntry],
    cfg: &ThresholdConfig,
    batch_size: usize,
    strategy: Strategy,
) -> Result<Vec<String>, SchedulerError> {
    if batch_size == 0 {
        return Err(SchedulerError::InvalidBatchSize);
    }
    let ordered = order_pool(pool, cfg, strategy, 0)?;
    Ok(ordered.into_iter().take(batch_size).map(|r| r.segment_id).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelPass {
    pub annotations: Vec<Annotation>,
    /// Auto-labeled / unlabeled segments considered; 0 for an empty pool.
    pub fraction_auto: f64,
}

/// Emits a NoEdit pseudo-annotation for every unlabeled segment whose ranker
/// confidence reaches `cfg.tau`. Segments whose features do not fit the model
/// are counted in the pool but never labeled.
pub fn pseudo_label_pass(
    pool: &[(&Segment, &[FeatureVector])],
    state: &ModelState,
    cfg: &ThresholdConfig,
    timestamp: u64,
) -> PseudoLabelPass {
    let candidates: Vec<_> = pool.iter().filter(|(s, _)| s.status.is_unlabeled()).collect();
    let mut annotations = Vec::new();
    for (segment, features) in &candidates {
        let Ok(ranking) = rank_best(state, features) else {
            continue;
        };
        if ranking.confidence < cfg.tau {
            continue;
        }
        let Some(top) = segment.hypotheses.get(ranking.order[0]) else {
            continue;
        };
        annotations.push(Annotation {
            segment_id: segment.id.clone(),
            annotator_id: PSEUDO_ANNOTATOR.to_string(),
            chosen_provider_id: top.provider_id.clone(),
            error_categories: BTreeSet::from([ErrorCategory::NoEdit]),
            post_edit_text: None,
            is_pseudo: true,
            confidence: Some(ranking.confidence),
            timestamp,
        });
    }
    let fraction_auto = if candidates.is_empty() {
        0.0
    } else {
        annotations.len() as f64 / candidates.len() as f64
    };
    PseudoLabelPass {
        annotations,
        fraction_auto,
    }
}

/// Share of `confidences` at or above `tau`; 0 for an empty slice.
pub fn fraction_auto_labelable(confidences: &[f64], tau: f64) -> f64 {
    if confidences.is_empty() {
        return 0.0;
    }
    confidences.iter().filter(|c| **c >= tau).count() as f64 / confidences.len() as f64
}
