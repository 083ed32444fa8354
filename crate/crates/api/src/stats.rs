//! Admin aggregations. Every function here is a pure function of the
//! project state (plus the pool confidences the caller computed from it).

use std::collections::{BTreeMap, BTreeSet};

use mtloop_core::domain::{ErrorCategory, PriorityWeights, SegmentStatus};
use mtloop_core::metrics::{
    correlations, improvement_pct, improvement_stats, tokenize, topk_accuracy_saturating, CorrelationReport,
    ImprovementPair, ImprovementStats,
};
use mtloop_core::scheduler::fraction_auto_labelable;
use mtloop_core::store::{AnnotationRecord, ProjectState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderStats {
    /// Human labels choosing this provider.
    pub wins: usize,
    pub no_edit_count: usize,
    pub error_category_histogram: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorStats {
    pub count: usize,
    pub category_histogram: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopkAccuracy {
    pub top1: f64,
    pub top3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TopkStats {
    /// LLM recommendation against human choices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<TopkAccuracy>,
    /// Online ranker, as it stood before each label, against human choices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranker: Option<TopkAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminStats {
    pub total_segments: usize,
    /// Segments with a human label.
    pub rated_count: usize,
    /// Segments without any label.
    pub pending_count: usize,
    pub auto_labeled_count: usize,
    /// Share of unlabeled segments whose ranker confidence reaches `tau`.
    pub fraction_auto_labelable: f64,
    pub tau: f64,
    pub weights: PriorityWeights,
    pub model_version: u64,
    pub per_provider: BTreeMap<String, ProviderStats>,
    pub per_annotator: BTreeMap<String, AnnotatorStats>,
    /// Teacher against LLM score over doubly scored hypotheses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationReport>,
    pub topk: TopkStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement: Option<ImprovementStats>,
}

/// Final human label per segment, in segment id order.
pub fn human_records(state: &ProjectState) -> Vec<&AnnotationRecord> {
    state
        .final_labels()
        .into_values()
        .filter(|r| !r.annotation.is_pseudo)
        .collect()
}

fn topk_of<'a>(records: impl Iterator<Item = (&'a Vec<String>, &'a str)>) -> Option<TopkAccuracy> {
    let (predicted, truth): (Vec<&Vec<String>>, Vec<&str>) = records.filter(|(r, _)| !r.is_empty()).unzip();
    if predicted.is_empty() {
        return None;
    }
    let predicted: Vec<Vec<String>> = predicted.into_iter().cloned().collect();
    Some(TopkAccuracy {
        top1: topk_accuracy_saturating(&predicted, &truth, 1).ok()?,
        top3: topk_accuracy_saturating(&predicted, &truth, 3).ok()?,
        n: truth.len(),
    })
}

/// Top-1/top-3 of the LLM and ranker orderings over final human labels.
pub fn topk_stats(state: &ProjectState) -> TopkStats {
    let humans = human_records(state);
    TopkStats {
        llm: topk_of(humans.iter().map(|r| (&r.llm_ranking, r.annotation.chosen_provider_id.as_str()))),
        ranker: topk_of(humans.iter().map(|r| (&r.ranker_ranking, r.annotation.chosen_provider_id.as_str()))),
    }
}

/// Human labels with a usable before/after score pair.
fn improvement_pairs(state: &ProjectState) -> Vec<(&AnnotationRecord, ImprovementPair<'_>)> {
    human_records(state)
        .into_iter()
        .filter_map(|r| {
            let seg = state.segment(&r.annotation.segment_id)?;
            let chosen = seg.hypothesis(&r.annotation.chosen_provider_id)?;
            let (pre, post) = (r.score_before?, r.score_after?);
            improvement_pct(pre, post).ok()?;
            let pair = ImprovementPair {
                pre_score: pre,
                post_score: post,
                post_edit_text: r.annotation.post_edit_text.as_deref().unwrap_or(&chosen.text),
                target_text: &chosen.text,
            };
            Some((r, pair))
        })
        .collect()
}

pub fn admin_stats(state: &ProjectState, pool_confidences: &[f64]) -> AdminStats {
    let count = |st: SegmentStatus| state.segments.values().filter(|s| s.status == st).count();
    let mut per_provider: BTreeMap<String, ProviderStats> = BTreeMap::new();
    for seg in state.segments.values() {
        for h in &seg.hypotheses {
            per_provider.entry(h.provider_id.clone()).or_default();
        }
    }
    let mut per_annotator: BTreeMap<String, AnnotatorStats> = BTreeMap::new();
    for r in human_records(state) {
        let a = &r.annotation;
        let p = per_provider.entry(a.chosen_provider_id.clone()).or_default();
        p.wins += 1;
        if a.error_categories.contains(&ErrorCategory::NoEdit) {
            p.no_edit_count += 1;
        }
        let ann = per_annotator.entry(a.annotator_id.clone()).or_default();
        ann.count += 1;
        for c in &a.error_categories {
            *p.error_category_histogram.entry(*c).or_default() += 1;
            *ann.category_histogram.entry(*c).or_default() += 1;
        }
    }
    let (teacher, llm): (Vec<f64>, Vec<f64>) = state
        .segments
        .values()
        .flat_map(|s| &s.hypotheses)
        .filter_map(|h| Some((h.teacher_score?, h.llm_score?)))
        .unzip();
    AdminStats {
        total_segments: state.segments.len(),
        rated_count: count(SegmentStatus::HumanLabeled),
        pending_count: state.unlabeled().count(),
        auto_labeled_count: count(SegmentStatus::AutoLabeled),
        fraction_auto_labelable: fraction_auto_labelable(pool_confidences, state.config.tau),
        tau: state.config.tau,
        weights: state.config.weights,
        model_version: state.model.as_ref().map_or(0, |m| m.version),
        per_provider,
        per_annotator,
        correlation: correlations(&teacher, &llm).ok(),
        topk: topk_stats(state),
        improvement: {
            let pairs: Vec<ImprovementPair> = improvement_pairs(state).into_iter().map(|(_, p)| p).collect();
            improvement_stats(&pairs).ok()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub min_tokens: usize,
    /// Inclusive; absent for the open last bucket.
    pub max_tokens: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentsOverview {
    pub count: usize,
    pub length_histogram: Vec<LengthBucket>,
    /// Segments without a topic are counted under `none`.
    pub topic_histogram: BTreeMap<String, usize>,
}

const LENGTH_EDGES: [(usize, Option<usize>); 5] = [(0, Some(5)), (6, Some(10)), (11, Some(20)), (21, Some(40)), (41, None)];

/// Source-length and topic histograms. `rated` selects human-labeled
/// (`true`) or not human-labeled (`false`) segments; `None` takes all.
pub fn segments_overview(state: &ProjectState, rated: Option<bool>) -> SegmentsOverview {
    let mut buckets: Vec<LengthBucket> = LENGTH_EDGES
        .iter()
        .map(|&(min_tokens, max_tokens)| LengthBucket {
            min_tokens,
            max_tokens,
            count: 0,
        })
        .collect();
    let mut topics = BTreeMap::new();
    let mut count = 0;
    for seg in state.segments.values() {
        if rated.is_some_and(|r| r != (seg.status == SegmentStatus::HumanLabeled)) {
            continue;
        }
        count += 1;
        let len = tokenize(&seg.source_text).len();
        if let Some(b) = buckets.iter_mut().find(|b| b.max_tokens.is_none_or(|m| len <= m)) {
            b.count += 1;
        }
        *topics.entry(seg.topic.clone().unwrap_or_else(|| "none".into())).or_default() += 1;
    }
    SegmentsOverview {
        count,
        length_histogram: buckets,
        topic_histogram: topics,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSummary {
    pub annotator_id: String,
    pub registered: bool,
    pub count: usize,
    pub no_edit_count: usize,
    pub category_histogram: BTreeMap<ErrorCategory, usize>,
    /// Mean over this annotator's labels with both scores available.
    pub mean_improvement_pct: Option<f64>,
    /// Mean character-count change between post-edit and chosen hypothesis.
    pub mean_chars_changed: Option<f64>,
    pub active_leases: usize,
}

/// One row per registered annotator and per annotator that ever labeled.
pub fn annotator_summaries(state: &ProjectState, registered: &BTreeSet<String>, now_ms: u64) -> Vec<AnnotatorSummary> {
    let mut ids: BTreeSet<&str> = registered.iter().map(String::as_str).collect();
    let humans = human_records(state);
    ids.extend(humans.iter().map(|r| r.annotation.annotator_id.as_str()));
    let pairs = improvement_pairs(state);
    ids.into_iter()
        .map(|id| {
            let mine: Vec<&&AnnotationRecord> = humans.iter().filter(|r| r.annotation.annotator_id == id).collect();
            let mut hist = BTreeMap::new();
            for r in &mine {
                for c in &r.annotation.error_categories {
                    *hist.entry(*c).or_default() += 1;
                }
            }
            let own: Vec<ImprovementPair> = pairs
                .iter()
                .filter(|(r, _)| r.annotation.annotator_id == id)
                .map(|(_, p)| p.clone())
                .collect();
            let stats = improvement_stats(&own).ok();
            AnnotatorSummary {
                annotator_id: id.to_string(),
                registered: registered.contains(id),
                count: mine.len(),
                no_edit_count: mine
                    .iter()
                    .filter(|r| r.annotation.error_categories.contains(&ErrorCategory::NoEdit))
                    .count(),
                category_histogram: hist,
                mean_improvement_pct: stats.map(|s| s.mean_improvement_pct),
                mean_chars_changed: stats.map(|s| s.mean_abs_char_delta),
                active_leases: state
                    .leases
                    .values()
                    .filter(|l| l.annotator_id == id && l.expires_at > now_ms)
                    .count(),
            }
        })
        .collect()
}
