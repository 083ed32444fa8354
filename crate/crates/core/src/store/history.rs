//! Random but valid event histories, for replay and checkpoint testing.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{EventPayload, HypothesisScores, ProjectState};
use crate::domain::{Annotation, ErrorCategory, Hypothesis, PriorityWeights, Segment, PSEUDO_ANNOTATOR};
use crate::features::FeatureSchema;
use crate::learner::{Hyperparams, ModelState};

const WORDS: &[&str] = &["der", "die", "das", "Haus", "Katze", "läuft", "schnell", "über", "grün", "🙂"];

fn sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Builds `len` payloads, each valid against the state produced by the ones
/// before it.
pub fn random_history<R: Rng>(rng: &mut R, len: usize) -> Vec<EventPayload> {
    let mut state = ProjectState::new();
    let mut out = Vec::with_capacity(len);
    let schema = FeatureSchema::new(1, vec!["a".into(), "b".into()]);
    while out.len() < len {
        let payload = propose(rng, &state, &schema, out.len() as u64 + 1);
        let Some(payload) = payload else { continue };
        if state.apply(state.last_seq + 1, &payload).is_ok() {
            out.push(payload);
        }
    }
    out
}

fn propose<R: Rng>(rng: &mut R, state: &ProjectState, schema: &FeatureSchema, seq: u64) -> Option<EventPayload> {
    let ids: Vec<&String> = state.segments.keys().collect();
    let pick_seg = |rng: &mut R| ids.choose(rng).map(|id| &state.segments[*id]);
    let roll = if ids.is_empty() { 0 } else { rng.random_range(0..9) };
    Some(match roll {
        0 => {
            let n = rng.random_range(1..4);
            let hyps = (0..n).map(|i| Hypothesis::new(format!("mt{i}"), sentence(rng))).collect();
            EventPayload::SegmentIngested {
                segment: Segment::new(format!("seg-{seq:04}"), sentence(rng), "en", "de", hyps),
            }
        }
        1 => {
            let seg = pick_seg(rng)?;
            EventPayload::HypothesisAttached {
                segment_id: seg.id.clone(),
                hypothesis: Hypothesis::new(format!("mt{}", seg.hypotheses.len()), sentence(rng)),
            }
        }
        2 => {
            let seg = pick_seg(rng)?;
            let scores = seg
                .hypotheses
                .iter()
                .map(|h| HypothesisScores {
                    provider_id: h.provider_id.clone(),
                    teacher_score: Some(rng.random_range(0.0..=100.0)),
                    llm_score: rng.random_bool(0.7).then(|| rng.random_range(0.0..=100.0)),
                    embedding: rng.random_bool(0.3).then(|| vec![rng.random_range(-1.0..1.0); 2]),
                })
                .collect();
            let mut ranking: Vec<String> = seg.hypotheses.iter().map(|h| h.provider_id.clone()).collect();
            ranking.reverse();
            EventPayload::ScoresAttached {
                segment_id: seg.id.clone(),
                scores,
                llm_ranking: ranking,
                recommendation_rationale: Some("fluent".into()),
            }
        }
        3 => {
            let seg = pick_seg(rng)?;
            EventPayload::SegmentLeased {
                segment_id: seg.id.clone(),
                annotator_id: format!("ann{}", rng.random_range(0..3)),
                expires_at: rng.random_range(0..1_000_000),
            }
        }
        4 => {
            let seg = pick_seg(rng)?;
            let chosen = seg.hypotheses.choose(rng)?;
            let no_edit = rng.random_bool(0.3);
            let cats: BTreeSet<ErrorCategory> = if no_edit {
                BTreeSet::from([ErrorCategory::NoEdit])
            } else {
                let k = rng.random_range(1..3);
                ErrorCategory::ALL[..6].choose_multiple(rng, k).copied().collect()
            };
            EventPayload::AnnotationSubmitted {
                annotation: Annotation {
                    segment_id: seg.id.clone(),
                    annotator_id: format!("ann{}", rng.random_range(0..3)),
                    chosen_provider_id: chosen.provider_id.clone(),
                    error_categories: cats,
                    post_edit_text: (!no_edit).then(|| sentence(rng)),
                    is_pseudo: false,
                    confidence: None,
                    timestamp: seq,
                },
                ranker_ranking: seg.hypotheses.iter().map(|h| h.provider_id.clone()).collect(),
                score_before: Some(rng.random_range(0.0..=100.0)),
                score_after: Some(rng.random_range(0.0..=100.0)),
                analysis: None,
                observed_ter: Some(rng.random_range(0.0..2.0)),
            }
        }
        5 => {
            let candidates: Vec<&Segment> = state.unlabeled().collect();
            let k = rng.random_range(0..=candidates.len().min(3));
            let annotations = candidates
                .choose_multiple(rng, k)
                .map(|seg| Annotation {
                    segment_id: seg.id.clone(),
                    annotator_id: PSEUDO_ANNOTATOR.into(),
                    chosen_provider_id: seg.hypotheses[0].provider_id.clone(),
                    error_categories: BTreeSet::from([ErrorCategory::NoEdit]),
                    post_edit_text: None,
                    is_pseudo: true,
                    confidence: Some(state.config.tau + (1.0 - state.config.tau) * 0.5),
                    timestamp: seq,
                })
                .collect();
            EventPayload::PseudoLabeled {
                annotations,
                pool_size: candidates.len(),
                tau: state.config.tau,
            }
        }
        6 => {
            let mut model = state
                .model
                .clone()
                .unwrap_or_else(|| ModelState::new(schema, Hyperparams::default()));
            model.version += 1;
            model.update_count += 1;
            for w in model.weights.regressor.weights.iter_mut() {
                *w += rng.random_range(-1.0..1.0);
            }
            model.weights.ranker.bias = rng.random_range(-1.0..1.0);
            EventPayload::ModelUpdated { model }
        }
        7 => EventPayload::ThresholdChanged {
            tau: rng.random_range(0.5..=1.0),
        },
        _ => {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..(1.0 - a));
            EventPayload::WeightsChanged {
                weights: PriorityWeights::new(a, b, 1.0 - a - b).ok()?,
            }
        }
    })
}
