//! Online quality estimation: a linear regressor distilled from the teacher
//! metric, a linear TER head fit to observed post-edit distances, and a
//! softmax ranker over candidate hypotheses.
//!
//! [`ModelState`] is an immutable value. Every update returns a new state with
//! `version + 1`; earlier states remain valid snapshots.
//!
//! Inputs are max-abs normalized per feature. The running scale only grows,
//! and when it does the affected weights are rescaled so that predictions of
//! the current state are unchanged.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::MAX_HYPOTHESES;
use crate::features::{FeatureSchema, FeatureVector};

/// Minimum replay history accepted by [`race_hyperparams`].
pub const MIN_RACE_HISTORY: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("feature schema mismatch: model expects v{expected_version} ({expected_len} features), got v{got_version} ({got_len})")]
    SchemaMismatch {
        expected_version: u32,
        expected_len: usize,
        got_version: u32,
        got_len: usize,
    },
    #[error("hypothesis index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0} candidates exceed the limit of {MAX_HYPOTHESES}")]
    TooManyHypotheses(usize),
    #[error("no hypotheses to rank")]
    NoHypotheses,
    #[error("invalid training target {0}")]
    InvalidTarget(f64),
    #[error("race needs at least {needed} examples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("no hyperparameter candidates")]
    NoCandidates,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Hyperparams {
    /// Step size for the regressor and TER head.
    pub learning_rate: f64,
    pub l2: f64,
    /// Step size for the ranker; falls back to `learning_rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranker_learning_rate: Option<f64>,
}

impl Hyperparams {
    pub fn new(learning_rate: f64, l2: f64) -> Self {
        Self {
            learning_rate,
            l2,
            ranker_learning_rate: None,
        }
    }

    pub fn with_ranker_rate(mut self, rate: f64) -> Self {
        self.ranker_learning_rate = Some(rate);
        self
    }

    pub fn ranker_rate(&self) -> f64 {
        self.ranker_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn check(&self) -> Result<(), LearnerError> {
        let rates = [self.learning_rate, self.ranker_rate()];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(LearnerError::InvalidHyperparams("learning rates must be finite and >= 0".into()));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(LearnerError::InvalidHyperparams("l2 must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            l2: 1e-4,
            ranker_learning_rate: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        dot(&self.weights, z) + self.bias
    }

    fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelWeights {
    pub regressor: LinearHead,
    pub ter: LinearHead,
    pub ranker: LinearHead,
    /// Running max-abs value per feature, never below 1.
    pub feature_scale: Vec<f64>,
}

/// Versioned parameters of both learner heads. Serializes as the model
/// snapshot format `{version, schema_version, schema_checksum, weights, hyperparams, update_count}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelState {
    pub version: u64,
    pub schema_version: u32,
    pub schema_checksum: u32,
    pub weights: ModelWeights,
    pub hyperparams: Hyperparams,
    pub update_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub quality: f64,
    pub ter_estimate: f64,
    pub confidence: f64,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Hypothesis indices by descending probability, ties by lower index.
    pub order: Vec<usize>,
    /// Softmax probability per hypothesis, in input order.
    pub probabilities: Vec<f64>,
    /// p(first) - p(second); 1 for a single hypothesis.
    pub margin: f64,
    /// p(first).
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub predictions: Vec<Prediction>,
    pub ranking: Ranking,
}

impl ModelState {
    /// Zero-initialised model for `schema`.
    pub fn new(schema: &FeatureSchema, hyperparams: Hyperparams) -> Self {
        let dim = schema.len();
        Self {
            version: 0,
            schema_version: schema.version(),
            schema_checksum: schema.checksum(),
            weights: ModelWeights {
                regressor: LinearHead::zeros(dim),
                ter: LinearHead::zeros(dim),
                ranker: LinearHead::zeros(dim),
                feature_scale: vec![1.0; dim],
            },
            hyperparams,
            update_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.feature_scale.len()
    }

    pub fn accepts(&self, fv: &FeatureVector) -> bool {
        fv.schema().checksum() == self.schema_checksum && fv.len() == self.dim()
    }

    fn check(&self, fv: &FeatureVector) -> Result<(), LearnerError> {
        if self.accepts(fv) {
            Ok(())
        } else {
            Err(LearnerError::SchemaMismatch {
                expected_version: self.schema_version,
                expected_len: self.dim(),
                got_version: fv.schema_version(),
                got_len: fv.len(),
            })
        }
    }

    fn normalized(&self, fv: &FeatureVector) -> Vec<f64> {
        fv.values()
            .iter()
            .zip(&self.weights.feature_scale)
            .map(|(x, s)| x / s)
            .collect()
    }

    /// Grows the feature scale to cover `fvs`, compensating the weights.
    fn absorb_scale<'a>(&mut self, fvs: impl IntoIterator<Item = &'a FeatureVector>) {
        let w = &mut self.weights;
        for fv in fvs {
            for (j, x) in fv.values().iter().enumerate() {
                let old = w.feature_scale[j];
                let new = x.abs();
                if new > old {
                    let factor = new / old;
                    w.regressor.weights[j] *= factor;
                    w.ter.weights[j] *= factor;
                    w.ranker.weights[j] *= factor;
                    w.feature_scale[j] = new;
                }
            }
        }
    }

    fn committed(mut self) -> Self {
        self.version += 1;
        self.update_count += 1;
        self
    }

    /// Unclamped regressor output.
    pub fn raw_quality(&self, fv: &FeatureVector) -> Result<f64, LearnerError> {
        self.check(fv)?;
        Ok(self.weights.regressor.eval(&self.normalized(fv)))
    }

    /// Unclamped TER head output.
    pub fn raw_ter(&self, fv: &FeatureVector) -> Result<f64, LearnerError> {
        self.check(fv)?;
        Ok(self.weights.ter.eval(&self.normalized(fv)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model state serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared loss of the regressor on one example: ½(ŷ−y)² + ½·l2·‖w‖².
pub fn regressor_loss(state: &ModelState, fv: &FeatureVector, target: f64) -> Result<f64, LearnerError> {
    let err = state.raw_quality(fv)? - target;
    let w = &state.weights.regressor.weights;
    Ok(0.5 * err * err + 0.5 * state.hyperparams.l2 * dot(w, w))
}

/// Gradient of [`regressor_loss`] w.r.t. (weights, bias) at the current scale.
pub fn regressor_gradient(state: &ModelState, fv: &FeatureVector, target: f64) -> Result<(Vec<f64>, f64), LearnerError> {
    state.check(fv)?;
    Ok(linear_gradient(&state.weights.regressor, &state.normalized(fv), target, state.hyperparams.l2))
}

fn linear_gradient(head: &LinearHead, z: &[f64], target: f64, l2: f64) -> (Vec<f64>, f64) {
    let err = head.eval(z) - target;
    let gw = z.iter().zip(&head.weights).map(|(zj, wj)| err * zj + l2 * wj).collect();
    (gw, err)
}

fn sgd_step(head: &mut LinearHead, z: &[f64], target: f64, lr: f64, l2: f64) {
    let (gw, gb) = linear_gradient(head, z, target, l2);
    for (w, g) in head.weights.iter_mut().zip(gw) {
        *w -= lr * g;
    }
    head.bias -= lr * gb;
}

/// One regularized SGD step of the quality regressor toward a teacher score.
pub fn update_regressor(state: &ModelState, fv: &FeatureVector, teacher_score: f64) -> Result<ModelState, LearnerError> {
    state.check(fv)?;
    if !(0.0..=100.0).contains(&teacher_score) {
        return Err(LearnerError::InvalidTarget(teacher_score));
    }
    let mut next = state.clone();
    next.absorb_scale([fv]);
    let z = next.normalized(fv);
    let hp = next.hyperparams;
    sgd_step(&mut next.weights.regressor, &z, teacher_score, hp.learning_rate, hp.l2);
    Ok(next.committed())
}

/// One regularized SGD step of the TER head toward an observed TER.
pub fn update_ter_head(state: &ModelState, fv: &FeatureVector, observed_ter: f64) -> Result<ModelState, LearnerError> {
    state.check(fv)?;
    if !(observed_ter.is_finite() && observed_ter >= 0.0) {
        return Err(LearnerError::InvalidTarget(observed_ter));
    }
    let mut next = state.clone();
    next.absorb_scale([fv]);
    let z = next.normalized(fv);
    let hp = next.hyperparams;
    sgd_step(&mut next.weights.ter, &z, observed_ter, hp.learning_rate, hp.l2);
    Ok(next.committed())
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_pool(state: &ModelState, fvs: &[FeatureVector]) -> Result<(), LearnerError> {
    if fvs.is_empty() {
        return Err(LearnerError::NoHypotheses);
    }
    if fvs.len() > MAX_HYPOTHESES {
        return Err(LearnerError::TooManyHypotheses(fvs.len()));
    }
    fvs.iter().try_for_each(|fv| state.check(fv))
}

fn ranker_probabilities(state: &ModelState, fvs: &[FeatureVector]) -> Vec<f64> {
    let scores: Vec<f64> = fvs
        .iter()
        .map(|fv| state.weights.ranker.eval(&state.normalized(fv)))
        .collect();
    softmax(&scores)
}

/// Orders hypotheses by ranker probability.
pub fn rank_best(state: &ModelState, segment_features: &[FeatureVector]) -> Result<Ranking, LearnerError> {
    check_pool(state, segment_features)?;
    let probabilities = ranker_probabilities(state, segment_features);
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    let confidence = probabilities[order[0]];
    let margin = match order.get(1) {
        Some(&second) => confidence - probabilities[second],
        None => 1.0,
    };
    Ok(Ranking {
        order,
        probabilities,
        margin,
        confidence,
    })
}

/// Cross-entropy of the ranker for `chosen` plus ½·l2·‖w‖².
pub fn ranker_loss(state: &ModelState, segment_features: &[FeatureVector], chosen: usize) -> Result<f64, LearnerError> {
    check_pool(state, segment_features)?;
    if chosen >= segment_features.len() {
        return Err(LearnerError::IndexOutOfRange {
            index: chosen,
            len: segment_features.len(),
        });
    }
    let p = ranker_probabilities(state, segment_features);
    let w = &state.weights.ranker.weights;
    Ok(-p[chosen].ln() + 0.5 * state.hyperparams.l2 * dot(w, w))
}

/// Gradient of [`ranker_loss`] w.r.t. the ranker weights.
pub fn ranker_gradient(state: &ModelState, segment_features: &[FeatureVector], chosen: usize) -> Result<Vec<f64>, LearnerError> {
    check_pool(state, segment_features)?;
    if chosen >= segment_features.len() {
        return Err(LearnerError::IndexOutOfRange {
            index: chosen,
            len: segment_features.len(),
        });
    }
    let p = ranker_probabilities(state, segment_features);
    let zs: Vec<Vec<f64>> = segment_features.iter().map(|fv| state.normalized(fv)).collect();
    let l2 = state.hyperparams.l2;
    let grad = (0..state.dim())
        .map(|j| {
            let expected: f64 = zs.iter().zip(&p).map(|(z, pi)| pi * z[j]).sum();
            expected - zs[chosen][j] + l2 * state.weights.ranker.weights[j]
        })
        .collect();
    Ok(grad)
}

/// One softmax-regression step toward the hypothesis the annotator chose.
/// A single-candidate pool carries no preference and leaves the state as is.
pub fn update_ranker(state: &ModelState, segment_features: &[FeatureVector], chosen: usize) -> Result<ModelState, LearnerError> {
    if chosen >= segment_features.len() {
        return Err(LearnerError::IndexOutOfRange {
            index: chosen,
            len: segment_features.len(),
        });
    }
    check_pool(state, segment_features)?;
    if segment_features.len() == 1 {
        return Ok(state.clone());
    }
    let mut next = state.clone();
    next.absorb_scale(segment_features);
    let grad = ranker_gradient(&next, segment_features, chosen)?;
    let lr = next.hyperparams.ranker_rate();
    for (w, g) in next.weights.ranker.weights.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    Ok(next.committed())
}

/// Per-hypothesis quality and TER estimates. Every prediction carries the
/// segment-level ranker confidence.
pub fn predict(state: &ModelState, segment_features: &[FeatureVector]) -> Result<SegmentPrediction, LearnerError> {
    let ranking = rank_best(state, segment_features)?;
    let predictions = segment_features
        .iter()
        .map(|fv| {
            let z = state.normalized(fv);
            Prediction {
                quality: state.weights.regressor.eval(&z).clamp(0.0, 100.0),
                ter_estimate: state.weights.ter.eval(&z).max(0.0),
                confidence: ranking.confidence,
                model_version: state.version,
            }
        })
        .collect();
    Ok(SegmentPrediction { predictions, ranking })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceOutcome {
    pub best: Hyperparams,
    /// Progressive-validation squared error per candidate, in input order.
    pub losses: Vec<f64>,
}

/// Progressive-validation racing: every candidate trains a fresh regressor
/// over `history` in order, predicting each example before learning from it.
/// Lowest summed squared error wins; ties go to the earlier candidate.
pub fn race_hyperparams(history: &[(FeatureVector, f64)], candidates: &[Hyperparams]) -> Result<RaceOutcome, LearnerError> {
    if history.len() < MIN_RACE_HISTORY {
        return Err(LearnerError::InsufficientHistory {
            needed: MIN_RACE_HISTORY,
            got: history.len(),
        });
    }
    if candidates.is_empty() {
        return Err(LearnerError::NoCandidates);
    }
    candidates.iter().try_for_each(Hyperparams::check)?;
    let schema = history[0].0.schema();
    let mut losses = Vec::with_capacity(candidates.len());
    for hp in candidates {
        let mut state = ModelState::new(schema, *hp);
        let mut loss = 0.0;
        for (fv, target) in history {
            let err = state.raw_quality(fv)? - target;
            loss += err * err;
            state = update_regressor(&state, fv, *target)?;
            if !state.weights.regressor.is_finite() || !loss.is_finite() {
                loss = f64::INFINITY;
                break;
            }
        }
        losses.push(if loss.is_nan() { f64::INFINITY } else { loss });
    }
    let mut best = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l < losses[best] {
            best = i;
        }
    }
    Ok(RaceOutcome {
        best: candidates[best],
        losses,
    })
}

/// Object-safe view of a learner so other model families can stand in for
/// the linear one.
pub trait QualityEstimator {
    fn model_version(&self) -> u64;
    fn predict_segment(&self, segment_features: &[FeatureVector]) -> Result<SegmentPrediction, LearnerError>;
    fn learn_quality(&self, fv: &FeatureVector, teacher_score: f64) -> Result<Self, LearnerError>
    where
        Self: Sized;
    fn learn_choice(&self, segment_features: &[FeatureVector], chosen: usize) -> Result<Self, LearnerError>
    where
        Self: Sized;
}

impl QualityEstimator for ModelState {
    fn model_version(&self) -> u64 {
        self.version
    }

    fn predict_segment(&self, segment_features: &[FeatureVector]) -> Result<SegmentPrediction, LearnerError> {
        predict(self, segment_features)
    }

    fn learn_quality(&self, fv: &FeatureVector, teacher_score: f64) -> Result<Self, LearnerError> {
        update_regressor(self, fv, teacher_score)
    }

    fn learn_choice(&self, segment_features: &[FeatureVector], chosen: usize) -> Result<Self, LearnerError> {
        update_ranker(self, segment_features, chosen)
    }
}
