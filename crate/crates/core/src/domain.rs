//! Shared data model for segments, hypotheses, annotations and providers.
//!
//! All types here are plain values. Mutation happens through the event
//! store, which is the only writer.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on candidate translations per segment.
pub const MAX_HYPOTHESES: usize = 10;

/// Provider id given to translations synthesized by the LLM from the MT pool.
pub const ENSEMBLE_PROVIDER_ID: &str = "llm-ensemble";

/// Annotator id recorded on machine-generated labels.
pub const PSEUDO_ANNOTATOR: &str = "pseudo";

const SCORE_MIN: f64 = 0.0;
const SCORE_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub enum SegmentStatus {
    Pending,
    Prioritized,
    AutoLabeled,
    HumanLabeled,
}

impl SegmentStatus {
    pub const ALL: [SegmentStatus; 4] = [
        SegmentStatus::Pending,
        SegmentStatus::Prioritized,
        SegmentStatus::AutoLabeled,
        SegmentStatus::HumanLabeled,
    ];

    /// Edges of the status machine. Self-loops are not edges.
    pub fn can_transition_to(self, to: SegmentStatus) -> bool {
        use SegmentStatus::*;
        matches!(
            (self, to),
            (Pending, Prioritized)
                | (Prioritized, AutoLabeled)
                | (Prioritized, HumanLabeled)
                | (AutoLabeled, HumanLabeled)
        )
    }

    /// Still waiting for a label (human or pseudo).
    pub fn is_unlabeled(self) -> bool {
        matches!(self, SegmentStatus::Pending | SegmentStatus::Prioritized)
    }
}

/// MQM-style error categories. `NoEdit` marks an output accepted as-is and
/// cannot be combined with any other category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub enum ErrorCategory {
    Accuracy,
    Fluency,
    Terminology,
    LocaleConvention,
    Style,
    Other,
    NoEdit,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::Accuracy,
        ErrorCategory::Fluency,
        ErrorCategory::Terminology,
        ErrorCategory::LocaleConvention,
        ErrorCategory::Style,
        ErrorCategory::Other,
        ErrorCategory::NoEdit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Accuracy => "Accuracy",
            ErrorCategory::Fluency => "Fluency",
            ErrorCategory::Terminology => "Terminology",
            ErrorCategory::LocaleConvention => "LocaleConvention",
            ErrorCategory::Style => "Style",
            ErrorCategory::Other => "Other",
            ErrorCategory::NoEdit => "NoEdit",
        }
    }

    /// Lenient mapping for free text coming back from LLMs. Anything that is
    /// not recognisably one of the closed categories becomes `Other`.
    pub fn parse_lenient(raw: &str) -> ErrorCategory {
        let key: String = raw
            .trim()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "accuracy" | "mistranslation" | "omission" | "addition" => ErrorCategory::Accuracy,
            "fluency" | "grammar" | "spelling" | "punctuation" => ErrorCategory::Fluency,
            "terminology" => ErrorCategory::Terminology,
            "localeconvention" | "locale" | "localerrors" | "localeerrors" | "locale_convention" => {
                ErrorCategory::LocaleConvention
            }
            "style" => ErrorCategory::Style,
            "noedit" | "none" | "noerror" | "noerrors" => ErrorCategory::NoEdit,
            _ => ErrorCategory::Other,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    /// Strict parse of the canonical names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Hypothesis {
    pub provider_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_ter: Option<f64>,
}

impl Hypothesis {
    pub fn new(provider_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            text: text.into(),
            teacher_score: None,
            llm_score: None,
            predicted_quality: None,
            predicted_ter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Segment {
    pub id: String,
    pub source_text: String,
    pub source_lang: String,
    pub target_lang: String,
    pub hypotheses: Vec<Hypothesis>,
    pub status: SegmentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl Segment {
    pub fn new(
        id: impl Into<String>,
        source_text: impl Into<String>,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
        hypotheses: Vec<Hypothesis>,
    ) -> Self {
        Self {
            id: id.into(),
            source_text: source_text.into(),
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            hypotheses,
            status: SegmentStatus::Pending,
            topic: None,
        }
    }

    pub fn hypothesis(&self, provider_id: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.provider_id == provider_id)
    }

    pub fn hypothesis_index(&self, provider_id: &str) -> Option<usize> {
        self.hypotheses.iter().position(|h| h.provider_id == provider_id)
    }

    /// Every violated invariant, in a stable order. Empty means valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push(Violation::EmptyId);
        }
        if !is_language_tag(&self.source_lang) {
            out.push(Violation::BadLanguageTag(self.source_lang.clone()));
        }
        if !is_language_tag(&self.target_lang) {
            out.push(Violation::BadLanguageTag(self.target_lang.clone()));
        }
        match self.hypotheses.len() {
            0 => out.push(Violation::NoHypotheses),
            n if n > MAX_HYPOTHESES => out.push(Violation::TooManyHypotheses(n)),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for h in &self.hypotheses {
            if !seen.insert(h.provider_id.as_str()) {
                out.push(Violation::DuplicateProvider(h.provider_id.clone()));
            }
            let scored = [
                ("teacher_score", h.teacher_score),
                ("llm_score", h.llm_score),
                ("predicted_quality", h.predicted_quality),
            ];
            for (field, value) in scored {
                if let Some(v) = value {
                    if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                        out.push(Violation::ScoreOutOfRange {
                            provider_id: h.provider_id.clone(),
                            field,
                            value: v,
                        });
                    }
                }
            }
            if let Some(v) = h.predicted_ter {
                if !(v >= 0.0 && v.is_finite()) {
                    out.push(Violation::ScoreOutOfRange {
                        provider_id: h.provider_id.clone(),
                        field: "predicted_ter",
                        value: v,
                    });
                }
            }
        }
        out
    }
}

/// Shape check for BCP-47 tags: alphanumeric subtags of 1-8 chars joined by `-`,
/// primary subtag alphabetic.
fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let Some(primary) = parts.next() else {
        return false;
    };
    let primary_ok = (2..=8).contains(&primary.len()) && primary.chars().all(|c| c.is_ascii_alphabetic());
    primary_ok && parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Annotation {
    pub segment_id: String,
    pub annotator_id: String,
    pub chosen_provider_id: String,
    pub error_categories: BTreeSet<ErrorCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_edit_text: Option<String>,
    pub is_pseudo: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Event sequence number at which the label was committed.
    pub timestamp: u64,
}

impl Annotation {
    pub fn is_no_edit(&self) -> bool {
        self.error_categories.contains(&ErrorCategory::NoEdit)
    }

    /// Every violated invariant. `tau` is the pseudo-label threshold active
    /// when the label was produced; pass `None` to skip that check.
    pub fn violations(&self, tau: Option<f64>) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.error_categories.is_empty() {
            out.push(Violation::NoCategories);
        }
        if self.is_no_edit() && self.error_categories.len() > 1 {
            out.push(Violation::NoEditNotExclusive);
        }
        if self.is_pseudo != (self.annotator_id == PSEUDO_ANNOTATOR) {
            out.push(Violation::PseudoAnnotatorMismatch);
        }
        match (self.is_pseudo, self.confidence) {
            (true, None) => out.push(Violation::MissingConfidence),
            (_, Some(c)) if !(0.0..=1.0).contains(&c) => out.push(Violation::ConfidenceOutOfRange(c)),
            (true, Some(c)) => {
                if let Some(t) = tau {
                    if c < t {
                        out.push(Violation::BelowThreshold { confidence: c, tau: t });
                    }
                }
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub enum ProviderKind {
    MT,
    LLM,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ProviderModel {
    pub id: String,
    pub kind: ProviderKind,
    /// `http(s)://...` or `mock:<name>`.
    pub endpoint: String,
    pub display_name: String,
}

impl ProviderModel {
    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock:")
    }
}

/// Priority weights for (quality, TER, LLM) parts of the tripartite score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PriorityWeights {
    pub quality: f64,
    pub ter: f64,
    pub llm: f64,
}

impl PriorityWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(quality: f64, ter: f64, llm: f64) -> Result<Self, ConfigError> {
        let w = Self { quality, ter, llm };
        w.check()?;
        Ok(w)
    }

    pub fn equal() -> Self {
        Self {
            quality: 1.0 / 3.0,
            ter: 1.0 / 3.0,
            llm: 1.0 / 3.0,
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let parts = [self.quality, self.ter, self.llm];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ConfigError::NegativeWeight);
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(ConfigError::WeightSum(sum));
        }
        Ok(())
    }
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self::equal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ThresholdConfig {
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    pub weights: PriorityWeights,
}

impl ThresholdConfig {
    pub fn new(tau: f64, weights: PriorityWeights) -> Result<Self, ConfigError> {
        let cfg = Self { tau, weights };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        check_tau(self.tau)?;
        self.weights.check()
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            weights: PriorityWeights::equal(),
        }
    }
}

pub fn check_tau(tau: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(ConfigError::TauOutOfRange(tau))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("threshold {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("priority weights must be finite and nonnegative")]
    NegativeWeight,
    #[error("priority weights sum to {0}, expected 1")]
    WeightSum(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("segment id is empty")]
    EmptyId,
    #[error("`{0}` is not a language tag")]
    BadLanguageTag(String),
    #[error("segment has no hypotheses")]
    NoHypotheses,
    #[error("hypotheses > {MAX_HYPOTHESES} (got {0})")]
    TooManyHypotheses(usize),
    #[error("provider `{0}` appears more than once")]
    DuplicateProvider(String),
    #[error("{field} of `{provider_id}` out of range: {value}")]
    ScoreOutOfRange {
        provider_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("annotation has no error categories")]
    NoCategories,
    #[error("NoEdit exclusive")]
    NoEditNotExclusive,
    #[error("is_pseudo must match the `pseudo` annotator id")]
    PseudoAnnotatorMismatch,
    #[error("pseudo label without confidence")]
    MissingConfidence,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("confidence {confidence} below threshold {tau}")]
    BelowThreshold { confidence: f64, tau: f64 },
}

pub fn validate_segment(seg: &Segment) -> Result<(), Vec<Violation>> {
    let v = seg.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub fn validate_annotation(ann: &Annotation, tau: Option<f64>) -> Result<(), Vec<Violation>> {
    let v = ann.violations(tau);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal status transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: SegmentStatus,
    pub to: SegmentStatus,
}

pub fn transition_status(seg: &Segment, to: SegmentStatus) -> Result<Segment, IllegalTransition> {
    if seg.status.can_transition_to(to) {
        let mut next = seg.clone();
        next.status = to;
        Ok(next)
    } else {
        Err(IllegalTransition { from: seg.status, to })
    }
}
