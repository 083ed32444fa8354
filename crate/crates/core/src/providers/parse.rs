//! Lenient readers for free-text LLM replies.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{LlmAnalysis, ProviderError};
use crate::domain::ErrorCategory;

static LABELED_SCORE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)score\s*[:=]?\s*([-+]?\d+(?:\.\d+)?)").unwrap());
static ANY_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").unwrap());
static FIRST_INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

fn clamp_score(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 100.0)
    }
}

/// Number after a "Score:" label, else the first number anywhere, clamped to [0, 100].
pub fn parse_score(reply: &str) -> Result<f64, ProviderError> {
    let raw = LABELED_SCORE
        .captures(reply)
        .map(|c| c.get(1).unwrap().as_str())
        .or_else(|| ANY_NUMBER.find(reply).map(|m| m.as_str()))
        .ok_or_else(|| ProviderError::UnparseableScore(truncate(reply)))?;
    raw.parse::<f64>()
        .map(clamp_score)
        .map_err(|_| ProviderError::UnparseableScore(truncate(reply)))
}

/// First integer in the reply as a 0-based candidate index, plus the rest of
/// the reply as rationale.
pub fn parse_recommendation(reply: &str, n_candidates: usize) -> Result<(usize, String), ProviderError> {
    let m = FIRST_INTEGER
        .find(reply)
        .ok_or_else(|| ProviderError::IndexParseFailure(truncate(reply)))?;
    let idx: usize = m
        .as_str()
        .parse()
        .map_err(|_| ProviderError::IndexParseFailure(truncate(reply)))?;
    if idx == 0 || idx > n_candidates {
        return Err(ProviderError::IndexParseFailure(truncate(reply)));
    }
    let rationale = reply[m.end()..]
        .trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '—' | '–'))
        .trim()
        .to_string();
    Ok((idx - 1, rationale))
}

/// A synthesized translation must be exactly one non-empty line.
pub fn parse_synthesis(reply: &str) -> Result<String, ProviderError> {
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(ProviderError::MalformedResponse("empty synthesis".into())),
        _ => Err(ProviderError::MalformedResponse(format!(
            "expected one line, got {}",
            lines.len()
        ))),
    }
}

fn parse_categories(list: &str) -> BTreeSet<ErrorCategory> {
    list.split([',', ';', '/'])
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none") && *s != "-")
        .map(ErrorCategory::parse_lenient)
        .filter(|c| *c != ErrorCategory::NoEdit)
        .collect()
}

/// Reads `Score:`, `Resolved:`, `Remaining:` and `Feedback:` lines. Unknown
/// category names become `Other`; a category listed on both sides counts as
/// remaining.
pub fn parse_analysis(reply: &str) -> Result<LlmAnalysis, ProviderError> {
    let mut score = None;
    let mut resolved = BTreeSet::new();
    let mut remaining = BTreeSet::new();
    let mut feedback: Vec<&str> = Vec::new();
    let mut in_feedback = false;
    for line in reply.lines() {
        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim().to_ascii_lowercase(), v.trim()),
            None => (String::new(), line.trim()),
        };
        match key.as_str() {
            "score" => {
                score = Some(parse_score(value)?);
                in_feedback = false;
            }
            "resolved" => {
                resolved = parse_categories(value);
                in_feedback = false;
            }
            "remaining" => {
                remaining = parse_categories(value);
                in_feedback = false;
            }
            "feedback" => {
                feedback.push(value);
                in_feedback = true;
            }
            _ if in_feedback && !line.trim().is_empty() => feedback.push(line.trim()),
            _ => {}
        }
    }
    let score_after = score.ok_or_else(|| ProviderError::MalformedResponse("analysis lacks a Score line".into()))?;
    resolved.retain(|c| !remaining.contains(c));
    Ok(LlmAnalysis {
        resolved_categories: resolved,
        remaining_categories: remaining,
        feedback_text: feedback.join(" "),
        score_after,
    })
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}
