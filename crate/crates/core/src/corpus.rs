//! Input corpus format: one JSON object per line with the source, its
//! reference translation and optional pre-computed MT hypotheses.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_segment, Hypothesis, Segment};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHypothesis {
    pub provider_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub source: String,
    pub source_lang: String,
    pub target_lang: String,
    /// Hidden reference; never shown to the learner.
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hypotheses: Vec<CorpusHypothesis>,
}

impl CorpusEntry {
    /// Segment with the entry's hypotheses, status Pending.
    pub fn to_segment(&self) -> Segment {
        let hyps = self
            .hypotheses
            .iter()
            .map(|h| Hypothesis::new(h.provider_id.clone(), h.text.clone()))
            .collect();
        let mut seg = Segment::new(&self.id, &self.source, &self.source_lang, &self.target_lang, hyps);
        seg.topic = self.topic.clone();
        seg
    }
}

/// Reads JSONL; blank lines are skipped. Entries carrying hypotheses must
/// form valid segments.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if entry.reference.trim().is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: "empty reference".into(),
            });
        }
        if !entry.hypotheses.is_empty() {
            validate_segment(&entry.to_segment()).map_err(|v| CorpusError::Parse {
                line: i + 1,
                message: format!("{v:?}"),
            })?;
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(entries: &[CorpusEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
