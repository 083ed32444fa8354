use std::io::Write;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::ProjectState;

pub const CORPUS_FILE: &str = "corpus.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Pseudo,
}

/// One line of the exported parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct CorpusRecord {
    pub source: String,
    pub best_translation: String,
    pub post_edit: String,
    pub source_lang: String,
    pub target_lang: String,
    pub provenance: Provenance,
}

/// Labeled segments in id order. A human label wins over a pseudo label;
/// without a post-edit the chosen translation stands as the target.
pub fn corpus_records(state: &ProjectState) -> Vec<CorpusRecord> {
    state
        .final_labels()
        .into_iter()
        .filter_map(|(id, rec)| {
            let seg = state.segment(id)?;
            let chosen = seg.hypothesis(&rec.annotation.chosen_provider_id)?;
            Some(CorpusRecord {
                source: seg.source_text.clone(),
                best_translation: chosen.text.clone(),
                post_edit: rec.annotation.post_edit_text.clone().unwrap_or_else(|| chosen.text.clone()),
                source_lang: seg.source_lang.clone(),
                target_lang: seg.target_lang.clone(),
                provenance: if rec.annotation.is_pseudo { Provenance::Pseudo } else { Provenance::Human },
            })
        })
        .collect()
}

/// Writes one JSON object per line; returns the record count.
pub fn write_corpus_jsonl<W: Write>(state: &ProjectState, mut out: W) -> std::io::Result<usize> {
    let records = corpus_records(state);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}
