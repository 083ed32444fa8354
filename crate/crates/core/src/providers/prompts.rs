use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    Synthesize,
    DirectAssess,
    AnalyzeAnnotation,
    Recommend,
}

impl PromptId {
    pub const ALL: [PromptId; 4] = [
        PromptId::Synthesize,
        PromptId::DirectAssess,
        PromptId::AnalyzeAnnotation,
        PromptId::Recommend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Synthesize => "synthesize",
            PromptId::DirectAssess => "direct_assess",
            PromptId::AnalyzeAnnotation => "analyze_annotation",
            PromptId::Recommend => "recommend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub version: u32,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(id: PromptId, version: u32, text: impl Into<String>) -> Self {
        Self {
            id,
            version,
            text: text.into(),
        }
    }

    /// Built-in template for `id`.
    pub fn builtin(id: PromptId) -> Self {
        let text = match id {
            PromptId::Synthesize => include_str!("../../prompts/synthesize.v1.txt"),
            PromptId::DirectAssess => include_str!("../../prompts/direct_assess.v1.txt"),
            PromptId::AnalyzeAnnotation => include_str!("../../prompts/analyze_annotation.v1.txt"),
            PromptId::Recommend => include_str!("../../prompts/recommend.v1.txt"),
        };
        Self::new(id, 1, text)
    }

    /// Names inside `{...}` in order of first appearance, deduplicated.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let name = &after[..close];
                    if is_placeholder_name(name) && seen.insert(name) {
                        out.push(name);
                    }
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }

    /// Substitutes every placeholder. Values are inserted verbatim and never
    /// re-scanned, so braces inside user text are safe.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, ProviderError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_placeholder_name(&after[..close]) => {
                    let name = &after[..close];
                    let value = vars
                        .get(name)
                        .ok_or_else(|| ProviderError::MissingPlaceholder(name.to_string()))?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// Numbered candidate list, one per line, 1-based.
pub fn enumerate_candidates<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The template set in use by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    templates: BTreeMap<PromptId, PromptTemplate>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: PromptId::ALL.iter().map(|id| (*id, PromptTemplate::builtin(*id))).collect(),
        }
    }

    pub fn get(&self, id: PromptId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn replace(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id, template);
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
