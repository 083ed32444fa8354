//! Offline providers. Each is a pure function of its inputs and seed; the
//! LLM and embedder mocks are grounded in hidden reference translations.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{Backend, Embedder, Langs, ProviderError, ProviderReply, ProviderRequest, Task};
use crate::domain::ErrorCategory;
use crate::metrics::ter_text;

/// Deterministic value in [0, 1) derived from `seed` and `parts`.
pub fn hashed_unit(seed: u64, parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Any closure can serve as a backend.
impl<F> Backend for F
where
    F: Fn(&str, &ProviderRequest) -> Result<ProviderReply, ProviderError> + Send + Sync,
{
    fn call(&self, provider_id: &str, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        self(provider_id, request)
    }
}

fn status(provider: &str, status: u16) -> ProviderError {
    ProviderError::Status {
        provider: provider.to_string(),
        status,
    }
}

/// Lookup-table MT engine keyed by (source text, target language).
#[derive(Debug, Clone, Default)]
pub struct MockMt {
    table: HashMap<(String, String), String>,
}

impl MockMt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, source: &str, target_lang: &str, translation: &str) -> Self {
        self.table
            .insert((source.to_string(), target_lang.to_string()), translation.to_string());
        self
    }
}

impl Backend for MockMt {
    fn call(&self, provider_id: &str, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        if request.task != Task::Translate {
            return Err(status(provider_id, 400));
        }
        self.table
            .get(&(request.source.clone(), request.target_lang.clone()))
            .map(ProviderReply::text)
            .ok_or_else(|| status(provider_id, 404))
    }
}

/// Hidden reference translations keyed by source text.
pub type References = Arc<HashMap<String, String>>;

/// LLM that judges against hidden references: direct assessment is
/// `100·(1 − TER(hyp, ref))`, optionally perturbed by seeded noise for inexact
/// matches. Synthesis echoes the best-scoring candidate, recommendation names it.
#[derive(Debug, Clone)]
pub struct MockLlm {
    references: References,
    seed: u64,
    noise: f64,
}

impl MockLlm {
    pub fn new(references: References) -> Self {
        Self {
            references,
            seed: 0,
            noise: 0.0,
        }
    }

    /// Uniform noise of +-`amplitude` DA points.
    pub fn with_noise(mut self, seed: u64, amplitude: f64) -> Self {
        self.seed = seed;
        self.noise = amplitude;
        self
    }

    /// The score this mock reports for `hypothesis`.
    pub fn direct_assessment(&self, source: &str, hypothesis: &str) -> Option<f64> {
        let reference = self.references.get(source)?;
        let ter = ter_text(hypothesis, reference).ok()?;
        let clean = (100.0 * (1.0 - ter)).clamp(0.0, 100.0);
        if ter == 0.0 || self.noise == 0.0 {
            return Some(clean);
        }
        let u = hashed_unit(self.seed, &["da", source, hypothesis]);
        Some((clean + self.noise * (2.0 * u - 1.0)).clamp(0.0, 100.0))
    }

    fn best(&self, provider_id: &str, req: &ProviderRequest) -> Result<usize, ProviderError> {
        if req.candidates.is_empty() {
            return Err(status(provider_id, 400));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in req.candidates.iter().enumerate() {
            let s = self
                .direct_assessment(&req.source, c)
                .ok_or_else(|| status(provider_id, 404))?;
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    }

    fn analysis(&self, provider_id: &str, req: &ProviderRequest) -> Result<String, ProviderError> {
        let hyp = req.hypothesis.as_deref().ok_or_else(|| status(provider_id, 400))?;
        let post = req.post_edit.as_deref().ok_or_else(|| status(provider_id, 400))?;
        let prior: BTreeSet<ErrorCategory> = req
            .prior_categories
            .iter()
            .map(|c| ErrorCategory::parse_lenient(c))
            .filter(|c| *c != ErrorCategory::NoEdit)
            .collect();
        let before = self.direct_assessment(&req.source, hyp).ok_or_else(|| status(provider_id, 404))?;
        let after = self.direct_assessment(&req.source, post).ok_or_else(|| status(provider_id, 404))?;
        let n_resolved = if hyp.trim() == post.trim() || after <= before {
            0
        } else if after >= 100.0 {
            prior.len()
        } else {
            let share = (after - before) / (100.0 - before);
            ((prior.len() as f64) * share).ceil() as usize
        };
        let resolved: Vec<&str> = prior.iter().take(n_resolved).map(|c| c.as_str()).collect();
        let remaining: Vec<&str> = prior.iter().skip(n_resolved).map(|c| c.as_str()).collect();
        let list = |v: &[&str]| if v.is_empty() { "none".to_string() } else { v.join(", ") };
        let feedback = if n_resolved == prior.len() {
            "The post-edit addresses the flagged issues."
        } else if n_resolved == 0 {
            "The post-edit leaves the flagged issues in place."
        } else {
            "The post-edit fixes part of the flagged issues."
        };
        Ok(format!(
            "Score: {after}\nResolved: {}\nRemaining: {}\nFeedback: {feedback}",
            list(&resolved),
            list(&remaining)
        ))
    }
}

impl Backend for MockLlm {
    fn call(&self, provider_id: &str, req: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let text = match req.task {
            Task::DirectAssess => {
                let hyp = req.hypothesis.as_deref().ok_or_else(|| status(provider_id, 400))?;
                let s = self.direct_assessment(&req.source, hyp).ok_or_else(|| status(provider_id, 404))?;
                format!("Score: {s}")
            }
            Task::Synthesize => req.candidates[self.best(provider_id, req)?].clone(),
            Task::Recommend => format!("{} - closest to the intended meaning", self.best(provider_id, req)? + 1),
            Task::AnalyzeAnnotation => self.analysis(provider_id, req)?,
            Task::Translate | Task::Embed => return Err(status(provider_id, 400)),
        };
        Ok(ProviderReply::text(text))
    }
}

/// Embedder whose first dimension tracks similarity to the hidden reference
/// (`1 − TER`, clipped to [0, 1], plus seeded noise); the remaining dimensions
/// are seeded noise.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    references: References,
    seed: u64,
    dim: usize,
    noise: f64,
}

impl MockEmbedder {
    pub fn new(references: References, dim: usize, seed: u64, noise: f64) -> Self {
        assert!(dim >= 1, "embedding needs at least one dimension");
        Self {
            references,
            seed,
            dim,
            noise,
        }
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, source: &str, hypothesis: &str, _langs: Langs<'_>) -> Result<Vec<f64>, ProviderError> {
        let reference = self.references.get(source).ok_or_else(|| status("mock-embedder", 404))?;
        let sim = 1.0 - ter_text(hypothesis, reference).unwrap_or(1.0).min(1.0);
        let mut out = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let u = hashed_unit(self.seed, &["emb", &j.to_string(), source, hypothesis]) - 0.5;
            out.push(if j == 0 { sim + self.noise * u } else { u });
        }
        Ok(out)
    }
}

/// Plays back a fixed list of replies and records every request.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Result<ProviderReply, ProviderError>>>,
    requests: Mutex<Vec<ProviderRequest>>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = Result<ProviderReply, ProviderError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ProviderRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn call(&self, provider_id: &str, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        self.requests.lock().unwrap().push(request.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(status(provider_id, 503)))
    }
}
