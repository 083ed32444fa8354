//! Clients for MT, LLM and embedding services.
//!
//! Every call goes through a [`Backend`]: HTTP for live services, or one of
//! the deterministic mocks in [`mock`]. [`Provider`] adds retries and a
//! per-provider concurrency cap; [`LlmClient`] adds prompt rendering and
//! reply parsing for the four LLM tasks.

mod http;
pub mod mock;
pub mod parse;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ErrorCategory, Hypothesis, ProviderKind, ProviderModel, ENSEMBLE_PROVIDER_ID, MAX_HYPOTHESES};

pub use http::{api_key_env_var, HttpBackend};
pub use prompts::{enumerate_candidates, PromptId, PromptSet, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider {provider} timed out")]
    Timeout { provider: String },
    #[error("provider {provider} returned status {status}")]
    Status { provider: String, status: u16 },
    #[error("provider {provider} unreachable: {message}")]
    Transport { provider: String, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no score in reply: {0:?}")]
    UnparseableScore(String),
    #[error("no valid candidate index in reply: {0:?}")]
    IndexParseFailure(String),
    #[error("template placeholder {{{0}}} has no value")]
    MissingPlaceholder(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } | ProviderError::Transport { .. } => true,
            ProviderError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Translate,
    Synthesize,
    DirectAssess,
    AnalyzeAnnotation,
    Recommend,
    Embed,
}

/// Body POSTed to a provider endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub task: Task,
    pub source: String,
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_edit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior_categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl ProviderRequest {
    pub fn new(task: Task, source: &str, langs: Langs<'_>) -> Self {
        Self {
            task,
            source: source.to_string(),
            source_lang: langs.source.to_string(),
            target_lang: langs.target.to_string(),
            candidates: Vec::new(),
            hypothesis: None,
            post_edit: None,
            prior_categories: Vec::new(),
            prompt: None,
        }
    }
}

/// Reply body. LLM tasks answer in `text` (parsed leniently) unless the
/// service returns a ready `score`; `analysis` is accepted as an alias of `text`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl ProviderReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    fn body(&self) -> Result<&str, ProviderError> {
        self.text
            .as_deref()
            .or(self.analysis.as_deref())
            .ok_or_else(|| ProviderError::MalformedResponse("reply has no text".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Langs<'a> {
    pub source: &'a str,
    pub target: &'a str,
}

impl<'a> Langs<'a> {
    pub fn new(source: &'a str, target: &'a str) -> Self {
        Self { source, target }
    }
}

/// One round trip to a service. Implementations must be safe to call from
/// several threads.
pub trait Backend: Send + Sync {
    fn call(&self, provider_id: &str, request: &ProviderRequest) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    #[serde(with = "millis")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Counting semaphore capping in-flight requests per provider.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A configured service: model metadata, transport, retry policy and
/// concurrency cap.
#[derive(Clone)]
pub struct Provider {
    model: ProviderModel,
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("model", &self.model)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(model: ProviderModel, backend: Arc<dyn Backend>) -> Self {
        Self {
            model,
            backend,
            retry: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(4)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limiter = Arc::new(Limiter::new(limit));
        self
    }

    pub fn model(&self) -> &ProviderModel {
        &self.model
    }

    pub fn id(&self) -> &str {
        &self.model.id
    }

    /// Calls the backend, retrying transient failures with exponential backoff.
    pub fn call(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let _permit = self.limiter.acquire();
        let mut delay = self.retry.base_delay;
        let mut attempt = 1;
        loop {
            match self.backend.call(&self.model.id, request) {
                Err(e) if e.is_retryable() && attempt < self.retry.attempts.max(1) => {
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Translation of `source` by an MT provider.
pub fn translate(provider: &Provider, source: &str, langs: Langs<'_>) -> Result<Hypothesis, ProviderError> {
    if provider.model().kind != ProviderKind::MT {
        return Err(ProviderError::InvalidRequest(format!("{} is not an MT provider", provider.id())));
    }
    let reply = provider.call(&ProviderRequest::new(Task::Translate, source, langs))?;
    let text = reply.body()?.trim();
    if text.is_empty() {
        return Err(ProviderError::MalformedResponse("empty translation".into()));
    }
    Ok(Hypothesis::new(provider.id(), text))
}

/// Asks every provider in turn; one result per provider, in order.
pub fn fan_out(providers: &[Provider], source: &str, langs: Langs<'_>) -> Vec<Result<Hypothesis, ProviderError>> {
    providers.iter().map(|p| translate(p, source, langs)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LlmAnalysis {
    pub resolved_categories: BTreeSet<ErrorCategory>,
    pub remaining_categories: BTreeSet<ErrorCategory>,
    pub feedback_text: String,
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub provider_id: String,
    pub index: usize,
    pub rationale: String,
}

/// LLM provider plus the prompt templates it is driven with.
#[derive(Debug, Clone)]
pub struct LlmClient {
    provider: Provider,
    prompts: PromptSet,
}

fn base_vars<'a>(source: &str, langs: Langs<'_>) -> BTreeMap<&'a str, String> {
    BTreeMap::from([
        ("source", source.to_string()),
        ("source_lang", langs.source.to_string()),
        ("target_lang", langs.target.to_string()),
    ])
}

fn check_count(hyps: &[Hypothesis], min: usize) -> Result<(), ProviderError> {
    if hyps.len() < min || hyps.len() > MAX_HYPOTHESES {
        return Err(ProviderError::InvalidRequest(format!(
            "need {min}..={MAX_HYPOTHESES} hypotheses, got {}",
            hyps.len()
        )));
    }
    Ok(())
}

impl LlmClient {
    pub fn new(provider: Provider) -> Self {
        Self {
            provider,
            prompts: PromptSet::builtin(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn render_synthesize(&self, source: &str, hypotheses: &[Hypothesis], langs: Langs<'_>) -> Result<String, ProviderError> {
        let mut vars = base_vars(source, langs);
        vars.insert("candidates", enumerate_candidates(hypotheses.iter().map(|h| h.text.as_str())));
        self.prompts.get(PromptId::Synthesize).render(&vars)
    }

    pub fn render_direct_assess(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<String, ProviderError> {
        let mut vars = base_vars(source, langs);
        vars.insert("hypothesis", hypothesis.to_string());
        self.prompts.get(PromptId::DirectAssess).render(&vars)
    }

    pub fn render_analysis(
        &self,
        source: &str,
        hypothesis: &str,
        post_edit: &str,
        prior: &BTreeSet<ErrorCategory>,
        langs: Langs<'_>,
    ) -> Result<String, ProviderError> {
        let mut vars = base_vars(source, langs);
        vars.insert("hypothesis", hypothesis.to_string());
        vars.insert("post_edit", post_edit.to_string());
        let listed: Vec<&str> = prior.iter().map(|c| c.as_str()).collect();
        vars.insert(
            "prior_categories",
            if listed.is_empty() { "none".to_string() } else { listed.join(", ") },
        );
        self.prompts.get(PromptId::AnalyzeAnnotation).render(&vars)
    }

    pub fn render_recommend(&self, source: &str, hypotheses: &[Hypothesis], langs: Langs<'_>) -> Result<String, ProviderError> {
        let mut vars = base_vars(source, langs);
        vars.insert("candidates", enumerate_candidates(hypotheses.iter().map(|h| h.text.as_str())));
        self.prompts.get(PromptId::Recommend).render(&vars)
    }

    /// Ensemble translation mixing all hypotheses, attributed to the ensemble provider id.
    pub fn synthesize_translation(&self, source: &str, hypotheses: &[Hypothesis], langs: Langs<'_>) -> Result<Hypothesis, ProviderError> {
        check_count(hypotheses, 1)?;
        let mut req = ProviderRequest::new(Task::Synthesize, source, langs);
        req.candidates = hypotheses.iter().map(|h| h.text.clone()).collect();
        req.prompt = Some(self.render_synthesize(source, hypotheses, langs)?);
        let reply = self.provider.call(&req)?;
        let text = parse::parse_synthesis(reply.body()?)?;
        Ok(Hypothesis::new(ENSEMBLE_PROVIDER_ID, text))
    }

    /// Direct-assessment score in [0, 100].
    pub fn score_direct_assessment(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<f64, ProviderError> {
        if hypothesis.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty hypothesis".into()));
        }
        let mut req = ProviderRequest::new(Task::DirectAssess, source, langs);
        req.hypothesis = Some(hypothesis.to_string());
        req.prompt = Some(self.render_direct_assess(source, hypothesis, langs)?);
        let reply = self.provider.call(&req)?;
        match reply.score {
            Some(s) if s.is_finite() => Ok(s.clamp(0.0, 100.0)),
            Some(_) => Err(ProviderError::UnparseableScore("non-finite score".into())),
            None => parse::parse_score(reply.body()?),
        }
    }

    pub fn analyze_annotation(
        &self,
        source: &str,
        hypothesis: &str,
        post_edit: &str,
        prior: &BTreeSet<ErrorCategory>,
        langs: Langs<'_>,
    ) -> Result<LlmAnalysis, ProviderError> {
        if post_edit.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty post-edit".into()));
        }
        let mut req = ProviderRequest::new(Task::AnalyzeAnnotation, source, langs);
        req.hypothesis = Some(hypothesis.to_string());
        req.post_edit = Some(post_edit.to_string());
        req.prior_categories = prior.iter().map(|c| c.as_str().to_string()).collect();
        req.prompt = Some(self.render_analysis(source, hypothesis, post_edit, prior, langs)?);
        let reply = self.provider.call(&req)?;
        parse::parse_analysis(reply.body()?)
    }

    pub fn recommend_best(&self, source: &str, hypotheses: &[Hypothesis], langs: Langs<'_>) -> Result<Recommendation, ProviderError> {
        check_count(hypotheses, 2)?;
        let mut req = ProviderRequest::new(Task::Recommend, source, langs);
        req.candidates = hypotheses.iter().map(|h| h.text.clone()).collect();
        req.prompt = Some(self.render_recommend(source, hypotheses, langs)?);
        let reply = self.provider.call(&req)?;
        let (index, rationale) = parse::parse_recommendation(reply.body()?, hypotheses.len())?;
        Ok(Recommendation {
            provider_id: hypotheses[index].provider_id.clone(),
            index,
            rationale,
        })
    }
}

/// Reference-free quality score in [0, 100] the online regressor learns from.
pub trait TeacherMetric: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<f64, ProviderError>;
}

/// Direct assessment by an LLM serves as the teacher.
impl TeacherMetric for LlmClient {
    fn id(&self) -> &str {
        self.provider.id()
    }

    fn score(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<f64, ProviderError> {
        self.score_direct_assessment(source, hypothesis, langs)
    }
}

/// Sentence-pair embeddings used as extra learner features.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<Vec<f64>, ProviderError>;
}

/// Embeddings served by an embedding provider.
#[derive(Debug, Clone)]
pub struct ProviderEmbedder {
    provider: Provider,
    dim: usize,
}

impl ProviderEmbedder {
    pub fn new(provider: Provider, dim: usize) -> Self {
        Self { provider, dim }
    }
}

impl Embedder for ProviderEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, source: &str, hypothesis: &str, langs: Langs<'_>) -> Result<Vec<f64>, ProviderError> {
        let mut req = ProviderRequest::new(Task::Embed, source, langs);
        req.hypothesis = Some(hypothesis.to_string());
        let reply = self.provider.call(&req)?;
        let v = reply
            .embedding
            .ok_or_else(|| ProviderError::MalformedResponse("reply has no embedding".into()))?;
        if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} finite values, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(v)
    }
}
