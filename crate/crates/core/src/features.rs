//! Feature vectors for the online learner.
//!
//! Surface features are computed here; embeddings and any richer linguistic
//! features arrive from a provider and are appended by [`FeatureAssembler`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;

/// Schema version of the surface-only feature layout.
pub const SURFACE_SCHEMA_VERSION: u32 = 1;

const SIDE_FEATURES: [&str; 6] = [
    "token_count",
    "char_count",
    "mean_token_len",
    "punct_count",
    "digit_count",
    "type_token_ratio",
];

const CROSS_FEATURES: [&str; 3] = ["token_count_ratio", "char_count_ratio", "abs_char_delta"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("embedding has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no embedding dimension registered")]
    NoEmbeddingRegistered,
    #[error("embedding contains a non-finite value")]
    NonFinite,
}

/// Ordered feature names plus a version and a checksum over both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SchemaRepr", into = "SchemaRepr")]
pub struct FeatureSchema {
    version: u32,
    names: Vec<String>,
    checksum: u32,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    schema_version: u32,
    names: Vec<String>,
}

impl From<SchemaRepr> for FeatureSchema {
    fn from(r: SchemaRepr) -> Self {
        FeatureSchema::new(r.schema_version, r.names)
    }
}

impl From<FeatureSchema> for SchemaRepr {
    fn from(s: FeatureSchema) -> Self {
        SchemaRepr {
            schema_version: s.version,
            names: s.names,
        }
    }
}

impl FeatureSchema {
    pub fn new(version: u32, names: Vec<String>) -> Self {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&version.to_le_bytes());
        for name in &names {
            hasher.update(name.as_bytes());
            hasher.update(&[0]);
        }
        Self {
            version,
            names,
            checksum: hasher.finalize(),
        }
    }

    pub fn surface() -> Self {
        let mut names = Vec::with_capacity(15);
        for side in ["src", "hyp"] {
            names.extend(SIDE_FEATURES.iter().map(|f| format!("{side}_{f}")));
        }
        names.extend(CROSS_FEATURES.iter().map(|f| f.to_string()));
        Self::new(SURFACE_SCHEMA_VERSION, names)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// JSON export for external providers and chart labels.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VectorRepr", into = "VectorRepr")]
pub struct FeatureVector {
    schema: Arc<FeatureSchema>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    values: Vec<f64>,
    names: Vec<String>,
    schema_version: u32,
}

impl From<VectorRepr> for FeatureVector {
    fn from(r: VectorRepr) -> Self {
        FeatureVector {
            schema: Arc::new(FeatureSchema::new(r.schema_version, r.names)),
            values: r.values,
        }
    }
}

impl From<FeatureVector> for VectorRepr {
    fn from(v: FeatureVector) -> Self {
        VectorRepr {
            values: v.values,
            names: v.schema.names.clone(),
            schema_version: v.schema.version,
        }
    }
}

impl FeatureVector {
    /// Panics if `values` and the schema disagree in length.
    pub fn new(schema: Arc<FeatureSchema>, values: Vec<f64>) -> Self {
        assert_eq!(schema.len(), values.len(), "feature values must align with schema names");
        Self { schema, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        self.schema.names()
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn schema_version(&self) -> u32 {
        self.schema.version
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct SideStats {
    token_count: f64,
    char_count: f64,
    mean_token_len: f64,
    punct_count: f64,
    digit_count: f64,
    type_token_ratio: f64,
}

fn side_stats(text: &str) -> SideStats {
    let tokens = tokenize(text);
    let token_count = tokens.len();
    let token_chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
    let distinct = tokens.iter().collect::<std::collections::BTreeSet<_>>().len();
    let mut punct = 0usize;
    let mut digits = 0usize;
    for c in text.chars() {
        if c.is_numeric() {
            digits += 1;
        } else if !c.is_alphanumeric() && !c.is_whitespace() && !c.is_control() {
            punct += 1;
        }
    }
    let per_token = |x: usize| if token_count == 0 { 0.0 } else { x as f64 / token_count as f64 };
    SideStats {
        token_count: token_count as f64,
        char_count: text.chars().count() as f64,
        mean_token_len: per_token(token_chars),
        punct_count: punct as f64,
        digit_count: digits as f64,
        type_token_ratio: per_token(distinct),
    }
}

/// Hypothesis/source ratio, 1.0 when the source side is empty.
fn guarded_ratio(hyp: f64, src: f64) -> f64 {
    if src == 0.0 {
        1.0
    } else {
        hyp / src
    }
}

/// Surface statistics of a (source, hypothesis) pair in [`FeatureSchema::surface`] order.
pub fn extract_surface(source: &str, hypothesis: &str) -> FeatureVector {
    thread_local! {
        static SURFACE: Arc<FeatureSchema> = Arc::new(FeatureSchema::surface());
    }
    let src = side_stats(source);
    let hyp = side_stats(hypothesis);
    let mut values = Vec::with_capacity(15);
    for s in [&src, &hyp] {
        values.extend([
            s.token_count,
            s.char_count,
            s.mean_token_len,
            s.punct_count,
            s.digit_count,
            s.type_token_ratio,
        ]);
    }
    values.push(guarded_ratio(hyp.token_count, src.token_count));
    values.push(guarded_ratio(hyp.char_count, src.char_count));
    values.push((hyp.char_count - src.char_count).abs());
    FeatureVector::new(SURFACE.with(Arc::clone), values)
}

/// Appends externally computed embeddings to surface vectors and owns the
/// versioning of the combined layout.
#[derive(Debug, Clone)]
pub struct FeatureAssembler {
    embedding_dim: Option<usize>,
    schema: Arc<FeatureSchema>,
}

impl Default for FeatureAssembler {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureAssembler {
    pub fn new() -> Self {
        Self {
            embedding_dim: None,
            schema: Arc::new(FeatureSchema::surface()),
        }
    }

    pub fn with_embedding_dim(dim: usize) -> Self {
        let mut a = Self::new();
        a.register_embedding_dim(dim);
        a
    }

    /// Registers the embedding width. Changing it bumps the schema version.
    pub fn register_embedding_dim(&mut self, dim: usize) {
        if self.embedding_dim == Some(dim) {
            return;
        }
        let mut names = FeatureSchema::surface().names;
        names.extend((0..dim).map(|i| format!("emb_{i}")));
        self.schema = Arc::new(FeatureSchema::new(self.schema.version + 1, names));
        self.embedding_dim = Some(dim);
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    /// Layout of vectors produced with an embedding attached.
    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn assemble(&self, surface: FeatureVector, embedding: Option<&[f64]>) -> Result<FeatureVector, FeatureError> {
        let Some(embedding) = embedding else {
            return Ok(surface);
        };
        let expected = self.embedding_dim.ok_or(FeatureError::NoEmbeddingRegistered)?;
        if embedding.len() != expected {
            return Err(FeatureError::DimensionMismatch {
                expected,
                got: embedding.len(),
            });
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        let mut values = surface.values;
        values.extend_from_slice(embedding);
        Ok(FeatureVector::new(Arc::clone(&self.schema), values))
    }

    /// Surface extraction followed by [`FeatureAssembler::assemble`].
    pub fn extract(&self, source: &str, hypothesis: &str, embedding: Option<&[f64]>) -> Result<FeatureVector, FeatureError> {
        self.assemble(extract_surface(source, hypothesis), embedding)
    }
}
