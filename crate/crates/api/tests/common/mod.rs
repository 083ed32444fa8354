#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mtloop_api::engine::{Engine, EngineConfig, IngestRequest, Providers};
use mtloop_api::http::{router, RouterOptions, SharedEngine};
use mtloop_core::domain::{ProviderKind, ProviderModel};
use mtloop_core::providers::mock::{MockLlm, MockMt};
use mtloop_core::providers::{Backend, LlmClient, Provider, RetryPolicy, TeacherMetric};
use mtloop_core::store::{ManualClock, Store};
use serde_json::Value;
use tower::ServiceExt;

pub const START_MS: u64 = 1_700_000_000_000;

/// (id, source, reference, mt-a output, mt-b output)
pub const SEGMENTS: [(&str, &str, &str, &str, &str); 3] = [
    ("s1", "el gato se sentó", "the cat sat down", "the dog sat up", "the cat sat up"),
    ("s2", "hola mundo", "hello world", "hello world", "hi world"),
    ("s3", "buenos días", "good morning", "good day", "good morning"),
];

pub fn references() -> Arc<HashMap<String, String>> {
    Arc::new(SEGMENTS.iter().map(|s| (s.1.to_string(), s.2.to_string())).collect())
}

pub fn model(id: &str, kind: ProviderKind) -> ProviderModel {
    ProviderModel {
        id: id.into(),
        kind,
        endpoint: format!("mock:{id}"),
        display_name: id.into(),
    }
}

pub fn mock_providers() -> Providers {
    let mut a = MockMt::new();
    let mut b = MockMt::new();
    for s in SEGMENTS {
        a = a.with(s.1, "en", s.3);
        b = b.with(s.1, "en", s.4);
    }
    let judge = LlmClient::new(Provider::new(model("judge", ProviderKind::LLM), Arc::new(MockLlm::new(references()))));
    Providers {
        mt: vec![
            Provider::new(model("mt-a", ProviderKind::MT), Arc::new(a)),
            Provider::new(model("mt-b", ProviderKind::MT), Arc::new(b)),
        ],
        teacher: Some(Arc::new(judge.clone()) as Arc<dyn TeacherMetric>),
        judge: Some(judge),
        embedder: None,
    }
}

/// Judge whose every call goes through `backend`, without retry delays.
pub fn scripted_judge(backend: Arc<dyn Backend>) -> LlmClient {
    LlmClient::new(Provider::new(model("judge", ProviderKind::LLM), backend).with_retry(RetryPolicy::immediate(3)))
}

pub struct Fixture {
    pub engine: SharedEngine,
    pub clock: Arc<ManualClock>,
    pub app: Router,
}

pub fn engine_config() -> EngineConfig {
    EngineConfig {
        annotators: BTreeSet::from(["alice".to_string(), "bob".to_string()]),
        ..EngineConfig::default()
    }
}

pub fn build(providers: Providers, opts: RouterOptions) -> Fixture {
    let clock = Arc::new(ManualClock::new(START_MS));
    let store = Store::in_memory(Box::new(Arc::clone(&clock)));
    let engine = Engine::new(store, providers, engine_config()).unwrap();
    let engine = Arc::new(Mutex::new(engine));
    let app = router(Arc::clone(&engine), opts);
    Fixture { engine, clock, app }
}

pub fn fixture() -> Fixture {
    build(mock_providers(), RouterOptions { batch_size: 2, ..Default::default() })
}

pub fn ingest_body(i: usize) -> Value {
    let s = SEGMENTS[i];
    serde_json::to_value(IngestRequest {
        id: s.0.into(),
        source: s.1.into(),
        source_lang: "es".into(),
        target_lang: "en".into(),
        topic: Some(if i == 0 { "animals" } else { "greetings" }.into()),
        hypotheses: Vec::new(),
    })
    .unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, token: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        bytes,
    }
}

pub async fn raw(app: &Router, method: Method, uri: &str, body: &str) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type: None,
        bytes,
    }
}

/// Compares `text` with `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
pub fn golden(name: &str, text: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(text, want, "golden mismatch for {name}");
}

pub fn golden_json(name: &str, value: &Value) {
    golden(name, &(serde_json::to_string_pretty(value).unwrap() + "\n"));
}
