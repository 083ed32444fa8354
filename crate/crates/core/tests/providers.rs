use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mtloop_core::domain::{ErrorCategory, Hypothesis, ProviderKind, ProviderModel, ENSEMBLE_PROVIDER_ID};
use mtloop_core::providers::mock::{MockEmbedder, MockLlm, MockMt, ScriptedBackend};
use mtloop_core::providers::{
    api_key_env_var, fan_out, translate, Embedder, HttpBackend, Langs, LlmClient, PromptId, PromptTemplate,
    Provider, ProviderError, ProviderReply, ProviderRequest, RetryPolicy,
};

const EN_DE: Langs<'static> = Langs {
    source: "en",
    target: "de",
};

fn model(id: &str, kind: ProviderKind) -> ProviderModel {
    ProviderModel {
        id: id.into(),
        kind,
        endpoint: format!("mock://{id}"),
        display_name: id.into(),
    }
}

fn refs(pairs: &[(&str, &str)]) -> Arc<HashMap<String, String>> {
    Arc::new(pairs.iter().map(|(s, r)| (s.to_string(), r.to_string())).collect())
}

fn mock_client(pairs: &[(&str, &str)]) -> LlmClient {
    let llm = MockLlm::new(refs(pairs));
    LlmClient::new(Provider::new(model("gpt-mock", ProviderKind::LLM), Arc::new(llm)))
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "rendered prompt differs from {}", path.display());
}

fn hyps(texts: &[&str]) -> Vec<Hypothesis> {
    texts.iter().enumerate().map(|(i, t)| Hypothesis::new(format!("mt{i}"), *t)).collect()
}

#[test]
fn rendered_prompts_match_golden_files() {
    let c = mock_client(&[]);
    let three = hyps(&["Die Katze saß.", "Die Katze sitzt.", "Katze saß {nicht}."]);
    let src = "The cat sat.";
    golden("synthesize.v1.txt", &c.render_synthesize(src, &three, EN_DE).unwrap());
    golden("direct_assess.v1.txt", &c.render_direct_assess(src, "Die Katze saß.", EN_DE).unwrap());
    golden(
        "analyze_annotation.v1.txt",
        &c.render_analysis(
            src,
            "Die Katze sitzt.",
            "Die Katze saß.",
            &BTreeSet::from([ErrorCategory::Fluency, ErrorCategory::Accuracy]),
            EN_DE,
        )
        .unwrap(),
    );
    golden("recommend.v1.txt", &c.render_recommend(src, &three, EN_DE).unwrap());
}

#[test]
fn templates_declare_what_they_render() {
    for id in PromptId::ALL {
        let t = PromptTemplate::builtin(id);
        assert_eq!(t.version, 1);
        let names = t.placeholders();
        assert!(names.contains(&"source") && names.contains(&"target_lang"), "{id:?}");
    }
    let t = PromptTemplate::new(PromptId::Recommend, 2, "{source} -> {missing}");
    let vars = std::collections::BTreeMap::from([("source", "x".to_string())]);
    assert_eq!(t.render(&vars), Err(ProviderError::MissingPlaceholder("missing".into())));
}

#[test]
fn synthesis_prompt_lists_each_candidate_once() {
    let c = mock_client(&[]);
    let three = hyps(&["alpha beta", "gamma delta", "epsilon zeta"]);
    let p = c.render_synthesize("src", &three, EN_DE).unwrap();
    for h in &three {
        assert_eq!(p.matches(h.text.as_str()).count(), 1, "{}", h.text);
    }
    let one = hyps(&["only one"]);
    let p = c.render_synthesize("src", &one, EN_DE).unwrap();
    assert!(p.contains("1. only one") && !p.contains("2. "));
}

#[test]
fn mock_synthesis_echoes_best_candidate() {
    let c = mock_client(&[("src", "the cat sat down")]);
    let h = hyps(&["a dog ran", "the cat sat down", "the cat sat"]);
    let out = c.synthesize_translation("src", &h, EN_DE).unwrap();
    assert_eq!(out.provider_id, ENSEMBLE_PROVIDER_ID);
    assert_eq!(out.text, "the cat sat down");
    let single = c.synthesize_translation("src", &h[..1], EN_DE).unwrap();
    assert_eq!(single.text, "a dog ran");
}

#[test]
fn synthesis_rejects_multi_line_reply() {
    let backend = ScriptedBackend::new([Ok(ProviderReply::text("line one\nline two"))]);
    let c = LlmClient::new(Provider::new(model("llm", ProviderKind::LLM), Arc::new(backend)));
    let err = c.synthesize_translation("s", &hyps(&["a"]), EN_DE).unwrap_err();
    assert!(matches!(err, ProviderError::MalformedResponse(_)));
}

#[test]
fn mock_direct_assessment() {
    let c = mock_client(&[("s1", "x y z")]);
    assert_eq!(c.score_direct_assessment("s1", "x y z", EN_DE).unwrap(), 100.0);
    assert_eq!(c.score_direct_assessment("s1", "a b c", EN_DE).unwrap(), 0.0);
    assert_eq!(c.score_direct_assessment("s1", "x y q", EN_DE).unwrap(), 100.0 * (1.0 - 1.0 / 3.0));
}

#[test]
fn scripted_score_reply() {
    let backend = Arc::new(ScriptedBackend::new([Ok(ProviderReply::text("Score: 87."))]));
    let c = LlmClient::new(Provider::new(model("llm", ProviderKind::LLM), backend.clone()));
    assert_eq!(c.score_direct_assessment("s", "h", EN_DE).unwrap(), 87.0);
    let req = &backend.requests()[0];
    assert!(req.prompt.as_deref().unwrap().contains("\"h\""));
}

#[test]
fn mock_analysis_contract() {
    let c = mock_client(&[("s", "the cat sat down")]);
    let prior = BTreeSet::from([ErrorCategory::Fluency]);
    let same = c.analyze_annotation("s", "the cat sat up", "the cat sat up", &prior, EN_DE).unwrap();
    assert!(same.resolved_categories.is_empty());
    assert_eq!(same.remaining_categories, prior);

    let two = BTreeSet::from([ErrorCategory::Fluency, ErrorCategory::Accuracy]);
    let fixed = c.analyze_annotation("s", "the cat sat up", "the cat sat down", &two, EN_DE).unwrap();
    assert_eq!(fixed.resolved_categories, two);
    assert!(fixed.remaining_categories.is_empty());
    assert_eq!(fixed.score_after, 100.0);
}

#[test]
fn analysis_unknown_category_maps_to_other() {
    let backend = ScriptedBackend::new([Ok(ProviderReply::text("Score: 70\nResolved: Register\nRemaining: none\nFeedback: ok"))]);
    let c = LlmClient::new(Provider::new(model("llm", ProviderKind::LLM), Arc::new(backend)));
    let a = c
        .analyze_annotation("s", "h", "p", &BTreeSet::new(), EN_DE)
        .unwrap();
    assert_eq!(a.resolved_categories, BTreeSet::from([ErrorCategory::Other]));
}

#[test]
fn recommendation() {
    let c = mock_client(&[("s", "exact words here")]);
    let h = hyps(&["nothing alike", "exact words here", "exact words"]);
    let r = c.recommend_best("s", &h, EN_DE).unwrap();
    assert_eq!((r.provider_id.as_str(), r.index), ("mt1", 1));

    let scripted = ScriptedBackend::new([Ok(ProviderReply::text("2 — more fluent")), Ok(ProviderReply::text("7"))]);
    let c = LlmClient::new(Provider::new(model("llm", ProviderKind::LLM), Arc::new(scripted)));
    let h3 = hyps(&["a", "b", "c"]);
    let r = c.recommend_best("s", &h3, EN_DE).unwrap();
    assert_eq!(r.provider_id, "mt1");
    assert_eq!(r.rationale, "more fluent");
    assert!(matches!(c.recommend_best("s", &h3, EN_DE), Err(ProviderError::IndexParseFailure(_))));
}

#[test]
fn mock_translation_and_fan_out() {
    let a = Provider::new(model("mt-a", ProviderKind::MT), Arc::new(MockMt::new().with("hola", "en", "hello")));
    let b = Provider::new(model("mt-b", ProviderKind::MT), Arc::new(MockMt::new().with("hola", "en", "hi")));
    let es_en = Langs::new("es", "en");
    assert_eq!(translate(&a, "hola", es_en).unwrap().text, "hello");
    let all: Vec<Hypothesis> = fan_out(&[a, b], "hola", es_en).into_iter().map(Result::unwrap).collect();
    assert_eq!(all.len(), 2);
    assert_ne!(all[0].text, all[1].text);
    assert_eq!(all[1].provider_id, "mt-b");

    let llm = Provider::new(model("llm", ProviderKind::LLM), Arc::new(MockMt::new()));
    assert!(matches!(translate(&llm, "hola", es_en), Err(ProviderError::InvalidRequest(_))));
}

#[test]
fn retries_stop_after_three_attempts() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let failing = move |id: &str, _: &ProviderRequest| {
        counter.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::Status {
            provider: id.to_string(),
            status: 500,
        })
    };
    let p = Provider::new(model("mt", ProviderKind::MT), Arc::new(failing)).with_retry(RetryPolicy::immediate(3));
    let err = translate(&p, "x", EN_DE).unwrap_err();
    assert_eq!(err, ProviderError::Status { provider: "mt".into(), status: 500 });
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    // client errors are not retried
    let scripted = Arc::new(ScriptedBackend::new([Err(ProviderError::Status { provider: "mt".into(), status: 404 })]));
    let p = Provider::new(model("mt", ProviderKind::MT), scripted.clone()).with_retry(RetryPolicy::immediate(3));
    assert!(translate(&p, "x", EN_DE).is_err());
    assert_eq!(scripted.requests().len(), 1);

    // transient failure then success
    let scripted = Arc::new(ScriptedBackend::new([
        Err(ProviderError::Timeout { provider: "mt".into() }),
        Ok(ProviderReply::text("ok")),
    ]));
    let p = Provider::new(model("mt", ProviderKind::MT), scripted).with_retry(RetryPolicy::immediate(3));
    assert_eq!(translate(&p, "x", EN_DE).unwrap().text, "ok");
}

#[test]
fn mock_embedder_tracks_reference_similarity() {
    let e = MockEmbedder::new(refs(&[("s", "a b c d")]), 4, 9, 0.0);
    let good = e.embed("s", "a b c d", EN_DE).unwrap();
    let bad = e.embed("s", "w x y z", EN_DE).unwrap();
    assert_eq!(good.len(), 4);
    assert_eq!(good[0], 1.0);
    assert_eq!(bad[0], 0.0);
    assert_eq!(e.embed("s", "a b c d", EN_DE).unwrap(), good);
    assert!(good[1..].iter().all(|v| (-0.5..0.5).contains(v)));
}

/// Serves `responses` in order, one per connection, and returns the raw requests.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/provider", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body_in = vec![0u8; len];
            reader.read_exact(&mut body_in).unwrap();
            head.push_str(&String::from_utf8_lossy(&body_in));
            seen.push(head);
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_backend_retries_server_errors() {
    let (url, server) = serve(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
    let backend = HttpBackend::new("vendor-x", &url, Duration::from_secs(5)).unwrap();
    let p = Provider::new(model("vendor-x", ProviderKind::MT), Arc::new(backend)).with_retry(RetryPolicy::immediate(3));
    let err = translate(&p, "hola", Langs::new("es", "en")).unwrap_err();
    assert_eq!(err, ProviderError::Status { provider: "vendor-x".into(), status: 500 });
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn http_backend_round_trip_with_key() {
    let (url, server) = serve(vec![(200, r#"{"text":"hello"}"#)]);
    let backend = HttpBackend::new("vendor-x", &url, Duration::from_secs(5))
        .unwrap()
        .with_api_key(Some("sekret".into()));
    let p = Provider::new(model("vendor-x", ProviderKind::MT), Arc::new(backend));
    assert_eq!(translate(&p, "hola", Langs::new("es", "en")).unwrap().text, "hello");
    let raw = server.join().unwrap().remove(0);
    assert!(raw.to_ascii_lowercase().contains("authorization: bearer sekret"));
    assert!(raw.contains(r#""source":"hola""#) && raw.contains(r#""target_lang":"en""#));
}

#[test]
fn api_key_variable_names() {
    assert_eq!(api_key_env_var("deepl"), "MTLOOP_PROVIDER_DEEPL_KEY");
    assert_eq!(api_key_env_var("gpt-4o.mini"), "MTLOOP_PROVIDER_GPT_4O_MINI_KEY");
}
