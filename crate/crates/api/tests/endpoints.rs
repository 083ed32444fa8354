//! One request/response round trip per endpoint, checked against golden
//! files. Run with `UPDATE_GOLDEN=1` to regenerate after an intended change.

mod common;

use axum::http::{Method, StatusCode};
use common::{call, fixture, golden, golden_json, ingest_body};
use serde_json::json;

#[tokio::test]
async fn every_endpoint_matches_golden() {
    let f = fixture();
    let app = &f.app;

    let r = call(app, Method::GET, "/api/v1/health", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    golden_json("health.json", &r.json());

    let r = call(app, Method::POST, "/api/v1/segments", Some(ingest_body(0)), None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    golden_json("ingest_s1.json", &r.json());

    let r = call(app, Method::GET, "/api/v1/segments/next?annotator=alice", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    let next = r.json();
    assert_eq!(next["segment"]["id"], "s1");
    golden_json("next_alice.json", &next);

    // mt-a scores 50 against the hidden reference; editing it into the
    // reference lifts it to 100.
    let submit = json!({
        "segment_id": "s1",
        "annotator_id": "alice",
        "chosen_provider_id": "mt-a",
        "error_categories": ["Accuracy"],
        "post_edit_text": "the cat sat down",
    });
    let r = call(app, Method::POST, "/api/v1/annotations", Some(submit), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let receipt = r.json();
    assert_eq!(receipt["score_before"], 50.0);
    assert_eq!(receipt["score_after"], 100.0);
    assert_eq!(receipt["improvement_pct"], 100.0);
    golden_json("submit_edit.json", &receipt);

    for i in 1..3 {
        let r = call(app, Method::POST, "/api/v1/segments", Some(ingest_body(i)), None).await;
        assert_eq!(r.status, StatusCode::CREATED);
    }

    let r = call(app, Method::GET, "/api/v1/segments/batch?annotator=bob&count=2", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    let batch = r.json();
    let mut ids: Vec<&str> = batch.as_array().unwrap().iter().map(|s| s["segment"]["id"].as_str().unwrap()).collect();
    ids.sort();
    assert_eq!(ids, ["s2", "s3"]);
    golden_json("batch_bob.json", &batch);

    let no_edit = json!({
        "segment_id": "s2",
        "annotator_id": "bob",
        "chosen_provider_id": "mt-a",
        "error_categories": ["NoEdit"],
    });
    let r = call(app, Method::POST, "/api/v1/annotations", Some(no_edit), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let receipt = r.json();
    assert_eq!(receipt["improvement_pct"], 0.0);
    golden_json("submit_no_edit.json", &receipt);

    let r = call(app, Method::GET, "/api/v1/admin/stats", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    golden_json("stats.json", &r.json());

    let r = call(app, Method::PUT, "/api/v1/admin/threshold", Some(json!({"tau": 0.5})), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["tau"], 0.5);
    golden_json("threshold.json", &r.json());

    let body = json!({"quality": 0.5, "ter": 0.3, "llm": 0.2});
    let r = call(app, Method::PUT, "/api/v1/admin/weights", Some(body), None).await;
    assert_eq!(r.status, StatusCode::OK);
    golden_json("weights.json", &r.json());

    let r = call(app, Method::POST, "/api/v1/admin/auto-label", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    golden_json("auto_label.json", &r.json());

    for (q, name) in [("", "segments_all.json"), ("?rated=true", "segments_rated.json"), ("?rated=false", "segments_unrated.json")] {
        let r = call(app, Method::GET, &format!("/api/v1/admin/segments{q}"), None, None).await;
        assert_eq!(r.status, StatusCode::OK);
        golden_json(name, &r.json());
    }

    let r = call(app, Method::GET, "/api/v1/admin/annotators", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    golden_json("annotators.json", &r.json());

    let r = call(app, Method::GET, "/api/v1/export/corpus", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type.as_deref(), Some("application/x-ndjson"));
    let text = String::from_utf8(r.bytes).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["provenance"] == "human" || v["provenance"] == "pseudo");
    }
    golden("corpus.jsonl", &text);
}

#[tokio::test]
async fn golden_run_is_reproducible() {
    // Two independent services fed the same requests answer byte for byte alike.
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let f = fixture();
        let mut out = Vec::new();
        for i in 0..3 {
            out.push(call(&f.app, Method::POST, "/api/v1/segments", Some(ingest_body(i)), None).await.bytes);
        }
        out.push(call(&f.app, Method::GET, "/api/v1/segments/next?annotator=alice", None, None).await.bytes);
        out.push(call(&f.app, Method::GET, "/api/v1/admin/stats", None, None).await.bytes);
        outputs.push(out);
    }
    assert_eq!(outputs[0], outputs[1]);
}
