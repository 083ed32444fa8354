use std::collections::BTreeSet;
use std::sync::Arc;

use mtloop_core::domain::{Annotation, ErrorCategory, Hypothesis, Segment, SegmentStatus, PSEUDO_ANNOTATOR};
use mtloop_core::features::FeatureSchema;
use mtloop_core::learner::{Hyperparams, ModelState};
use mtloop_core::store::{
    corpus_records, decode, frame, load_snapshot, random_history, replay, replay_onto, write_corpus_jsonl,
    write_snapshot, EventPayload, FileLog, ManualClock, MemoryLog, ProjectState, Provenance, Store, StoreError,
    LOG_FILE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clock() -> Box<ManualClock> {
    Box::new(ManualClock::new(1_000))
}

fn ingest(id: &str) -> EventPayload {
    EventPayload::SegmentIngested {
        segment: Segment::new(
            id,
            "the cat sat down",
            "en",
            "de",
            vec![Hypothesis::new("mt-a", "die Katze"), Hypothesis::new("mt-b", "Katze sitzt")],
        ),
    }
}

#[test]
fn sequence_numbers_start_at_one_and_are_gapless() {
    let mut store = Store::in_memory(clock());
    let seqs: Vec<u64> = ["a", "b", "c"].iter().map(|id| store.commit(ingest(id)).unwrap().seq).collect();
    assert_eq!(seqs, vec![1, 2, 3]);
    assert_eq!(store.events().unwrap().len(), 3);
}

#[test]
fn invalid_payloads_leave_log_untouched() {
    let mut store = Store::in_memory(clock());
    store.commit(ingest("a")).unwrap();
    let hash = store.state().hash();

    let schema = FeatureSchema::new(1, vec!["x".into()]);
    let mut model = ModelState::new(&schema, Hyperparams::default());
    model.version = 1;
    model.weights.regressor.weights[0] = f64::NAN;
    let err = store.commit(EventPayload::ModelUpdated { model }).unwrap_err();
    assert!(matches!(err, StoreError::Serialization(_)), "{err}");

    let err = store.commit(ingest("a")).unwrap_err();
    assert!(matches!(err, StoreError::InvalidEvent(_)));

    assert_eq!(store.events().unwrap().len(), 1);
    assert_eq!(store.state().hash(), hash);
    assert_eq!(store.commit(ingest("b")).unwrap().seq, 2);
}

#[test]
fn storage_full_is_atomic() {
    let probe = frame(br#"{}"#).len() as u64;
    let log = MemoryLog::with_capacity_limit(probe + 200);
    let mut store = Store::from_log(Box::new(log), clock()).unwrap();
    let err = store.commit(ingest("a")).unwrap_err();
    assert!(matches!(err, StoreError::StorageFull { .. }));
    assert_eq!(store.state(), &ProjectState::new());
    assert!(store.events().unwrap().is_empty());
}

#[test]
fn empty_and_single_event_replay() {
    let empty = replay(&[]).unwrap();
    assert_eq!(empty, ProjectState::new());
    assert_eq!(empty.hash(), ProjectState::new().hash());

    let mut store = Store::in_memory(clock());
    store.commit(ingest("only")).unwrap();
    let state = replay(&store.events().unwrap()).unwrap();
    assert_eq!(state.segments.len(), 1);
    assert_eq!(state.segments["only"].status, SegmentStatus::Pending);
}

#[test]
fn wall_clock_is_not_part_of_the_hash() {
    let payloads = random_history(&mut ChaCha8Rng::seed_from_u64(3), 30);
    let run = |start: u64| {
        let c = ManualClock::new(start);
        let mut store = Store::in_memory(Box::new(c));
        for p in &payloads {
            store.commit(p.clone()).unwrap();
        }
        store.state().hash()
    };
    assert_eq!(run(0), run(987_654_321));
}

#[test]
fn replay_is_deterministic_and_matches_live_state() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let payloads = random_history(&mut rng, 40);
        let mut store = Store::in_memory(clock());
        for p in payloads {
            store.commit(p).unwrap();
        }
        let events = store.events().unwrap();
        let a = replay(&events).unwrap();
        let b = replay(&events).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash(), store.state().hash());
    }
}

#[test]
fn snapshot_plus_suffix_equals_full_replay() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let payloads = random_history(&mut rng, 30);
        let mut store = Store::in_memory(clock());
        for p in payloads {
            store.commit(p).unwrap();
        }
        let events = store.events().unwrap();
        let full = replay(&events).unwrap();
        let k = (seed as usize * 7) % events.len();
        let prefix = replay(&events[..k]).unwrap();
        let path = write_snapshot(dir.path(), &prefix).unwrap();
        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(loaded.seq, k as u64);
        let resumed = replay_onto(loaded.state, &events).unwrap();
        assert_eq!(resumed.hash(), full.hash(), "seed {seed} k {k}");
    }
}

#[test]
fn snapshot_guards() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_snapshot(dir.path(), &ProjectState::new()).unwrap();
    assert_eq!(path.file_name().unwrap(), "snapshot-0.json");
    assert_eq!(load_snapshot(&path).unwrap().state, ProjectState::new());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_snapshot(&path), Err(StoreError::CorruptSnapshot(_))));

    let mut state = ProjectState::new();
    state.apply(1, &ingest("x")).unwrap();
    let path = write_snapshot(dir.path(), &state).unwrap();
    let tampered = std::fs::read_to_string(&path).unwrap().replace("the cat sat down", "the dog sat down");
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(load_snapshot(&path), Err(StoreError::CorruptSnapshot(_))));
}

#[test]
fn file_store_survives_reopen_and_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let hash = {
        let mut store = Store::open_dir(dir.path(), clock()).unwrap();
        for id in ["a", "b", "c"] {
            store.commit(ingest(id)).unwrap();
        }
        store.state().hash()
    };
    let log_path = dir.path().join(LOG_FILE);
    let good_len = std::fs::metadata(&log_path).unwrap().len();
    // Simulate a crash halfway through a record.
    let partial = frame(br#"{"seq":4,"at":0,"kind":"ThresholdChanged","payload":{"tau":0.5}}"#);
    let mut bytes = std::fs::read(&log_path).unwrap();
    bytes.extend_from_slice(&partial[..partial.len() - 10]);
    std::fs::write(&log_path, &bytes).unwrap();

    let mut store = Store::open_dir(dir.path(), clock()).unwrap();
    assert_eq!(store.state().hash(), hash);
    assert_eq!(std::fs::metadata(&log_path).unwrap().len(), good_len);
    assert_eq!(store.commit(ingest("d")).unwrap().seq, 4);
    drop(store);
    let reopened = Store::open_dir(dir.path(), clock()).unwrap();
    assert_eq!(reopened.state().segments.len(), 4);
}

#[test]
fn open_dir_resumes_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let payloads = random_history(&mut ChaCha8Rng::seed_from_u64(77), 25);
    let full_hash = {
        let mut store = Store::open_dir(dir.path(), clock()).unwrap();
        for (i, p) in payloads.into_iter().enumerate() {
            store.commit(p).unwrap();
            if i == 12 {
                write_snapshot(dir.path(), store.state()).unwrap();
            }
        }
        store.state().hash()
    };
    let reopened = Store::open_dir(dir.path(), clock()).unwrap();
    assert_eq!(reopened.state().hash(), full_hash);
}

#[test]
fn corruption_inside_log_is_reported() {
    let mut store = Store::in_memory(clock());
    for id in ["a", "b", "c"] {
        store.commit(ingest(id)).unwrap();
    }
    let mut lines: Vec<Vec<u8>> = store
        .events()
        .unwrap()
        .iter()
        .map(|e| frame(&serde_json::to_vec(e).unwrap()))
        .collect();

    let mut flipped = lines.concat();
    let at = lines[0].len() + 30;
    flipped[at] ^= 0x01;
    assert!(matches!(decode(&flipped), Err(StoreError::CorruptLog { seq: 2, .. })));

    lines.remove(1);
    assert!(matches!(decode(&lines.concat()), Err(StoreError::CorruptLog { seq: 2, .. })));

    let torn = [lines[0].clone(), lines[1][..5].to_vec()].concat();
    let d = decode(&torn).unwrap();
    assert!(d.torn_tail);
    assert_eq!(d.events.len(), 1);
}

#[test]
fn file_log_rejects_mid_log_damage() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut store = Store::open_dir(dir.path(), clock()).unwrap();
        for id in ["a", "b", "c"] {
            store.commit(ingest(id)).unwrap();
        }
    }
    let path = dir.path().join(LOG_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[20] ^= 0x20;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(FileLog::open(dir.path()), Err(StoreError::CorruptLog { seq: 1, .. })));
}

fn label(seg: &str, provider: &str, post_edit: Option<&str>, pseudo: bool, ts: u64) -> Annotation {
    Annotation {
        segment_id: seg.into(),
        annotator_id: if pseudo { PSEUDO_ANNOTATOR.into() } else { "ann1".into() },
        chosen_provider_id: provider.into(),
        error_categories: if post_edit.is_some() {
            BTreeSet::from([ErrorCategory::Fluency])
        } else {
            BTreeSet::from([ErrorCategory::NoEdit])
        },
        post_edit_text: post_edit.map(str::to_string),
        is_pseudo: pseudo,
        confidence: pseudo.then_some(0.97),
        timestamp: ts,
    }
}

fn human(a: Annotation) -> EventPayload {
    EventPayload::AnnotationSubmitted {
        annotation: a,
        ranker_ranking: vec!["mt-a".into(), "mt-b".into()],
        score_before: None,
        score_after: None,
        analysis: None,
        observed_ter: None,
    }
}

#[test]
fn status_follows_labels() {
    let mut store = Store::in_memory(clock());
    store.commit(ingest("a")).unwrap();
    store.commit(ingest("b")).unwrap();
    store
        .commit(EventPayload::PseudoLabeled {
            annotations: vec![label("a", "mt-b", None, true, 3)],
            pool_size: 2,
            tau: 0.9,
        })
        .unwrap();
    assert_eq!(store.state().segments["a"].status, SegmentStatus::AutoLabeled);
    // a human may still revise an auto label
    store.commit(human(label("a", "mt-a", Some("die Katze sass"), false, 4))).unwrap();
    assert_eq!(store.state().segments["a"].status, SegmentStatus::HumanLabeled);
    // but not label twice
    assert!(store.commit(human(label("a", "mt-a", None, false, 5))).is_err());
    // pseudo labels below the threshold are rejected
    let mut low = label("b", "mt-a", None, true, 5);
    low.confidence = Some(0.5);
    let err = store
        .commit(EventPayload::PseudoLabeled {
            annotations: vec![low],
            pool_size: 1,
            tau: 0.9,
        })
        .unwrap_err();
    assert!(matches!(err, StoreError::InvalidEvent(_)));
}

#[test]
fn corpus_export_prefers_human_labels() {
    let mut store = Store::in_memory(clock());
    for id in ["a", "b", "c"] {
        store.commit(ingest(id)).unwrap();
    }
    store
        .commit(EventPayload::PseudoLabeled {
            annotations: vec![label("a", "mt-b", None, true, 4), label("b", "mt-a", None, true, 4)],
            pool_size: 3,
            tau: 0.9,
        })
        .unwrap();
    store.commit(human(label("a", "mt-a", Some("die Katze sass"), false, 5))).unwrap();
    let recs = corpus_records(store.state());
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].provenance, Provenance::Human);
    assert_eq!(recs[0].best_translation, "die Katze");
    assert_eq!(recs[0].post_edit, "die Katze sass");
    assert_eq!(recs[1].provenance, Provenance::Pseudo);
    assert_eq!(recs[1].post_edit, recs[1].best_translation);

    let mut buf = Vec::new();
    assert_eq!(write_corpus_jsonl(store.state(), &mut buf).unwrap(), 2);
    let first: serde_json::Value = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
    for key in ["source", "best_translation", "post_edit", "source_lang", "target_lang", "provenance"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["provenance"], "human");
}

#[test]
fn event_wire_format() {
    let mut store = Store::in_memory(Box::new(Arc::new(ManualClock::new(42))));
    let e = store.commit(EventPayload::ThresholdChanged { tau: 0.8 }).unwrap();
    let v = serde_json::to_value(&e).unwrap();
    assert_eq!(v["seq"], 1);
    assert_eq!(v["at"], 42);
    assert_eq!(v["kind"], "ThresholdChanged");
    assert_eq!(v["payload"]["tau"], 0.8);
}
