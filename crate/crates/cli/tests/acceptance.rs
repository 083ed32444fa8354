//! Acceptance run: one PASS/FAIL line per criterion, each checked against an
//! independent oracle at its stated tolerance. Built with `harness = false`
//! so the lines always reach the test log.
//!
//! A criterion marked non-gating is still run and reported; its failure is
//! printed but does not fail the target (the analysis lives in the README).

#[path = "../../api/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use mtloop_api::stats::admin_stats;
use mtloop_cli::compare::{compare_strategies, ComparisonReport};
use mtloop_cli::sim::{run_simulation, SimulationConfig};
use mtloop_core::features::{FeatureSchema, FeatureVector};
use mtloop_core::learner::{
    rank_best, ranker_gradient, ranker_loss, regressor_gradient, regressor_loss, update_ranker, update_regressor,
    Hyperparams, ModelState,
};
use mtloop_core::metrics::{correlations, ter, topk_accuracy};
use mtloop_core::scheduler::fraction_auto_labelable;
use mtloop_core::store::{
    decode, frame, load_snapshot, random_history, replay, replay_onto, write_snapshot, ManualClock, MemoryLog, Store,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------- TER

/// Memoized recursion over suffixes; shares nothing with the row-based DP.
fn brute_edit(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let keep = brute_edit(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = brute_edit(&a[1..], b, memo) + 1;
    let ins = brute_edit(a, &b[1..], memo) + 1;
    let d = keep.min(del).min(ins);
    memo.insert((a.len(), b.len()), d);
    d
}

fn ter_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E5);
    for case in 0..1000 {
        let alphabet = rng.random_range(1..=5u8);
        let hyp: Vec<u8> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..alphabet)).collect();
        let reference: Vec<u8> = (0..rng.random_range(1..=12)).map(|_| rng.random_range(0..alphabet)).collect();
        let want = brute_edit(&hyp, &reference, &mut HashMap::new()) as f64 / reference.len() as f64;
        let got = ter(&hyp, &reference).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("case {case}: ter {got} vs oracle {want} for {hyp:?} / {reference:?}"))?;
    }
    within(start.elapsed(), 5.0)?;
    Ok("1000 pairs exact".into())
}

// ---------------------------------------------------------------- correlations

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Rank = 1 + (#smaller) + (#equal - 1) / 2.
fn textbook_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn textbook_spearman(x: &[f64], y: &[f64]) -> f64 {
    textbook_pearson(&textbook_ranks(x), &textbook_ranks(y))
}

/// Tau-b over all pairs.
fn textbook_kendall(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1.0;
            } else if dy == 0.0 {
                ty += 1.0;
            } else if dx.signum() == dy.signum() {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

fn random_pair(rng: &mut ChaCha8Rng, case: usize) -> (Vec<f64>, Vec<f64>) {
    // Every other case draws from a small integer range to force ties.
    let draw = |rng: &mut ChaCha8Rng| {
        if case % 2 == 0 {
            rng.random_range(-100.0..100.0)
        } else {
            f64::from(rng.random_range(0..8))
        }
    };
    let x: Vec<f64> = (0..50).map(|_| draw(rng)).collect();
    let y: Vec<f64> = x.iter().map(|a| 0.5 * a + draw(rng)).collect();
    (x, y)
}

fn correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (x, y) = random_pair(&mut rng, case);
        let r = correlations(&x, &y).map_err(|e| e.to_string())?;
        for (name, got, want) in [
            ("pearson", r.pearson, textbook_pearson(&x, &y)),
            ("spearman", r.spearman, textbook_spearman(&x, &y)),
            ("kendall", r.kendall, textbook_kendall(&x, &y)),
        ] {
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-9, || format!("case {case} {name}: {got} vs {want}"))?;
        }
    }
    for case in 0..100 {
        let (x, y) = random_pair(&mut rng, case);
        let a = correlations(&x, &y).map_err(|e| e.to_string())?;
        // Strictly increasing maps of each axis.
        let fx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp()).collect();
        let fy: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let b = correlations(&fx, &fy).map_err(|e| e.to_string())?;
        ensure((a.spearman - b.spearman).abs() <= 1e-9, || format!("case {case}: spearman not invariant"))?;
        ensure((a.kendall - b.kendall).abs() <= 1e-9, || format!("case {case}: kendall not invariant"))?;
    }
    Ok(format!("max deviation {worst:.1e}; monotone invariance on 100 cases"))
}

// ---------------------------------------------------------------- top-k table

fn topk_table() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../api/tests/fixtures/table1.log");
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let store = Store::from_log(Box::new(MemoryLog::from_bytes(bytes)), Box::new(ManualClock::new(0))).map_err(|e| e.to_string())?;
    let state = store.state();
    ensure(state.segments.len() == 100, || format!("{} segments", state.segments.len()))?;
    let truth: Vec<&str> = state.annotations.iter().map(|r| r.annotation.chosen_provider_id.as_str()).collect();
    let llm: Vec<Vec<String>> = state.annotations.iter().map(|r| r.llm_ranking.clone()).collect();
    let ranker: Vec<Vec<String>> = state.annotations.iter().map(|r| r.ranker_ranking.clone()).collect();
    let acc = |r: &[Vec<String>], k| topk_accuracy(r, &truth, k).map_err(|e| e.to_string());
    let got = (acc(&llm, 1)?, acc(&llm, 3)?, acc(&ranker, 1)?, acc(&ranker, 3)?);
    ensure(got == (0.24, 0.57, 0.12, 0.25), || format!("topk_accuracy gave {got:?}"))?;
    let stats = admin_stats(state, &[]);
    let (l, r) = (stats.topk.llm.ok_or("no llm row")?, stats.topk.ranker.ok_or("no ranker row")?);
    let via_stats = (l.top1, l.top3, r.top1, r.top3);
    ensure(via_stats == got, || format!("admin stats gave {via_stats:?}"))?;
    Ok("LLM 0.24/0.57, ranker 0.12/0.25 via both routes".into())
}

// ---------------------------------------------------------------- learner

fn schema(dim: usize) -> Arc<FeatureSchema> {
    Arc::new(FeatureSchema::new(1, (0..dim).map(|i| format!("f{i}")).collect()))
}

fn learner_convergence() -> Outcome {
    let start = Instant::now();
    let dim = 4;
    let s = schema(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1EA2);
    let n = 300;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 30.0 + 40.0 * x[0] - 15.0 * x[1] + 10.0 * x[2] - 5.0 * x[3] + rng.random_range(-4.0..4.0))
        .collect();
    let design = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { xs[i][j] });
    let beta = design.clone().svd(true, true).solve(&DVector::from_vec(ys.clone()), 1e-12)?;
    let oracle_rmse = ((&design * &beta - DVector::from_vec(ys.clone())).norm_squared() / n as f64).sqrt();

    let fvs: Vec<FeatureVector> = xs.iter().map(|x| FeatureVector::new(Arc::clone(&s), x.clone())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut st = ModelState::new(&s, Hyperparams::new(0.05, 0.0));
    for _ in 0..50 {
        order.shuffle(&mut rng);
        for &i in &order {
            st = update_regressor(&st, &fvs[i], ys[i]).map_err(|e| e.to_string())?;
        }
    }
    let sq: f64 = fvs.iter().zip(&ys).map(|(f, y)| (st.raw_quality(f).unwrap() - y).powi(2)).sum();
    let online_rmse = (sq / n as f64).sqrt();
    ensure(online_rmse <= 1.05 * oracle_rmse, || format!("online RMSE {online_rmse:.3} vs batch {oracle_rmse:.3}"))?;

    // Separable ranking: the first feature decides the best hypothesis.
    let segment = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(2..=5);
        let pool: Vec<FeatureVector> =
            (0..k).map(|_| FeatureVector::new(Arc::clone(&s), (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
        let best = (0..k).max_by(|&a, &b| pool[a].values()[0].total_cmp(&pool[b].values()[0])).unwrap();
        (pool, best)
    };
    let mut ranker = ModelState::new(&s, Hyperparams::default());
    for _ in 0..300 {
        let (pool, best) = segment(&mut rng);
        ranker = update_ranker(&ranker, &pool, best).map_err(|e| e.to_string())?;
    }
    let hits = (0..500)
        .filter(|_| {
            let (pool, best) = segment(&mut rng);
            rank_best(&ranker, &pool).unwrap().order[0] == best
        })
        .count();
    let top1 = hits as f64 / 500.0;
    ensure(top1 >= 0.95, || format!("ranker top-1 {top1:.3} after 300 updates"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("RMSE {online_rmse:.3} vs batch {oracle_rmse:.3}; ranker top-1 {top1:.3}"))
}

fn gradient_check() -> Outcome {
    let dim = 5;
    let s = schema(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let mut worst: f64 = 0.0;
    for state_no in 0..20 {
        let mut st = ModelState::new(&s, Hyperparams::new(0.05, rng.random_range(0.0..0.1)));
        for j in 0..dim {
            st.weights.regressor.weights[j] = rng.random_range(-5.0..5.0);
            st.weights.ranker.weights[j] = rng.random_range(-2.0..2.0);
            st.weights.feature_scale[j] = rng.random_range(1.0..4.0);
        }
        st.weights.regressor.bias = rng.random_range(-10.0..10.0);
        let vec = |rng: &mut ChaCha8Rng| FeatureVector::new(Arc::clone(&s), (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect());

        let fv = vec(&mut rng);
        let y = rng.random_range(0.0..100.0);
        let (gw, gb) = regressor_gradient(&st, &fv, y).map_err(|e| e.to_string())?;
        for j in 0..=dim {
            let nudge = |d: f64| {
                let mut t = st.clone();
                if j == dim {
                    t.weights.regressor.bias += d;
                } else {
                    t.weights.regressor.weights[j] += d;
                }
                regressor_loss(&t, &fv, y).unwrap()
            };
            let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
            let g = if j == dim { gb } else { gw[j] };
            worst = worst.max(rel(g, fd));
            ensure(rel(g, fd) <= 1e-6, || format!("state {state_no} regressor w{j}: {g} vs {fd}"))?;
        }

        let n = rng.random_range(2..=6);
        let pool: Vec<FeatureVector> = (0..n).map(|_| vec(&mut rng)).collect();
        let chosen = rng.random_range(0..n);
        let g = ranker_gradient(&st, &pool, chosen).map_err(|e| e.to_string())?;
        for j in 0..dim {
            let nudge = |d: f64| {
                let mut t = st.clone();
                t.weights.ranker.weights[j] += d;
                ranker_loss(&t, &pool, chosen).unwrap()
            };
            let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
            worst = worst.max(rel(g[j], fd));
            ensure(rel(g[j], fd) <= 1e-6, || format!("state {state_no} ranker w{j}: {} vs {fd}", g[j]))?;
        }
    }
    Ok(format!("20 states, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- simulation

fn base_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        seed,
        ..SimulationConfig::default()
    }
}

fn mean_for(report: &ComparisonReport, strategy: &str) -> Result<(f64, usize), String> {
    let s = report.summary_for(strategy).ok_or_else(|| format!("no summary for {strategy}"))?;
    Ok((s.mean_annotations.unwrap_or(f64::INFINITY), s.reached))
}

fn cost_reduction() -> Outcome {
    let start = Instant::now();
    let strategies: Vec<String> = ["tripartite", "hybrid", "random"].map(String::from).to_vec();
    let seeds = [1, 2, 3, 4, 5];
    let report = compare_strategies(&base_config(1), &strategies, &seeds, 0.8).map_err(|e| e.to_string())?;
    let (random, random_reached) = mean_for(&report, "random")?;
    let mut parts = vec![format!("random {random:.1} ({random_reached}/5)")];
    let mut ok = true;
    for s in ["tripartite", "hybrid"] {
        let (m, reached) = mean_for(&report, s)?;
        let ratio = m / random;
        ok &= reached == seeds.len() && ratio <= 0.8;
        parts.push(format!("{s} {m:.1} ({reached}/5, {:.0}% of random)", 100.0 * ratio));
    }
    within(start.elapsed(), 60.0)?;
    let detail = parts.join(", ");
    ensure(ok, || format!("mean annotations to top-1 0.8: {detail}; needs <= 80%"))?;
    Ok(detail)
}

fn pseudo_label_precision() -> Outcome {
    let (mut labeled, mut agreeing) = (0, 0);
    let mut sweep_checked = 0;
    for seed in 1..=5 {
        let cfg = SimulationConfig {
            annotator_noise: 0.0,
            tau: 0.99,
            ..base_config(seed)
        };
        let run = run_simulation(&cfg).map_err(|e| e.to_string())?;
        let q = &run.report.pseudo_label_quality;
        labeled += q.labeled;
        agreeing += q.agreeing;

        let taus: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
        let fractions: Vec<f64> = taus.iter().map(|&t| fraction_auto_labelable(&run.pool_confidences, t)).collect();
        for w in fractions.windows(2) {
            ensure(w[1] <= w[0], || format!("seed {seed}: fraction_auto rises along tau: {fractions:?}"))?;
        }
        sweep_checked += 1;
    }
    ensure(labeled > 0, || "no pseudo labels at tau 0.99".into())?;
    let precision = agreeing as f64 / labeled as f64;
    ensure(precision >= 0.9, || format!("precision {precision:.3} ({agreeing}/{labeled})"))?;
    Ok(format!("precision {precision:.3} ({agreeing}/{labeled}); tau sweep nonincreasing on {sweep_checked} seeds"))
}

fn replay_determinism() -> Outcome {
    let cfg = SimulationConfig {
        segments: 120,
        budget: 40,
        auto_label_every: 10,
        tau: 0.6,
        ..base_config(9)
    };
    let run = run_simulation(&cfg).map_err(|e| e.to_string())?;
    let bytes: Vec<u8> = run
        .events
        .iter()
        .flat_map(|e| frame(&serde_json::to_vec(e).unwrap()))
        .collect();
    let decoded = decode(&bytes).map_err(|e| e.to_string())?;
    let replayed = replay(&decoded.events).map_err(|e| e.to_string())?;
    ensure(replayed.hash() == run.report.state_hash, || "simulation log replays to a different hash".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAB00 + seed);
        let mut store = Store::in_memory(Box::new(ManualClock::new(0)));
        for p in random_history(&mut rng, 40) {
            store.commit(p).map_err(|e| e.to_string())?;
        }
        let events = store.events().map_err(|e| e.to_string())?;
        let full = replay(&events).map_err(|e| e.to_string())?;
        let k = rng.random_range(0..events.len());
        let path = write_snapshot(dir.path(), &replay(&events[..k]).unwrap()).map_err(|e| e.to_string())?;
        let snap = load_snapshot(&path).map_err(|e| e.to_string())?;
        let resumed = replay_onto(snap.state, &events).map_err(|e| e.to_string())?;
        ensure(resumed.hash() == full.hash(), || format!("log {seed}: snapshot at {k} diverges"))?;
    }
    Ok(format!("{} simulation events; 50 snapshot+suffix logs", run.events.len()))
}

// ---------------------------------------------------------------- API contract

fn golden(name: &str) -> Result<String, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../api/tests/golden").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

async fn api_flow() -> Outcome {
    let f = common::fixture();
    let app = &f.app;
    let mut checked = 0;
    let mut expect = |r: &common::Reply, status: StatusCode, name: &str| -> Result<Value, String> {
        ensure(r.status == status, || format!("{name}: status {}", r.status))?;
        let body = r.json();
        let got = serde_json::to_string_pretty(&body).unwrap() + "\n";
        ensure(got == golden(name)?, || format!("{name}: body differs from golden"))?;
        checked += 1;
        Ok(body)
    };
    use common::{call, ingest_body};
    expect(&call(app, Method::GET, "/api/v1/health", None, None).await, StatusCode::OK, "health.json")?;
    expect(
        &call(app, Method::POST, "/api/v1/segments", Some(ingest_body(0)), None).await,
        StatusCode::CREATED,
        "ingest_s1.json",
    )?;
    expect(&call(app, Method::GET, "/api/v1/segments/next?annotator=alice", None, None).await, StatusCode::OK, "next_alice.json")?;
    let edit = json!({
        "segment_id": "s1",
        "annotator_id": "alice",
        "chosen_provider_id": "mt-a",
        "error_categories": ["Accuracy"],
        "post_edit_text": "the cat sat down",
    });
    let receipt = expect(&call(app, Method::POST, "/api/v1/annotations", Some(edit), None).await, StatusCode::OK, "submit_edit.json")?;
    ensure(receipt["improvement_pct"] == 100.0, || format!("edit improvement {}", receipt["improvement_pct"]))?;
    for i in 1..3 {
        call(app, Method::POST, "/api/v1/segments", Some(ingest_body(i)), None).await;
    }
    expect(&call(app, Method::GET, "/api/v1/segments/batch?annotator=bob&count=2", None, None).await, StatusCode::OK, "batch_bob.json")?;
    let no_edit = json!({
        "segment_id": "s2",
        "annotator_id": "bob",
        "chosen_provider_id": "mt-a",
        "error_categories": ["NoEdit"],
    });
    let receipt = expect(&call(app, Method::POST, "/api/v1/annotations", Some(no_edit), None).await, StatusCode::OK, "submit_no_edit.json")?;
    ensure(receipt["improvement_pct"] == 0.0, || format!("NoEdit improvement {}", receipt["improvement_pct"]))?;
    expect(&call(app, Method::GET, "/api/v1/admin/stats", None, None).await, StatusCode::OK, "stats.json")?;
    expect(
        &call(app, Method::PUT, "/api/v1/admin/threshold", Some(json!({"tau": 0.5})), None).await,
        StatusCode::OK,
        "threshold.json",
    )?;
    expect(
        &call(app, Method::PUT, "/api/v1/admin/weights", Some(json!({"quality": 0.5, "ter": 0.3, "llm": 0.2})), None).await,
        StatusCode::OK,
        "weights.json",
    )?;
    expect(&call(app, Method::POST, "/api/v1/admin/auto-label", None, None).await, StatusCode::OK, "auto_label.json")?;
    for (q, name) in [("", "segments_all.json"), ("?rated=true", "segments_rated.json"), ("?rated=false", "segments_unrated.json")] {
        expect(&call(app, Method::GET, &format!("/api/v1/admin/segments{q}"), None, None).await, StatusCode::OK, name)?;
    }
    expect(&call(app, Method::GET, "/api/v1/admin/annotators", None, None).await, StatusCode::OK, "annotators.json")?;
    let export = call(app, Method::GET, "/api/v1/export/corpus", None, None).await;
    ensure(export.status == StatusCode::OK, || format!("export: status {}", export.status))?;
    ensure(String::from_utf8_lossy(&export.bytes) == golden("corpus.jsonl")?, || "export differs from golden".into())?;
    Ok(format!("{} golden responses; improvement 100 for edit, 0 for NoEdit", checked + 1))
}

fn api_contract() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(api_flow())
}

// ---------------------------------------------------------------- runner

struct Criterion {
    name: &'static str,
    run: fn() -> Outcome,
    gating: bool,
}

fn main() {
    let criteria = [
        Criterion { name: "ter_oracle_equivalence", run: ter_oracle, gating: true },
        Criterion { name: "correlation_correctness", run: correlation_oracle, gating: true },
        Criterion { name: "topk_table_arithmetic", run: topk_table, gating: true },
        Criterion { name: "learner_convergence", run: learner_convergence, gating: true },
        Criterion { name: "gradient_check", run: gradient_check, gating: true },
        Criterion { name: "cost_reduction", run: cost_reduction, gating: false },
        Criterion { name: "pseudo_label_precision", run: pseudo_label_precision, gating: true },
        Criterion { name: "replay_determinism", run: replay_determinism, gating: true },
        Criterion { name: "api_contract", run: api_contract, gating: true },
    ];
    let mut gating_failures = 0;
    let mut passed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {:<26} {detail} [{secs:.2} s]", c.name);
            }
            Err(why) => {
                let note = if c.gating { "" } else { " (non-gating)" };
                println!("FAIL {:<26} {why} [{secs:.2} s]{note}", c.name);
                gating_failures += usize::from(c.gating);
            }
        }
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if gating_failures > 0 {
        std::process::exit(1);
    }
}
