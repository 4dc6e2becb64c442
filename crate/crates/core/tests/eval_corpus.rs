//! Evaluation over the labelled corpus, checked against metrics produced by
//! an independent exact-arithmetic script (scripts/golden_eval.py).

use std::path::PathBuf;

use fraudlens_core::entity::EntityKind;
use fraudlens_core::eval::{run_eval, EvalError};
use serde_json::Value;

fn eval_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/eval")
}

/// Structural equality with a numeric tolerance on every float leaf.
fn assert_close(path: &str, expected: &Value, actual: &Value) {
    match (expected, actual) {
        (Value::Number(e), Value::Number(a)) => {
            let (e, a) = (e.as_f64().unwrap(), a.as_f64().unwrap());
            assert!((e - a).abs() <= 1e-12, "{path}: expected {e}, got {a}");
        }
        (Value::Object(e), Value::Object(a)) => {
            assert_eq!(e.keys().collect::<Vec<_>>(), a.keys().collect::<Vec<_>>(), "{path}: keys differ");
            for (k, v) in e {
                assert_close(&format!("{path}.{k}"), v, &a[k]);
            }
        }
        _ => assert_eq!(expected, actual, "{path}"),
    }
}

#[test]
fn corpus_matches_independent_metrics() {
    let dir = eval_dir();
    let report = run_eval(dir.join("labels.jsonl"), dir.join("scores.jsonl"), 0.25).unwrap();
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("golden_metrics.json")).unwrap()).unwrap();
    assert_close("report", &golden, &serde_json::to_value(&report).unwrap());
}

#[test]
fn every_kind_is_reported() {
    let dir = eval_dir();
    let report = run_eval(dir.join("labels.jsonl"), dir.join("scores.jsonl"), 0.25).unwrap();
    assert_eq!(report.n, 40);
    for kind in EntityKind::ALL {
        let m = report.per_kind[&kind].as_ref().expect("kind present in corpus");
        assert_eq!(m.tp + m.fp + m.tn + m.fn_, 8, "{kind:?}");
        assert!(m.kappa.is_none());
    }
    assert_eq!(report.overall.kappa, Some(0.8));
}

#[test]
fn threshold_is_inclusive_on_corpus() {
    // Two corpus scores sit exactly on 0.25; nudging the threshold above
    // them must move exactly those examples out of the positive side.
    let dir = eval_dir();
    let at = run_eval(dir.join("labels.jsonl"), dir.join("scores.jsonl"), 0.25).unwrap();
    let above = run_eval(dir.join("labels.jsonl"), dir.join("scores.jsonl"), 0.25 + 1e-12).unwrap();
    let positives = |m: &fraudlens_core::MetricsReport| m.tp + m.fp;
    assert_eq!(positives(&at.overall), positives(&above.overall) + 2);
}

#[test]
fn mismatched_files_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("labels.jsonl");
    let scores = tmp.path().join("scores.jsonl");
    std::fs::write(&labels, "{\"entity\":\"a.example\",\"kind\":\"domain\",\"label\":true}\n{\"entity\":\"b.example\",\"kind\":\"domain\",\"label\":false}\n").unwrap();
    std::fs::write(&scores, "{\"entity\":\"a.example\",\"score\":0.9}\n").unwrap();
    assert!(matches!(run_eval(&labels, &scores, 0.25), Err(EvalError::JoinMismatch(_))));

    std::fs::write(&scores, "{\"entity\":\"a.example\",\"score\":0.9}\nnot json\n").unwrap();
    assert!(matches!(run_eval(&labels, &scores, 0.25), Err(EvalError::Parse { line: 2, .. })));
}
