mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let root = common::repo_root();
    let path = dir.join("svc.toml");
    let text = format!(
        "fixtures = [{:?}]\nscoring_config = {:?}\nstore_path = {:?}\nfixed_clock = \"{}\"\ndefault_locale = \"en\"\n",
        root.join("fixtures/providers.jsonl"),
        root.join("config/scoring.toml"),
        dir.join("store.jsonl"),
        common::FIXED_CLOCK
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn fraudlens(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fraudlens"));
    cmd.env_remove("FRAUDLENS_CONFIG").env_remove("FRAUDLENS_STORE").env_remove("FRAUDLENS_PORT").env("RUST_LOG", "error");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn verify_json_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = fraudlens(Some(&cfg), &["verify", "http://192.168.1.1/login", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["entity"]["kind"], "url");
    assert_eq!(v["features"]["lex"]["has_ip_literal"], true);
}

#[test]
fn verify_without_value_is_usage_error() {
    let o = fraudlens(None, &["verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(fraudlens(None, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(fraudlens(None, &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_entity_is_user_error() {
    let o = fraudlens(None, &["verify", "--kind", "phone", "12ab"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fraudlens(None, &["verify", "--kind", "fax", "12"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn human_output_names_the_label() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = fraudlens(Some(&cfg), &["verify", "http://secure-update.verify-acct.example/paypal"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("Malicious"), "{text}");
}

#[test]
fn audit_from_header_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let headers = dir.path().join("h.txt");
    std::fs::write(&headers, "X-Forwarded-For: 203.0.113.50\nUser-Agent: curl/8.5\n").unwrap();
    let hints = dir.path().join("hints.json");
    std::fs::write(&hints, r#"{"declared_timezone": "Africa/Brazzaville"}"#).unwrap();
    let o = fraudlens(Some(&cfg), &["audit", "--headers", headers.to_str().unwrap(), "--hints", hints.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["indicators"].as_array().unwrap().len(), 12);
    assert_eq!(v["tz_mismatch"], true);
    let missing = fraudlens(Some(&cfg), &["audit", "--headers", "/nonexistent/h.txt"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn report_then_stats_over_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = fraudlens(Some(&cfg), &["report", "--kind", "phone", "+242 06 666 0066", "--desc", "fake prize", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_out(&o)["entity_canonical"], "+242066660066");
    let dup = fraudlens(Some(&cfg), &["report", "--kind", "phone", "+242066660066", "--desc", "again"]);
    assert_eq!(dup.status.code(), Some(1));

    let headers = dir.path().join("h.txt");
    std::fs::write(&headers, "X-Forwarded-For: 203.0.113.50\n").unwrap();
    assert_eq!(fraudlens(Some(&cfg), &["audit", "--headers", headers.to_str().unwrap()]).status.code(), Some(0));
    std::fs::write(&headers, "X-Forwarded-For: 198.51.100.7\n").unwrap();
    assert_eq!(fraudlens(Some(&cfg), &["audit", "--headers", headers.to_str().unwrap()]).status.code(), Some(0));

    let o = fraudlens(Some(&cfg), &["stats", "--from", "2025-06-01", "--to", "2025-06-01", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json_out(&o);
    assert_eq!(s["total"], 2);
    assert_eq!(s["vpn_rate"], 0.5);
    assert_eq!(s["dns_leak_rate_among_vpn"], 1.0);
    let bad = fraudlens(Some(&cfg), &["stats", "--from", "2025-06-02", "--to", "2025-06-01"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn stats_without_store_is_user_error() {
    assert_eq!(fraudlens(None, &["stats", "--from", "2025-01-01", "--to", "2025-12-31"]).status.code(), Some(1));
}

#[test]
fn eval_matches_the_golden_metrics() {
    let root = common::repo_root();
    let labels = root.join("fixtures/eval/labels.jsonl");
    let scores = root.join("fixtures/eval/scores.jsonl");
    let o = fraudlens(None, &["eval", "--labels", labels.to_str().unwrap(), "--scores", scores.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got = json_out(&o);
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(root.join("fixtures/eval/golden_metrics.json")).unwrap()).unwrap();
    assert_eq!(got["overall"]["tp"], golden["overall"]["tp"]);
    assert_eq!(got["n"], 40);
    let text = fraudlens(None, &["eval", "--labels", labels.to_str().unwrap(), "--scores", scores.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("overall"));
    let missing = fraudlens(None, &["eval", "--labels", labels.to_str().unwrap(), "--scores", "/nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    let neither = fraudlens(None, &["eval", "--labels", labels.to_str().unwrap()]);
    assert_eq!(neither.status.code(), Some(1));
}

#[test]
fn eval_live_scores_with_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let labels = common::repo_root().join("fixtures/eval/labels.jsonl");
    let o = fraudlens(Some(&cfg), &["eval", "--labels", labels.to_str().unwrap(), "--live", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_out(&o)["n"], 40);
}

#[test]
fn bad_config_is_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "port = \"eighty\"\n").unwrap();
    assert_eq!(fraudlens(Some(&cfg), &["verify", "example.org"]).status.code(), Some(1));
}

#[test]
fn serve_bind_failure_is_internal() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port().to_string();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fraudlens"));
    let o = cmd.env_remove("FRAUDLENS_CONFIG").env("FRAUDLENS_PORT", &port).env("RUST_LOG", "error").arg("serve").output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[tokio::test]
async fn serve_answers_health_over_tcp() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_fraudlens"))
        .env_remove("FRAUDLENS_CONFIG")
        .env("FRAUDLENS_PORT", port.to_string())
        .env("RUST_LOG", "error")
        .arg("serve")
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}/api/health");
    let mut body = None;
    for _ in 0..100 {
        if let Ok(r) = reqwest::get(&url).await {
            body = Some(r.json::<Value>().await.unwrap());
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    child.kill().unwrap();
    let _ = child.wait();
    assert_eq!(body.expect("service answered")["payload"]["ok"], true);
}
