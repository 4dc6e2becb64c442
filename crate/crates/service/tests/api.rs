mod common;

use std::sync::Arc;
use std::time::Instant;

use axum::http::StatusCode;
use common::{app, app_with, golden_config, post, send};
use fraudlens_core::assistant::{Assistant, ScriptedBackend};
use fraudlens_core::catalog::Catalogs;
use fraudlens_core::eval::percentiles;
use fraudlens_service::app::{router, AppState, API_VERSION};
use serde_json::{json, Value};

fn features(payload: &Value) -> Vec<String> {
    payload["dominant_features"].as_array().unwrap().iter().map(|c| c["feature"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn ip_literal_url_is_dominant() {
    let r = post(&app(), "/api/verify", json!({"value": "http://192.168.1.1/login"})).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["status"], "ok");
    assert_eq!(r.body["api_version"], API_VERSION);
    let p = &r.body["payload"];
    assert!(features(p).contains(&"ip_literal".to_string()));
    assert_eq!(p["features"]["lex"]["has_ip_literal"], true);
    assert!(p["score"].as_f64().unwrap() >= 0.0 && p["display_score"].as_u64().unwrap() <= 100);
}

#[tokio::test]
async fn malformed_phone_report_is_422() {
    let r = post(&app(), "/api/report", json!({"kind": "phone", "value": "not a number", "description": "x"})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["status"], "error");
    assert_eq!(r.body["payload"]["code"], "MalformedEntity");
    assert!(!r.body["payload"]["message"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn health_reports_ok() {
    let r = send(&app(), "GET", "/api/health", &[], None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["payload"]["ok"], true);
    assert!(r.body["payload"]["uptime"].is_u64());
}

#[tokio::test]
async fn errors_use_the_request_locale() {
    let r = post(&app(), "/api/verify", json!({"kind": "phone", "value": "12ab", "locale": "fr"})).await;
    assert_eq!(r.body["payload"]["message"], Catalogs::bundled().text("fr", "error.MalformedEntity"));
}

#[tokio::test]
async fn no_endpoint_answers_401_or_403() {
    let app = app();
    let bodies = [
        None,
        Some(json!({})),
        Some(json!({"value": ""})),
        Some(json!({"value": "x", "api_key": "secret"})),
        Some(json!({"text": "hi", "session": ""})),
        Some(json!({"value": "http://example.org", "kind": "url"})),
    ];
    let paths = ["/api/verify", "/api/empreinte", "/api/report", "/api/chat", "/api/health", "/api/admin", "/"];
    for path in paths {
        for method in ["GET", "POST", "PUT", "DELETE"] {
            for body in &bodies {
                let r = send(&app, method, path, &[("authorization", "Bearer nope")], body.as_ref()).await;
                assert!(r.status != StatusCode::UNAUTHORIZED && r.status != StatusCode::FORBIDDEN, "{method} {path} -> {}", r.status);
            }
        }
    }
}

#[tokio::test]
async fn rate_limit_returns_429_per_address() {
    let mut config = golden_config();
    config.rate_limit_per_minute = 5;
    let (app, _) = app_with(&config);
    let body = json!({"value": "bank-congo.example"});
    for _ in 0..5 {
        let r = send(&app, "POST", "/api/verify", &[("x-forwarded-for", "198.51.100.9")], Some(&body)).await;
        assert_eq!(r.status, StatusCode::OK);
    }
    let r = send(&app, "POST", "/api/verify", &[("x-forwarded-for", "198.51.100.9")], Some(&body)).await;
    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(r.body["payload"]["code"], "RateLimited");
    assert!(r.headers.contains_key("retry-after"));
    let other = send(&app, "POST", "/api/verify", &[("x-forwarded-for", "198.51.100.10")], Some(&body)).await;
    assert_eq!(other.status, StatusCode::OK);
    let health = send(&app, "GET", "/api/health", &[("x-forwarded-for", "198.51.100.9")], None).await;
    assert_eq!(health.status, StatusCode::OK);
}

#[tokio::test]
async fn cors_is_permissive() {
    let r = send(&app(), "GET", "/api/health", &[("origin", "http://console.example")], None).await;
    assert_eq!(r.headers["access-control-allow-origin"], "*");
    let pre = send(
        &app(),
        "OPTIONS",
        "/api/verify",
        &[("origin", "http://console.example"), ("access-control-request-method", "POST")],
        None,
    )
    .await;
    assert!(pre.status.is_success());
    assert!(pre.headers["access-control-allow-methods"].to_str().unwrap().contains("POST"));
}

#[tokio::test]
async fn verify_and_audit_are_stateless() {
    let app = app();
    let mut a = post(&app, "/api/verify", json!({"value": "http://secure-update.verify-acct.example/paypal"})).await.body;
    let mut b = post(&app, "/api/verify", json!({"value": "http://secure-update.verify-acct.example/paypal"})).await.body;
    common::normalize(&mut a);
    common::normalize(&mut b);
    assert_eq!(a, b);
    let mut c = send(&app, "GET", "/api/empreinte", &[("x-forwarded-for", "203.0.113.50")], None).await.body;
    let mut d = send(&app, "GET", "/api/empreinte", &[("x-forwarded-for", "203.0.113.50")], None).await.body;
    common::normalize(&mut c);
    common::normalize(&mut d);
    assert_eq!(c, d);
}

#[tokio::test]
async fn interactions_reach_the_log() {
    let (app, state) = app_with(&golden_config());
    post(&app, "/api/verify", json!({"value": "bank-congo.example"})).await;
    send(&app, "GET", "/api/empreinte", &[("x-forwarded-for", "203.0.113.50")], None).await;
    post(&app, "/api/report", json!({"value": "+242061234567", "description": "spam"})).await;
    assert_eq!(state.log.visits().len(), 2);
    assert_eq!(state.log.reports().len(), 1);
    let visit = &state.log.visits()[1].1;
    assert!(visit.vpn_flag && visit.dns_leak_flag);
    assert!(visit.ip_hash.as_deref().is_some_and(|h| h.len() == 64 && !h.contains("203.0.113.50")));
}

#[tokio::test]
async fn store_file_persists_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = golden_config();
    config.store_path = Some(dir.path().join("nested/log.jsonl"));
    {
        let (app, _) = app_with(&config);
        let r = post(&app, "/api/report", json!({"value": "+242066660066", "description": "fake prize"})).await;
        assert_eq!(r.status, StatusCode::CREATED);
    }
    let (app, _) = app_with(&config);
    let r = post(&app, "/api/verify", json!({"value": "+242066660066"})).await;
    assert!(r.body["payload"]["features"]["rep"]["user_report_weight"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn chat_uses_remote_backend_when_configured() {
    let backend = Arc::new(ScriptedBackend::new(Some("Remote answer about phishing.".into()), 0));
    let state = AppState::from_config(&golden_config())
        .unwrap()
        .with_assistant(Assistant::new(Arc::new(Catalogs::bundled())).with_remote(backend.clone()));
    let app = router(Arc::new(state));
    let r = post(&app, "/api/chat", json!({"text": "How do I spot phishing?", "session": "a"})).await;
    assert_eq!(r.body["payload"]["backend"], "Remote");
    assert_eq!(r.body["payload"]["reply_text"], "Remote answer about phishing.");
    let off = post(&app, "/api/chat", json!({"text": "Recommend a good pizza place", "session": "a"})).await;
    assert_eq!(off.body["payload"]["in_scope"], false);
    assert_eq!(backend.calls(), 1);
}

#[tokio::test]
async fn chat_requires_a_session() {
    let r = post(&app(), "/api/chat", json!({"text": "What is phishing?", "session": "  "})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = post(&app(), "/api/chat", json!({"text": "What is phishing?"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empreinte_accepts_get_and_post() {
    let app = app();
    let get = send(&app, "GET", "/api/empreinte", &[("x-forwarded-for", "198.51.100.7")], None).await;
    assert_eq!(get.body["payload"]["indicators"].as_array().unwrap().len(), 12);
    let hints = json!({"client_hints": {"declared_timezone": "Europe/Paris"}});
    let p = send(&app, "POST", "/api/empreinte", &[("x-forwarded-for", "198.51.100.7")], Some(&hints)).await;
    assert_eq!(p.body["payload"]["tz_mismatch"], true);
    let bad = send(&app, "POST", "/api/empreinte", &[("x-forwarded-for", "198.51.100.7")], Some(&json!({"hints": 1}))).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let none = send(&app, "GET", "/api/empreinte", &[], None).await;
    assert_eq!(none.body["payload"]["code"], "MissingSourceAddress");
}

#[tokio::test]
async fn sequential_verify_p99_under_one_second() {
    let mut config = golden_config();
    config.rate_limit_per_minute = 10_000;
    let (app, _) = app_with(&config);
    let mut samples = Vec::with_capacity(200);
    let values = ["http://192.168.1.1/login", "bank-congo.example", "support@bank-congo.example", "+242061234567", "Pharmacie Centrale"];
    for i in 0..200 {
        let body = json!({"value": values[i % values.len()]});
        let t = Instant::now();
        let r = send(&app, "POST", "/api/verify", &[("x-forwarded-for", "198.51.100.77")], Some(&body)).await;
        samples.push(t.elapsed().as_secs_f64() * 1000.0);
        assert_eq!(r.status, StatusCode::OK);
    }
    let p = percentiles(&samples).unwrap();
    assert!(p.p99 <= 1000.0, "p99 {} ms", p.p99);
}
