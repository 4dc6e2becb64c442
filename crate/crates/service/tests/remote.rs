use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::routing::post;
use axum::{Json, Router};
use fraudlens_core::assistant::{Assistant, BackendKind, ChatBackend, SessionContext};
use fraudlens_core::catalog::Catalogs;
use fraudlens_service::remote::HttpChatBackend;
use serde_json::{json, Value};

async fn spawn(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/chat/completions")
}

#[tokio::test]
async fn completion_round_trip() {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(|Json(body): Json<Value>| async move {
            assert_eq!(body["messages"][0]["role"], "system");
            let user = body["messages"][1]["content"].as_str().unwrap().to_string();
            Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("echo: {user}")}}]}))
        }),
    );
    let backend = HttpChatBackend::new(spawn(app).await, "test-model", Some("k".into()));
    let reply = backend.complete("sys", "what is phishing", &SessionContext::new("en")).await.unwrap();
    assert_eq!(reply, "echo: what is phishing");
}

#[tokio::test]
async fn slow_or_broken_endpoint_falls_back() {
    let slow = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(5)).await;
            Json(json!({"choices": [{"message": {"content": "late"}}]}))
        }),
    );
    let catalogs = Arc::new(Catalogs::bundled());
    let assistant = Assistant::new(catalogs.clone())
        .with_remote(Arc::new(HttpChatBackend::new(spawn(slow).await, "m", None)))
        .with_deadline(300);
    let t = Instant::now();
    let turn = assistant.chat("How do I recognise phishing?", &SessionContext::new("en")).await;
    assert_eq!(turn.backend, BackendKind::RuleBased);
    assert!(t.elapsed() < Duration::from_millis(1500));

    let broken = Router::new().route("/v1/chat/completions", post(|| async { (axum::http::StatusCode::INTERNAL_SERVER_ERROR, "no") }));
    let assistant = Assistant::new(catalogs).with_remote(Arc::new(HttpChatBackend::new(spawn(broken).await, "m", None)));
    let turn = assistant.chat("How do I recognise phishing?", &SessionContext::new("en")).await;
    assert_eq!(turn.backend, BackendKind::RuleBased);
    assert!(!turn.reply_text.is_empty());
}
