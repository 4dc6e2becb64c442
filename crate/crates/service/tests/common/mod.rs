#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use fraudlens_service::app::{router, AppState};
use fraudlens_service::config::ServiceConfig;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const FIXED_CLOCK: &str = "2025-06-01T12:00:00Z";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("repo root")
}

/// Config over the committed fixtures with a pinned clock and an in-memory log.
pub fn golden_config() -> ServiceConfig {
    let root = repo_root();
    ServiceConfig {
        fixtures: vec![root.join("fixtures/providers.jsonl")],
        scoring_config: Some(root.join("config/scoring.toml")),
        fixed_clock: Some(FIXED_CLOCK.parse().unwrap()),
        default_locale: "en".into(),
        salt: "golden".into(),
        ..ServiceConfig::default()
    }
}

pub fn app_with(config: &ServiceConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::from_config(config).expect("state builds"));
    (router(state.clone()), state)
}

pub fn app() -> Router {
    app_with(&golden_config()).0
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
}

pub async fn send(app: &Router, method: &str, path: &str, headers: &[(&str, &str)], body: Option<&Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into())) };
    Reply { status, headers, body }
}

pub async fn post(app: &Router, path: &str, body: Value) -> Reply {
    send(app, "POST", path, &[("x-forwarded-for", "198.51.100.7")], Some(&body)).await
}

/// Fields that legitimately vary between runs.
pub const VOLATILE_KEYS: [&str; 3] = ["elapsed_ms", "uptime", "report_id"];

pub fn normalize(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if VOLATILE_KEYS.contains(&k.as_str()) {
                    *child = Value::Null;
                } else {
                    normalize(child);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Replays every golden file against a fresh service. Returns mismatches as
/// `(file, step, expected, actual)`. With `update`, rewrites the expected
/// responses instead.
pub async fn replay_goldens(update: bool) -> (usize, Vec<(String, usize, Value, Value)>) {
    let mut files: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut mismatches = Vec::new();
    let mut steps_run = 0;
    for file in &files {
        let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(file).unwrap()).unwrap();
        let app = app();
        let steps = doc["steps"].as_array_mut().expect("steps array");
        for (i, step) in steps.iter_mut().enumerate() {
            let req = &step["request"];
            let headers: Vec<(String, String)> = req["headers"]
                .as_object()
                .map(|m| m.iter().map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string())).collect())
                .unwrap_or_default();
            let header_refs: Vec<(&str, &str)> = headers.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            let body = req.get("body").filter(|b| !b.is_null());
            let reply = send(&app, req["method"].as_str().unwrap(), req["path"].as_str().unwrap(), &header_refs, body).await;
            let mut actual = serde_json::json!({"status": reply.status.as_u16(), "body": reply.body});
            normalize(&mut actual);
            steps_run += 1;
            if update {
                step["response"] = actual;
            } else if step["response"] != actual {
                mismatches.push((file.file_name().unwrap().to_string_lossy().into_owned(), i, step["response"].clone(), actual));
            }
        }
        if update {
            std::fs::write(file, serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
        }
    }
    (steps_run, mismatches)
}
