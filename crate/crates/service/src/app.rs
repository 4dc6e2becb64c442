//! Shared service state, HTTP routes and response envelopes.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::{IpAddr, SocketAddr};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, FromRequestParts, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use fraudlens_core::assistant::{Assistant, ChatTurn, Recommendation, SessionStore};
use fraudlens_core::catalog::{CatalogError, Catalogs};
use fraudlens_core::engine::{Engine, VerifyError, VerifyOptions};
use fraudlens_core::entity::{EntityError, EntityKind, RawEntity};
use fraudlens_core::footprint::{resolve_client_ip, Auditor, ClientHints};
use fraudlens_core::providers::{load_fixtures, FixtureError, FixtureSet, Providers};
use fraudlens_core::reports::{ReportBook, ReportError, ReportPolicy, ReportSubmission};
use fraudlens_core::scoring::{self, ScoringConfig};
use fraudlens_core::store::{Hasher, RecordLog, StoreError, VisitorRecord};
use fraudlens_core::useragent::parse_user_agent;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{Any, CorsLayer};

use crate::config::ServiceConfig;
use crate::ratelimit::RateLimiter;
use crate::remote::HttpChatBackend;

pub const API_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("provider fixtures: {0}")]
    Fixtures(#[from] FixtureError),
    #[error("scoring config: {0}")]
    Scoring(#[from] scoring::ConfigError),
    #[error("message catalogs: {0}")]
    Catalog(#[from] CatalogError),
    #[error("interaction store: {0}")]
    Store(#[from] StoreError),
}

/// Wall clock, or a pinned instant for reproducible output.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => t,
        }
    }
}

pub struct AppState {
    pub engine: Engine,
    pub auditor: Auditor,
    pub assistant: Assistant,
    pub reports: Arc<ReportBook>,
    pub log: Arc<RecordLog>,
    pub hasher: Hasher,
    pub catalogs: Arc<Catalogs>,
    pub sessions: SessionStore,
    pub limiter: RateLimiter,
    pub clock: Clock,
    pub default_locale: String,
    pub trusted_hops: usize,
    started: Instant,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("engine", &self.engine).field("clock", &self.clock).finish_non_exhaustive()
    }
}

impl AppState {
    pub fn from_config(config: &ServiceConfig) -> Result<Self, BuildError> {
        let mut fixtures = FixtureSet::new();
        for path in &config.fixtures {
            fixtures.extend(load_fixtures(path)?)?;
        }
        let providers = Arc::new(if config.fixtures.is_empty() { Providers::live() } else { Providers::from_fixtures(fixtures) });
        let scoring = Arc::new(match &config.scoring_config {
            Some(path) => ScoringConfig::load(path)?,
            None => ScoringConfig::default(),
        });
        let catalogs = Arc::new(match &config.locales_dir {
            Some(dir) => Catalogs::with_dir(dir)?,
            None => Catalogs::bundled(),
        });
        let log = Arc::new(match &config.store_path {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(StoreError::from)?;
                }
                RecordLog::open(path)?
            }
            None => RecordLog::in_memory(),
        });
        let hasher = Hasher::new(config.salt.clone());
        let reports = Arc::new(ReportBook::new(log.clone(), hasher.clone(), ReportPolicy::default()));
        let engine = Engine::new(providers.clone(), scoring)
            .with_catalogs(catalogs.clone())
            .with_reports(reports.clone())
            .with_log(log.clone(), hasher.clone());
        let auditor = Auditor::new(providers, catalogs.clone()).with_trusted_hops(config.trusted_hops);
        let mut assistant = Assistant::new(catalogs.clone());
        if let Some(remote) = &config.assistant {
            assistant = assistant.with_remote(Arc::new(HttpChatBackend::from_config(remote))).with_deadline(remote.deadline_ms);
        }
        Ok(AppState {
            engine,
            auditor,
            assistant,
            reports,
            log,
            hasher,
            catalogs,
            sessions: SessionStore::new(),
            limiter: RateLimiter::new(config.rate_limit_per_minute),
            clock: config.fixed_clock.map_or(Clock::System, Clock::Fixed),
            default_locale: config.default_locale.clone(),
            trusted_hops: config.trusted_hops,
            started: Instant::now(),
        })
    }

    pub fn with_assistant(mut self, assistant: Assistant) -> Self {
        self.assistant = assistant;
        self
    }

    pub fn uptime_s(&self) -> u64 {
        self.started.elapsed().as_secs()
    }

    /// Locale from the body, else the first Accept-Language tag, else the
    /// configured default.
    fn locale(&self, requested: Option<&str>, headers: &HeaderMap) -> String {
        requested
            .map(str::to_string)
            .or_else(|| {
                headers
                    .get(header::ACCEPT_LANGUAGE)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.split([',', ';']).next())
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
            })
            .unwrap_or_else(|| self.default_locale.clone())
    }

    fn error(&self, locale: &str, status: StatusCode, code: &'static str, started: Instant) -> Response {
        let message = self.catalogs.text(locale, &format!("error.{code}"));
        let body = Envelope {
            status: ResponseStatus::Error,
            payload: ErrorPayload { code: code.to_string(), message },
            elapsed_ms: started.elapsed().as_millis() as u64,
            api_version: API_VERSION.to_string(),
        };
        (status, axum::Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub status: ResponseStatus,
    pub payload: T,
    pub elapsed_ms: u64,
    pub api_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    #[serde(default)]
    pub kind: Option<String>,
    pub value: String,
    #[serde(default)]
    pub locale: Option<String>,
    /// Assistant session that should remember this verdict.
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpreinteRequest {
    #[serde(default)]
    pub client_hints: Option<ClientHints>,
    #[serde(default)]
    pub locale: Option<String>,
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    #[serde(default)]
    pub kind: Option<String>,
    pub value: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub locale: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub text: String,
    pub session: String,
    #[serde(default)]
    pub locale: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatPayload {
    pub session: String,
    #[serde(flatten)]
    pub turn: ChatTurn,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HealthPayload {
    pub ok: bool,
    pub uptime: u64,
}

/// Socket peer address, when the server was started with connect info.
#[derive(Debug, Clone, Copy)]
pub struct ClientAddr(pub Option<IpAddr>);

impl<S: Send + Sync> FromRequestParts<S> for ClientAddr {
    type Rejection = Infallible;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        Ok(ClientAddr(parts.extensions.get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip())))
    }
}

pub fn header_map(headers: &HeaderMap) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (name, value) in headers {
        if let Ok(v) = value.to_str() {
            out.entry(name.as_str().to_string())
                .and_modify(|prev: &mut String| {
                    prev.push_str(", ");
                    prev.push_str(v);
                })
                .or_insert_with(|| v.to_string());
        }
    }
    out
}

fn ok<T: Serialize>(status: StatusCode, payload: T, started: Instant) -> Response {
    let body = Envelope {
        status: ResponseStatus::Ok,
        payload,
        elapsed_ms: started.elapsed().as_millis() as u64,
        api_version: API_VERSION.to_string(),
    };
    (status, axum::Json(body)).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Option<T> {
    serde_json::from_slice(body).ok()
}

fn parse_kind(kind: Option<&str>) -> Result<Option<EntityKind>, EntityError> {
    kind.filter(|k| !k.trim().is_empty()).map(EntityKind::from_str).transpose()
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers(Any);
    let limited = Router::new()
        .route("/api/verify", post(verify))
        .route("/api/empreinte", get(empreinte).post(empreinte))
        .route("/api/report", post(report))
        .route("/api/chat", post(chat))
        .route_layer(middleware::from_fn_with_state(state.clone(), rate_limit));
    Router::new()
        .route("/api/health", get(health))
        .merge(limited)
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

async fn rate_limit(State(st): State<Arc<AppState>>, ClientAddr(peer): ClientAddr, req: Request, next: Next) -> Response {
    let ip = resolve_client_ip(&header_map(req.headers()), peer, st.trusted_hops).ok();
    if st.limiter.check(ip) {
        next.run(req).await
    } else {
        let locale = st.locale(None, req.headers());
        let mut resp = st.error(&locale, StatusCode::TOO_MANY_REQUESTS, "RateLimited", Instant::now());
        resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        resp
    }
}

async fn health(State(st): State<Arc<AppState>>) -> Response {
    ok(StatusCode::OK, HealthPayload { ok: true, uptime: st.uptime_s() }, Instant::now())
}

async fn not_found(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    st.error(&st.locale(None, &headers), StatusCode::NOT_FOUND, "NotFound", Instant::now())
}

fn visitor(st: &AppState, headers: &BTreeMap<String, String>, ip: Option<IpAddr>, at: DateTime<Utc>) -> VisitorRecord {
    let ua = headers.get("user-agent").map(String::as_str).unwrap_or_default();
    let dev = parse_user_agent(ua);
    let mut rec = VisitorRecord::blank(at);
    rec.ip_hash = ip.map(|ip| st.hasher.hash(&ip.to_string()));
    rec.ipv4_present = ip.is_some_and(|ip| ip.is_ipv4());
    rec.ipv6_present = ip.is_some_and(|ip| ip.is_ipv6());
    rec.user_agent = ua.to_string();
    rec.device_type = dev.device_type;
    rec.device_vendor = dev.vendor;
    rec.browser = dev.browser;
    rec.browser_version = dev.browser_version;
    rec.os = dev.os;
    rec.os_version = dev.os_version;
    rec.touch_capable = dev.touch_capable;
    rec
}

async fn verify(State(st): State<Arc<AppState>>, ClientAddr(peer): ClientAddr, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let Some(req) = parse_body::<VerifyRequest>(&body) else {
        return st.error(&st.locale(None, &headers), StatusCode::BAD_REQUEST, "BadRequest", started);
    };
    let locale = st.locale(req.locale.as_deref(), &headers);
    let entity_error = |e: EntityError| st.error(&locale, StatusCode::UNPROCESSABLE_ENTITY, e.code(), started);
    let kind = match parse_kind(req.kind.as_deref()) {
        Ok(k) => k,
        Err(e) => return entity_error(e),
    };
    let now = st.clock.now();
    let raw = match RawEntity::at(req.value, now) {
        Ok(r) => r,
        Err(e) => return entity_error(e),
    };
    let hmap = header_map(&headers);
    let ip = resolve_client_ip(&hmap, peer, st.trusted_hops).ok();
    let opts = VerifyOptions {
        kind,
        locale: Some(locale.clone()),
        visitor: Some(visitor(&st, &hmap, ip, now)),
        session_id: req.session.clone(),
    };
    let verdict = match st.engine.verify_with(&raw, &opts).await {
        Ok(v) => v,
        Err(VerifyError::Entity(e)) => return entity_error(e),
        Err(err) => {
            tracing::error!(%err, "verification failed");
            return st.error(&locale, StatusCode::INTERNAL_SERVER_ERROR, "Internal", started);
        }
    };
    if let Some(session) = req.session.as_deref().filter(|s| !s.is_empty()) {
        st.sessions.get_or_create(session, &locale).lock().await.last_verdict = Some(verdict.clone());
    }
    ok(StatusCode::OK, verdict, started)
}

async fn empreinte(State(st): State<Arc<AppState>>, ClientAddr(peer): ClientAddr, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let req = if body.iter().all(u8::is_ascii_whitespace) {
        EmpreinteRequest::default()
    } else {
        match parse_body::<EmpreinteRequest>(&body) {
            Some(r) => r,
            None => return st.error(&st.locale(None, &headers), StatusCode::BAD_REQUEST, "BadRequest", started),
        }
    };
    let locale = st.locale(req.locale.as_deref(), &headers);
    let mut hmap = header_map(&headers);
    hmap.insert(header::ACCEPT_LANGUAGE.as_str().to_string(), locale.clone());
    let report = match st.auditor.audit_request(&hmap, req.client_hints.as_ref(), peer).await {
        Ok(r) => r,
        Err(e) => return st.error(&locale, StatusCode::BAD_REQUEST, e.code(), started),
    };
    let ua = hmap.get("user-agent").map(String::as_str).unwrap_or_default();
    let mut rec = report.visitor_record(&st.hasher, ua, st.clock.now());
    rec.session_id = req.session.clone();
    if let Err(err) = st.log.log_interaction(rec) {
        tracing::warn!(%err, "audit not logged");
    }
    if let Some(session) = req.session.as_deref().filter(|s| !s.is_empty()) {
        st.sessions.get_or_create(session, &locale).lock().await.last_audit = Some(report.clone());
    }
    ok(StatusCode::OK, report, started)
}

async fn report(State(st): State<Arc<AppState>>, ClientAddr(peer): ClientAddr, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let Some(req) = parse_body::<ReportRequest>(&body) else {
        return st.error(&st.locale(None, &headers), StatusCode::BAD_REQUEST, "BadRequest", started);
    };
    let locale = st.locale(req.locale.as_deref(), &headers);
    let kind = match parse_kind(req.kind.as_deref()) {
        Ok(k) => k,
        Err(e) => return st.error(&locale, StatusCode::UNPROCESSABLE_ENTITY, e.code(), started),
    };
    let reporter = resolve_client_ip(&header_map(&headers), peer, st.trusted_hops).map_or_else(|_| "unknown".to_string(), |ip| ip.to_string());
    let submission = ReportSubmission {
        kind,
        value: req.value,
        description: req.description,
        reporter_key: reporter,
        reporter_country: None,
        at: st.clock.now(),
    };
    match st.reports.submit(submission) {
        Ok(accepted) => ok(StatusCode::CREATED, accepted, started),
        Err(err) => {
            let status = match &err {
                ReportError::Entity(_) | ReportError::DescriptionTooLong => StatusCode::UNPROCESSABLE_ENTITY,
                ReportError::DuplicateWithinWindow => StatusCode::CONFLICT,
                ReportError::Store(e) => {
                    tracing::error!(%e, "report not stored");
                    StatusCode::SERVICE_UNAVAILABLE
                }
            };
            st.error(&locale, status, err.code(), started)
        }
    }
}

async fn chat(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let Some(req) = parse_body::<ChatRequest>(&body).filter(|r| !r.session.trim().is_empty()) else {
        return st.error(&st.locale(None, &headers), StatusCode::BAD_REQUEST, "BadRequest", started);
    };
    let locale = st.locale(req.locale.as_deref(), &headers);
    let session = st.sessions.get_or_create(&req.session, &locale);
    let mut ctx = session.lock().await;
    if req.locale.is_some() {
        ctx.locale = locale;
    }
    let turn = st.assistant.chat(&req.text, &ctx).await;
    let recommendations = st.assistant.recommend(&ctx);
    ok(StatusCode::OK, ChatPayload { session: req.session, turn, recommendations }, started)
}

/// Binds and serves until interrupted.
pub async fn serve(config: &ServiceConfig, state: Arc<AppState>) -> std::io::Result<()> {
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
