//! External intelligence providers behind one deadline-bounded contract.
//!
//! Each [`ProviderKind`] has exactly one payload schema. Backends are
//! pluggable; the fixture backend replays committed JSON-lines files so the
//! whole pipeline runs offline and deterministically.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::entity::{EntityKind, NormalizedEntity};

/// Default per-call deadline.
pub const DEFAULT_DEADLINE_MS: u64 = 1500;

const DISPOSABLE_DOMAINS: &str = include_str!("../data/disposable_domains.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Whois,
    SslCheck,
    HostInfo,
    Reputation,
    GeoAsn,
    AnonymizationCheck,
    AbuseScore,
    MxLookup,
    DisposableDomain,
    PhoneRegistry,
    BusinessRegistry,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 11] = [
        ProviderKind::Whois,
        ProviderKind::SslCheck,
        ProviderKind::HostInfo,
        ProviderKind::Reputation,
        ProviderKind::GeoAsn,
        ProviderKind::AnonymizationCheck,
        ProviderKind::AbuseScore,
        ProviderKind::MxLookup,
        ProviderKind::DisposableDomain,
        ProviderKind::PhoneRegistry,
        ProviderKind::BusinessRegistry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Whois => "whois",
            ProviderKind::SslCheck => "ssl_check",
            ProviderKind::HostInfo => "host_info",
            ProviderKind::Reputation => "reputation",
            ProviderKind::GeoAsn => "geo_asn",
            ProviderKind::AnonymizationCheck => "anonymization_check",
            ProviderKind::AbuseScore => "abuse_score",
            ProviderKind::MxLookup => "mx_lookup",
            ProviderKind::DisposableDomain => "disposable_domain",
            ProviderKind::PhoneRegistry => "phone_registry",
            ProviderKind::BusinessRegistry => "business_registry",
        }
    }

    /// Entity kinds this provider can be queried for via [`Providers::lookup`].
    /// IP-keyed providers (geo, anonymization, abuse) are only reachable
    /// through [`Providers::call_with_deadline`].
    pub fn applies_to(self, kind: EntityKind) -> bool {
        use EntityKind::*;
        match self {
            ProviderKind::Whois | ProviderKind::HostInfo => matches!(kind, Url | Domain | Email),
            ProviderKind::SslCheck => matches!(kind, Url | Domain),
            ProviderKind::Reputation => matches!(kind, Url | Domain | Email | Business),
            ProviderKind::MxLookup | ProviderKind::DisposableDomain => kind == Email,
            ProviderKind::PhoneRegistry => kind == Phone,
            ProviderKind::BusinessRegistry => kind == Business,
            ProviderKind::GeoAsn | ProviderKind::AnonymizationCheck | ProviderKind::AbuseScore => false,
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProviderKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ProviderError::UnknownProvider(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionType {
    Mobile,
    Fibre,
    Dsl,
    Satellite,
    Datacenter,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhoisRecord {
    pub registered_on: NaiveDate,
    #[serde(default)]
    pub registrar: Option<String>,
}

impl WhoisRecord {
    pub fn age_days(&self, as_of: NaiveDate) -> u32 {
        (as_of - self.registered_on).num_days().max(0) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslRecord {
    pub not_before: NaiveDate,
    pub trusted_ca: bool,
    #[serde(default)]
    pub issuer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostRecord {
    #[serde(default)]
    pub asn: Option<u32>,
    #[serde(default)]
    pub isp: Option<String>,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub asn_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReputationRecord {
    pub dnsbl_hits: u32,
    pub abuse_index: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoRecord {
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub city: Option<String>,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub timezone: Option<String>,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub connection_type: ConnectionType,
    #[serde(default)]
    pub asn: Option<u32>,
    #[serde(default)]
    pub isp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizationRecord {
    #[serde(default)]
    pub vpn: bool,
    #[serde(default)]
    pub proxy: bool,
    #[serde(default)]
    pub tor: bool,
    #[serde(default)]
    pub hosting: bool,
    /// ASN of the resolver seen by a DNS probe, when one ran.
    #[serde(default)]
    pub resolver_asn: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbuseRecord {
    /// Normalized to [0,1].
    pub score: f64,
}

impl AbuseRecord {
    /// Converts a 0–100 confidence percentage.
    pub fn from_percent(percent: u8) -> Self {
        Self {
            score: f64::from(percent.min(100)) / 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MxRecord {
    pub has_mx: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisposableRecord {
    pub disposable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhoneRecord {
    #[serde(default)]
    pub carrier: Option<String>,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub fraud_reports: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusinessRecord {
    pub registered: bool,
    #[serde(default)]
    pub jurisdiction: Option<String>,
    /// Official website domain, when the registry lists one.
    #[serde(default)]
    pub website: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Whois(WhoisRecord),
    SslCheck(SslRecord),
    HostInfo(HostRecord),
    Reputation(ReputationRecord),
    GeoAsn(GeoRecord),
    AnonymizationCheck(AnonymizationRecord),
    AbuseScore(AbuseRecord),
    MxLookup(MxRecord),
    DisposableDomain(DisposableRecord),
    PhoneRegistry(PhoneRecord),
    BusinessRegistry(BusinessRecord),
}

fn unit_interval(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must be in [0,1], got {v}"))
    }
}

fn country_code(v: &Option<String>) -> Result<(), String> {
    match v {
        Some(c) if c.len() != 2 || !c.bytes().all(|b| b.is_ascii_uppercase()) => {
            Err(format!("country must be uppercase ISO alpha-2, got {c:?}"))
        }
        _ => Ok(()),
    }
}

impl Payload {
    pub fn provider(&self) -> ProviderKind {
        match self {
            Payload::Whois(_) => ProviderKind::Whois,
            Payload::SslCheck(_) => ProviderKind::SslCheck,
            Payload::HostInfo(_) => ProviderKind::HostInfo,
            Payload::Reputation(_) => ProviderKind::Reputation,
            Payload::GeoAsn(_) => ProviderKind::GeoAsn,
            Payload::AnonymizationCheck(_) => ProviderKind::AnonymizationCheck,
            Payload::AbuseScore(_) => ProviderKind::AbuseScore,
            Payload::MxLookup(_) => ProviderKind::MxLookup,
            Payload::DisposableDomain(_) => ProviderKind::DisposableDomain,
            Payload::PhoneRegistry(_) => ProviderKind::PhoneRegistry,
            Payload::BusinessRegistry(_) => ProviderKind::BusinessRegistry,
        }
    }

    /// Parses and validates a response record against the provider's schema.
    pub fn from_value(provider: ProviderKind, value: Value) -> Result<Self, String> {
        fn de<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        let payload = match provider {
            ProviderKind::Whois => Payload::Whois(de(value)?),
            ProviderKind::SslCheck => Payload::SslCheck(de(value)?),
            ProviderKind::HostInfo => Payload::HostInfo(de(value)?),
            ProviderKind::Reputation => Payload::Reputation(de(value)?),
            ProviderKind::GeoAsn => Payload::GeoAsn(de(value)?),
            ProviderKind::AnonymizationCheck => Payload::AnonymizationCheck(de(value)?),
            ProviderKind::AbuseScore => Payload::AbuseScore(de(value)?),
            ProviderKind::MxLookup => Payload::MxLookup(de(value)?),
            ProviderKind::DisposableDomain => Payload::DisposableDomain(de(value)?),
            ProviderKind::PhoneRegistry => Payload::PhoneRegistry(de(value)?),
            ProviderKind::BusinessRegistry => Payload::BusinessRegistry(de(value)?),
        };
        payload.validate()?;
        Ok(payload)
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Payload::Whois(r) => serde_json::to_value(r),
            Payload::SslCheck(r) => serde_json::to_value(r),
            Payload::HostInfo(r) => serde_json::to_value(r),
            Payload::Reputation(r) => serde_json::to_value(r),
            Payload::GeoAsn(r) => serde_json::to_value(r),
            Payload::AnonymizationCheck(r) => serde_json::to_value(r),
            Payload::AbuseScore(r) => serde_json::to_value(r),
            Payload::MxLookup(r) => serde_json::to_value(r),
            Payload::DisposableDomain(r) => serde_json::to_value(r),
            Payload::PhoneRegistry(r) => serde_json::to_value(r),
            Payload::BusinessRegistry(r) => serde_json::to_value(r),
        };
        v.expect("payload records always serialize")
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Payload::HostInfo(r) => {
                unit_interval("asn_risk", r.asn_risk)?;
                country_code(&r.country)
            }
            Payload::Reputation(r) => unit_interval("abuse_index", r.abuse_index),
            Payload::AbuseScore(r) => unit_interval("score", r.score),
            Payload::GeoAsn(r) => {
                country_code(&r.country)?;
                if r.lat.is_some_and(|v| !(-90.0..=90.0).contains(&v)) {
                    return Err("lat out of range".into());
                }
                if r.lon.is_some_and(|v| !(-180.0..=180.0).contains(&v)) {
                    return Err("lon out of range".into());
                }
                Ok(())
            }
            Payload::PhoneRegistry(r) => country_code(&r.country),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderStatus {
    Ok,
    TimedOut,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderOutcome {
    pub provider: ProviderKind,
    pub status: ProviderStatus,
    pub payload: Option<Payload>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider {provider} does not apply to {kind} entities")]
    InapplicableKind { provider: ProviderKind, kind: EntityKind },
    #[error("deadline must be positive")]
    InvalidDeadline,
}

/// Why a backend could not produce a payload.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("no record for key")]
    UnknownKey,
    #[error("upstream failure: {0}")]
    Upstream(String),
    #[error("backend not configured")]
    NotConfigured,
}

#[async_trait]
pub trait IntelBackend: Send + Sync {
    async fn fetch(&self, provider: ProviderKind, key: &str) -> Result<Payload, FetchError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureEntry {
    pub provider: ProviderKind,
    pub key: String,
    pub response: Option<Payload>,
    pub delay_ms: u64,
    pub fail: bool,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: duplicate fixture for ({provider}, {key:?})")]
    DuplicateKey { line: usize, provider: ProviderKind, key: String },
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    provider: String,
    key: String,
    #[serde(default)]
    delay_ms: i64,
    #[serde(default)]
    fail: bool,
    #[serde(default)]
    response: Option<Value>,
}

/// Read-only set of fixture entries keyed by (provider, key).
#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    entries: HashMap<(ProviderKind, String), FixtureEntry>,
}

impl FixtureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, provider: ProviderKind, key: &str) -> Option<&FixtureEntry> {
        self.entries.get(&(provider, key.to_string()))
    }

    pub fn insert(&mut self, entry: FixtureEntry) -> Result<(), FixtureError> {
        let k = (entry.provider, entry.key.clone());
        if self.entries.contains_key(&k) {
            return Err(FixtureError::DuplicateKey {
                line: 0,
                provider: entry.provider,
                key: entry.key,
            });
        }
        self.entries.insert(k, entry);
        Ok(())
    }

    /// Merges `other` into `self`; duplicates across sets are rejected too.
    pub fn extend(&mut self, other: FixtureSet) -> Result<(), FixtureError> {
        for (_, entry) in other.entries {
            self.insert(entry)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut set = FixtureSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let raw: FixtureLine = serde_json::from_str(trimmed).map_err(|e| {
                if e.is_data() {
                    FixtureError::SchemaViolation {
                        line: line_no,
                        message: e.to_string(),
                    }
                } else {
                    FixtureError::ParseError {
                        line: line_no,
                        message: e.to_string(),
                    }
                }
            })?;
            let schema = |message: String| FixtureError::SchemaViolation { line: line_no, message };
            let provider = ProviderKind::from_str(&raw.provider).map_err(|e| schema(e.to_string()))?;
            if raw.delay_ms < 0 {
                return Err(schema(format!("delay_ms must be >= 0, got {}", raw.delay_ms)));
            }
            let response = match (raw.response, raw.fail) {
                (Some(Value::Null), true) | (None, true) => None,
                (Some(v), _) => Some(Payload::from_value(provider, v).map_err(schema)?),
                (None, false) => return Err(schema("response required unless fail is true".into())),
            };
            set.insert(FixtureEntry {
                provider,
                key: raw.key,
                response,
                delay_ms: raw.delay_ms as u64,
                fail: raw.fail,
            })
            .map_err(|e| match e {
                FixtureError::DuplicateKey { provider, key, .. } => FixtureError::DuplicateKey {
                    line: line_no,
                    provider,
                    key,
                },
                other => other,
            })?;
        }
        Ok(set)
    }

    /// Serializes back to the JSON-lines fixture format, sorted by (provider, key).
    pub fn to_jsonl(&self) -> String {
        let mut entries: Vec<_> = self.entries.values().collect();
        entries.sort_by(|a, b| (a.provider, &a.key).cmp(&(b.provider, &b.key)));
        let mut out = String::new();
        for e in entries {
            let line = serde_json::json!({
                "provider": e.provider.as_str(),
                "key": e.key,
                "delay_ms": e.delay_ms,
                "fail": e.fail,
                "response": e.response.as_ref().map(Payload::to_value),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn load_fixtures(path: impl AsRef<Path>) -> Result<FixtureSet, FixtureError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    FixtureSet::parse(&text)
}

pub struct FixtureBackend {
    set: Arc<FixtureSet>,
}

impl FixtureBackend {
    pub fn new(set: FixtureSet) -> Self {
        Self { set: Arc::new(set) }
    }
}

#[async_trait]
impl IntelBackend for FixtureBackend {
    async fn fetch(&self, provider: ProviderKind, key: &str) -> Result<Payload, FetchError> {
        let entry = self.set.get(provider, key).ok_or(FetchError::UnknownKey)?;
        if entry.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(entry.delay_ms)).await;
        }
        match (&entry.response, entry.fail) {
            (Some(p), false) => Ok(p.clone()),
            _ => Err(FetchError::Upstream("fixture marked as failing".into())),
        }
    }
}

/// Disposable-mail domains from the bundled list.
pub struct BundledDisposableList {
    domains: HashSet<String>,
}

impl BundledDisposableList {
    pub fn new() -> Self {
        Self::from_text(DISPOSABLE_DOMAINS)
    }

    pub fn from_text(text: &str) -> Self {
        let domains = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_ascii_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { domains }
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.domains.contains(&domain.to_ascii_lowercase())
    }
}

impl Default for BundledDisposableList {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl IntelBackend for BundledDisposableList {
    async fn fetch(&self, provider: ProviderKind, key: &str) -> Result<Payload, FetchError> {
        match provider {
            ProviderKind::DisposableDomain => Ok(Payload::DisposableDomain(DisposableRecord {
                disposable: self.contains(key),
            })),
            _ => Err(FetchError::NotConfigured),
        }
    }
}

/// Placeholder for network-backed providers. Every call fails, which the
/// pipeline absorbs as a fallback.
#[derive(Debug, Default)]
pub struct LiveBackend;

#[async_trait]
impl IntelBackend for LiveBackend {
    async fn fetch(&self, _provider: ProviderKind, _key: &str) -> Result<Payload, FetchError> {
        Err(FetchError::NotConfigured)
    }
}

/// Tries `primary`, then `secondary` when the primary has no record.
pub struct Chain<A, B> {
    primary: A,
    secondary: B,
}

impl<A, B> Chain<A, B> {
    pub fn new(primary: A, secondary: B) -> Self {
        Self { primary, secondary }
    }
}

#[async_trait]
impl<A: IntelBackend, B: IntelBackend> IntelBackend for Chain<A, B> {
    async fn fetch(&self, provider: ProviderKind, key: &str) -> Result<Payload, FetchError> {
        match self.primary.fetch(provider, key).await {
            Err(FetchError::UnknownKey) => self.secondary.fetch(provider, key).await,
            other => other,
        }
    }
}

#[async_trait]
impl<T: IntelBackend + ?Sized> IntelBackend for Arc<T> {
    async fn fetch(&self, provider: ProviderKind, key: &str) -> Result<Payload, FetchError> {
        (**self).fetch(provider, key).await
    }
}

/// Routes each provider kind to a backend and enforces deadlines.
#[derive(Clone)]
pub struct Providers {
    routes: HashMap<ProviderKind, Arc<dyn IntelBackend>>,
    default_deadline_ms: u64,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut kinds: Vec<_> = self.routes.keys().collect();
        kinds.sort();
        f.debug_struct("Providers")
            .field("routes", &kinds)
            .field("default_deadline_ms", &self.default_deadline_ms)
            .finish()
    }
}

fn bundled_list() -> Arc<BundledDisposableList> {
    static LIST: OnceLock<Arc<BundledDisposableList>> = OnceLock::new();
    LIST.get_or_init(|| Arc::new(BundledDisposableList::new())).clone()
}

impl Providers {
    pub fn empty() -> Self {
        Self {
            routes: HashMap::new(),
            default_deadline_ms: DEFAULT_DEADLINE_MS,
        }
    }

    /// Every provider served from `set`; disposable-domain misses fall
    /// through to the bundled list.
    pub fn from_fixtures(set: FixtureSet) -> Self {
        let fixtures = Arc::new(FixtureBackend::new(set));
        let mut providers = Self::empty();
        for kind in ProviderKind::ALL {
            let backend: Arc<dyn IntelBackend> = if kind == ProviderKind::DisposableDomain {
                Arc::new(Chain::new(fixtures.clone(), bundled_list()))
            } else {
                fixtures.clone()
            };
            providers.routes.insert(kind, backend);
        }
        providers
    }

    /// Live stubs for every provider, with the bundled disposable list.
    pub fn live() -> Self {
        let mut providers = Self::empty();
        for kind in ProviderKind::ALL {
            let backend: Arc<dyn IntelBackend> = if kind == ProviderKind::DisposableDomain {
                bundled_list()
            } else {
                Arc::new(LiveBackend)
            };
            providers.routes.insert(kind, backend);
        }
        providers
    }

    pub fn with_route(mut self, kind: ProviderKind, backend: Arc<dyn IntelBackend>) -> Self {
        self.routes.insert(kind, backend);
        self
    }

    pub fn with_default_deadline(mut self, deadline_ms: u64) -> Self {
        self.default_deadline_ms = deadline_ms;
        self
    }

    pub fn default_deadline_ms(&self) -> u64 {
        self.default_deadline_ms
    }

    /// Calls the backend for `provider`, giving up after `deadline_ms`.
    ///
    /// A call that misses its deadline is dropped and reported as `TimedOut`;
    /// backend errors are reported as `Failed`. Only configuration problems
    /// surface as `Err`.
    pub async fn call_with_deadline(
        &self,
        provider: ProviderKind,
        key: &str,
        deadline_ms: u64,
    ) -> Result<ProviderOutcome, ProviderError> {
        if deadline_ms == 0 {
            return Err(ProviderError::InvalidDeadline);
        }
        let backend = self
            .routes
            .get(&provider)
            .ok_or_else(|| ProviderError::UnknownProvider(provider.to_string()))?;
        let start = Instant::now();
        let result = tokio::time::timeout(Duration::from_millis(deadline_ms), backend.fetch(provider, key)).await;
        let elapsed_ms = start.elapsed().as_millis() as u64;
        let (status, payload) = match result {
            Ok(Ok(payload)) if payload.provider() == provider => (ProviderStatus::Ok, Some(payload)),
            Ok(Ok(_)) => (ProviderStatus::Failed, None),
            Ok(Err(err)) => {
                tracing::debug!(%provider, key, %err, "provider call failed");
                (ProviderStatus::Failed, None)
            }
            Err(_) => (ProviderStatus::TimedOut, None),
        };
        Ok(ProviderOutcome {
            provider,
            status,
            payload,
            elapsed_ms,
        })
    }

    /// Key a provider is queried with for `entity`.
    pub fn lookup_key(provider: ProviderKind, entity: &NormalizedEntity) -> Result<String, ProviderError> {
        if !provider.applies_to(entity.kind) {
            return Err(ProviderError::InapplicableKind {
                provider,
                kind: entity.kind,
            });
        }
        let key = match provider {
            ProviderKind::Reputation if entity.kind == EntityKind::Email => entity.canonical.clone(),
            _ => entity.lookup_host().unwrap_or(&entity.canonical).to_string(),
        };
        Ok(key)
    }

    pub async fn lookup_with_deadline(
        &self,
        provider: ProviderKind,
        entity: &NormalizedEntity,
        deadline_ms: u64,
    ) -> Result<ProviderOutcome, ProviderError> {
        let key = Self::lookup_key(provider, entity)?;
        self.call_with_deadline(provider, &key, deadline_ms).await
    }

    pub async fn lookup(&self, provider: ProviderKind, entity: &NormalizedEntity) -> Result<ProviderOutcome, ProviderError> {
        self.lookup_with_deadline(provider, entity, self.default_deadline_ms).await
    }
}
