//! Entity kinds and canonical normalization.
//!
//! Every downstream lookup (fixtures, report aggregation, log hashing) keys on
//! [`NormalizedEntity::canonical`], so each normalizer here must be idempotent.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum accepted input length, in characters.
pub const MAX_INPUT_CHARS: usize = 2048;

const LEGAL_SUFFIXES: &str = include_str!("../data/legal_suffixes.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityError {
    #[error("input is empty")]
    Empty,
    #[error("input exceeds {MAX_INPUT_CHARS} characters")]
    TooLong,
    #[error("malformed url: {0}")]
    MalformedUrl(&'static str),
    #[error("malformed email: {0}")]
    MalformedEmail(&'static str),
    #[error("malformed phone number: {0}")]
    MalformedPhone(&'static str),
    #[error("malformed domain: {0}")]
    MalformedDomain(&'static str),
    #[error("business name is empty after normalization")]
    EmptyAfterNormalization,
    #[error("unknown entity kind `{0}`")]
    UnknownKind(String),
}

impl EntityError {
    /// Stable machine-readable code used by the service layer.
    pub fn code(&self) -> &'static str {
        match self {
            EntityError::Empty | EntityError::TooLong => "InvalidInput",
            EntityError::MalformedUrl(_)
            | EntityError::MalformedEmail(_)
            | EntityError::MalformedPhone(_)
            | EntityError::MalformedDomain(_)
            | EntityError::EmptyAfterNormalization => "MalformedEntity",
            EntityError::UnknownKind(_) => "UnknownKind",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Url,
    Domain,
    Email,
    Phone,
    Business,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Url,
        EntityKind::Domain,
        EntityKind::Email,
        EntityKind::Phone,
        EntityKind::Business,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Url => "url",
            EntityKind::Domain => "domain",
            EntityKind::Email => "email",
            EntityKind::Phone => "phone",
            EntityKind::Business => "business",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = EntityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "url" => Ok(EntityKind::Url),
            "domain" => Ok(EntityKind::Domain),
            "email" => Ok(EntityKind::Email),
            "phone" => Ok(EntityKind::Phone),
            "business" => Ok(EntityKind::Business),
            other => Err(EntityError::UnknownKind(other.to_string())),
        }
    }
}

/// User-submitted, untrusted input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntity {
    text: String,
    pub submitted_at: DateTime<Utc>,
}

impl RawEntity {
    pub fn new(text: impl Into<String>) -> Result<Self, EntityError> {
        Self::at(text, Utc::now())
    }

    pub fn at(text: impl Into<String>, submitted_at: DateTime<Utc>) -> Result<Self, EntityError> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EntityError::Empty);
        }
        if trimmed.chars().count() > MAX_INPUT_CHARS {
            return Err(EntityError::TooLong);
        }
        Ok(Self {
            text: trimmed.to_string(),
            submitted_at,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlParts {
    pub scheme: String,
    pub netloc: String,
    pub path: String,
    pub query: Option<String>,
}

impl UrlParts {
    /// Host portion of the netloc: userinfo and port removed, IPv6 brackets kept.
    pub fn host(&self) -> &str {
        let after_user = self.netloc.rsplit_once('@').map_or(self.netloc.as_str(), |(_, h)| h);
        if after_user.starts_with('[') {
            return after_user.find(']').map_or(after_user, |end| &after_user[..=end]);
        }
        after_user.split_once(':').map_or(after_user, |(h, _)| h)
    }

    pub fn assemble(&self) -> String {
        let mut out = format!("{}://{}{}", self.scheme, self.netloc, self.path);
        if let Some(q) = &self.query {
            out.push('?');
            out.push_str(q);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailParts {
    pub local: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedEntity {
    pub kind: EntityKind,
    pub canonical: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url_parts: Option<UrlParts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phone_e164: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub email_parts: Option<EmailParts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub business_tokens: Option<Vec<String>>,
}

impl NormalizedEntity {
    fn bare(kind: EntityKind, canonical: String) -> Self {
        Self {
            kind,
            canonical,
            url_parts: None,
            phone_e164: None,
            email_parts: None,
            business_tokens: None,
        }
    }

    /// The host-like key remote providers are queried with.
    pub fn lookup_host(&self) -> Option<&str> {
        match self.kind {
            EntityKind::Url => self.url_parts.as_ref().map(|p| p.host()),
            EntityKind::Domain => Some(&self.canonical),
            EntityKind::Email => self.email_parts.as_ref().map(|p| p.domain.as_str()),
            EntityKind::Phone | EntityKind::Business => None,
        }
    }
}

fn scheme_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z][A-Za-z0-9+.\-]*://").unwrap())
}

/// Guesses the kind of a single free-text input.
///
/// Precedence is Url > Email > Phone > Domain > Business; Business is the
/// fallback, so this never fails.
pub fn detect_kind(raw: &RawEntity) -> EntityKind {
    let text = raw.text();
    if scheme_re().is_match(text) {
        return EntityKind::Url;
    }
    if normalize_email(raw).is_ok() {
        return EntityKind::Email;
    }
    if looks_like_phone(text) && normalize_phone(raw, DEFAULT_COUNTRY).is_ok() {
        return EntityKind::Phone;
    }
    if normalize_domain(raw).is_ok() {
        return EntityKind::Domain;
    }
    EntityKind::Business
}

fn looks_like_phone(text: &str) -> bool {
    if text.parse::<Ipv4Addr>().is_ok() {
        return false;
    }
    let mut digits = 0;
    for (i, c) in text.chars().enumerate() {
        match c {
            '0'..='9' => digits += 1,
            '+' if i == 0 => {}
            ' ' | '-' | '(' | ')' | '.' => {}
            _ => return false,
        }
    }
    digits >= 7
}

/// Normalizes `raw` as the given kind.
pub fn normalize(raw: &RawEntity, kind: EntityKind) -> Result<NormalizedEntity, EntityError> {
    match kind {
        EntityKind::Url => parse_url(raw),
        EntityKind::Domain => normalize_domain(raw),
        EntityKind::Email => normalize_email(raw),
        EntityKind::Phone => normalize_phone(raw, DEFAULT_COUNTRY),
        EntityKind::Business => normalize_business_name(raw),
    }
}

/// Normalizes with an explicit kind when given, otherwise auto-detects.
pub fn normalize_as(raw: &RawEntity, kind: Option<EntityKind>) -> Result<NormalizedEntity, EntityError> {
    normalize(raw, kind.unwrap_or_else(|| detect_kind(raw)))
}

pub fn parse_url(raw: &RawEntity) -> Result<NormalizedEntity, EntityError> {
    let text = raw.text();
    let (scheme, rest) = text.split_once("://").ok_or(EntityError::MalformedUrl("missing scheme"))?;
    if !scheme_re().is_match(&text[..scheme.len() + 3]) {
        return Err(EntityError::MalformedUrl("invalid scheme"));
    }
    let scheme = scheme.to_ascii_lowercase();
    // Fragments never reach the server; drop them.
    let rest = rest.split_once('#').map_or(rest, |(r, _)| r);
    let authority_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let (authority, tail) = rest.split_at(authority_end);
    let (path, query) = match tail.split_once('?') {
        Some((p, q)) => (p.to_string(), Some(q.to_string())),
        None => (tail.to_string(), None),
    };

    let netloc = normalize_netloc(&scheme, authority)?;
    let parts = UrlParts {
        scheme,
        netloc,
        path,
        query,
    };
    if parts.host().is_empty() || parts.host() == "[]" {
        return Err(EntityError::MalformedUrl("empty host"));
    }
    if parts.host().chars().any(char::is_whitespace) {
        return Err(EntityError::MalformedUrl("whitespace in host"));
    }
    let mut entity = NormalizedEntity::bare(EntityKind::Url, parts.assemble());
    entity.url_parts = Some(parts);
    Ok(entity)
}

fn default_port(scheme: &str) -> Option<&'static str> {
    match scheme {
        "http" | "ws" => Some("80"),
        "https" | "wss" => Some("443"),
        "ftp" => Some("21"),
        _ => None,
    }
}

fn normalize_netloc(scheme: &str, authority: &str) -> Result<String, EntityError> {
    let (userinfo, hostport) = match authority.rsplit_once('@') {
        Some((u, h)) => (Some(u), h),
        None => (None, authority),
    };
    let hostport = hostport.to_lowercase();
    let (host, port) = if hostport.starts_with('[') {
        let end = hostport.find(']').ok_or(EntityError::MalformedUrl("unterminated ipv6 literal"))?;
        let (h, p) = hostport.split_at(end + 1);
        (h.to_string(), p.strip_prefix(':').map(str::to_string))
    } else {
        match hostport.split_once(':') {
            Some((h, p)) => (h.to_string(), Some(p.to_string())),
            None => (hostport.clone(), None),
        }
    };
    if let Some(p) = &port {
        if !p.is_empty() && !p.chars().all(|c| c.is_ascii_digit()) {
            return Err(EntityError::MalformedUrl("non-numeric port"));
        }
    }
    let port = port.filter(|p| !p.is_empty() && Some(p.as_str()) != default_port(scheme));

    let mut netloc = String::new();
    if let Some(u) = userinfo {
        netloc.push_str(u);
        netloc.push('@');
    }
    netloc.push_str(&host);
    if let Some(p) = port {
        netloc.push(':');
        netloc.push_str(&p);
    }
    Ok(netloc)
}

/// True when `host` is a dotted-quad IPv4 or a bracketed IPv6 literal.
pub fn is_ip_literal(host: &str) -> bool {
    if let Some(inner) = host.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
        return inner.parse::<Ipv6Addr>().is_ok();
    }
    host.parse::<Ipv4Addr>().is_ok()
}

pub fn normalize_email(raw: &RawEntity) -> Result<NormalizedEntity, EntityError> {
    let text = raw.text();
    if text.matches('@').count() != 1 {
        return Err(EntityError::MalformedEmail("expected exactly one `@`"));
    }
    let (local, domain) = text.split_once('@').expect("one @");
    if local.is_empty() || local.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(EntityError::MalformedEmail("invalid local part"));
    }
    let domain = canonical_domain(domain).map_err(|_| EntityError::MalformedEmail("invalid domain part"))?;
    let mut entity = NormalizedEntity::bare(EntityKind::Email, format!("{local}@{domain}"));
    entity.email_parts = Some(EmailParts {
        local: local.to_string(),
        domain,
    });
    Ok(entity)
}

/// Default calling code used when a national-format number is submitted.
pub const DEFAULT_COUNTRY: &str = "CG";

fn calling_code(country: &str) -> Option<&'static str> {
    // Small table covering the deployment region; digits are also accepted as-is.
    const TABLE: &[(&str, &str)] = &[
        ("CG", "242"),
        ("CD", "243"),
        ("CM", "237"),
        ("GA", "241"),
        ("CF", "236"),
        ("TD", "235"),
        ("CI", "225"),
        ("SN", "221"),
        ("ML", "223"),
        ("BF", "226"),
        ("BJ", "229"),
        ("TG", "228"),
        ("NG", "234"),
        ("GH", "233"),
        ("KE", "254"),
        ("ZA", "27"),
        ("MA", "212"),
        ("FR", "33"),
        ("BE", "32"),
        ("US", "1"),
        ("GB", "44"),
    ];
    let upper = country.trim().to_ascii_uppercase();
    TABLE.iter().find(|(iso, _)| *iso == upper).map(|(_, cc)| *cc)
}

/// Rewrites a phone number into E.164.
///
/// `default_country` is an ISO alpha-2 code from the built-in table or a bare
/// calling code; it is prefixed verbatim to national-format numbers (no trunk
/// prefix stripping, since several regional plans keep the leading zero).
pub fn normalize_phone(raw: &RawEntity, default_country: &str) -> Result<NormalizedEntity, EntityError> {
    let mut compact = String::with_capacity(raw.text().len());
    for c in raw.text().chars() {
        match c {
            ' ' | '-' | '(' | ')' | '.' | '\u{a0}' => {}
            _ => compact.push(c),
        }
    }
    let digits = if let Some(rest) = compact.strip_prefix('+') {
        rest.to_string()
    } else if let Some(rest) = compact.strip_prefix("00") {
        rest.to_string()
    } else {
        let cc = if default_country.chars().all(|c| c.is_ascii_digit()) && !default_country.is_empty() {
            default_country
        } else {
            calling_code(default_country).ok_or(EntityError::MalformedPhone("unknown default country"))?
        };
        format!("{cc}{compact}")
    };
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(EntityError::MalformedPhone("non-digit characters"));
    }
    if !(7..=15).contains(&digits.len()) {
        return Err(EntityError::MalformedPhone("digit count outside 7..=15"));
    }
    let e164 = format!("+{digits}");
    let mut entity = NormalizedEntity::bare(EntityKind::Phone, e164.clone());
    entity.phone_e164 = Some(e164);
    Ok(entity)
}

pub fn normalize_domain(raw: &RawEntity) -> Result<NormalizedEntity, EntityError> {
    let canonical = canonical_domain(raw.text())?;
    Ok(NormalizedEntity::bare(EntityKind::Domain, canonical))
}

/// Lower-cases, strips one trailing dot and validates LDH labels.
/// At least two labels are required.
pub fn canonical_domain(text: &str) -> Result<String, EntityError> {
    let lower = text.trim().to_ascii_lowercase();
    let lower = lower.strip_suffix('.').unwrap_or(&lower);
    if lower.is_empty() || lower.len() > 253 {
        return Err(EntityError::MalformedDomain("length out of range"));
    }
    let labels: Vec<&str> = lower.split('.').collect();
    if labels.len() < 2 {
        return Err(EntityError::MalformedDomain("needs at least two labels"));
    }
    for label in &labels {
        if label.is_empty() || label.len() > 63 {
            return Err(EntityError::MalformedDomain("label length out of range"));
        }
        if !label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-') {
            return Err(EntityError::MalformedDomain("illegal character"));
        }
        if label.starts_with('-') || label.ends_with('-') {
            return Err(EntityError::MalformedDomain("label starts or ends with hyphen"));
        }
    }
    if labels.last().is_some_and(|tld| tld.bytes().all(|b| b.is_ascii_digit())) {
        return Err(EntityError::MalformedDomain("numeric top-level label"));
    }
    Ok(lower.to_string())
}

fn legal_suffixes() -> &'static [String] {
    static LIST: OnceLock<Vec<String>> = OnceLock::new();
    LIST.get_or_init(|| {
        LEGAL_SUFFIXES
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect()
    })
}

/// Tokenizes a business name: periods and apostrophes are removed (so `S.A.`
/// collapses to `sa`), other punctuation splits tokens, legal-form suffixes
/// are dropped.
pub fn business_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '.' | '\'' | '’'))
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let suffixes = legal_suffixes();
    cleaned
        .split_whitespace()
        .filter(|t| !suffixes.iter().any(|s| s == t))
        .map(str::to_string)
        .collect()
}

pub fn normalize_business_name(raw: &RawEntity) -> Result<NormalizedEntity, EntityError> {
    let tokens = business_tokens(raw.text());
    if tokens.is_empty() {
        return Err(EntityError::EmptyAfterNormalization);
    }
    let mut entity = NormalizedEntity::bare(EntityKind::Business, tokens.join(" "));
    entity.business_tokens = Some(tokens);
    Ok(entity)
}
