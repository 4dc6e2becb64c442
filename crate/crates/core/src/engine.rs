//! Verification pipeline: normalize, fan out provider lookups under the
//! global budget, assemble features, score, classify and explain.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, NaiveDate, Utc};
use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalogs;
use crate::entity::{business_tokens, canonical_domain, normalize_as, EntityError, EntityKind, NormalizedEntity, RawEntity};
use crate::features::{
    assemble_features, extract_lexical, BusinessFeatures, Feature, FeatureVector, Fetched, HostFeatures, LocalSignals,
    MailFeatures, RemoteSlots, ReputationFeatures, Slot, SlotStatus, SslFeatures, WhoisFeatures,
};
use crate::providers::{Payload, ProviderKind, ProviderStatus, Providers};
use crate::reports::ReportBook;
use crate::scoring::{classify, risk, score, Contribution, Label, ScoringConfig, ScoringError};
use crate::store::{Hasher, RecordLog, VisitorRecord};

pub const EXPLAINED_FEATURES: usize = 3;
/// Only features at least this risky on their own are named in an
/// explanation; weaker contributions would read as false warnings.
pub const EXPLAIN_RISK_FLOOR: f64 = 0.5;
/// Similarities below this are reported as 0 (unrelated names).
pub const NAME_SIMILARITY_FLOOR: f64 = 0.5;
/// Phone fraud-report count at which the abuse index saturates.
pub const PHONE_REPORT_SATURATION: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl VerifyError {
    pub fn code(&self) -> &'static str {
        match self {
            VerifyError::Entity(e) => e.code(),
            VerifyError::Scoring(_) => "Internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub provider: ProviderKind,
    pub status: ProviderStatus,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub entity: NormalizedEntity,
    pub score: f64,
    pub display_score: u8,
    pub label: Label,
    pub threshold: f64,
    pub dominant_features: Vec<Contribution>,
    pub explanation_key: String,
    pub explanation: String,
    pub explained_features: Vec<Feature>,
    pub locale: String,
    pub locale_fell_back: bool,
    pub degraded: Vec<Slot>,
    pub availability: BTreeMap<Slot, SlotStatus>,
    pub providers: Vec<ProviderCall>,
    pub features: FeatureVector,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub kind: Option<EntityKind>,
    pub locale: Option<String>,
    /// Visitor attributes to log alongside the query.
    pub visitor: Option<VisitorRecord>,
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub key: String,
    pub text: String,
    pub features: Vec<Feature>,
    pub locale: String,
    pub fell_back: bool,
}

pub fn display_score(score: f64) -> u8 {
    (score.clamp(0.0, 1.0) * 100.0).round() as u8
}

/// Plain-language explanation naming the top dominant features, with a
/// partial-data sentence when any slot fell back.
pub fn explain(
    catalogs: &Catalogs,
    locale: &str,
    kind: EntityKind,
    score: f64,
    label: Label,
    dominant: &[Contribution],
    degraded: &[Slot],
) -> Explanation {
    let key = match label {
        Label::Malicious => "verdict.malicious",
        Label::Legitimate => "verdict.legitimate",
    };
    let kind_text = catalogs.text(locale, &format!("kind.{}", kind.as_str()));
    let display = display_score(score).to_string();
    let head = catalogs.render(locale, key, &[("score", &display), ("kind", &kind_text)]);
    let mut parts = vec![head.text];
    let features: Vec<Feature> = dominant.iter().take(EXPLAINED_FEATURES).map(|c| c.feature).collect();
    if features.is_empty() {
        parts.push(catalogs.text(locale, "explain.no_signals"));
    }
    for f in &features {
        parts.push(catalogs.text(locale, &format!("feature.{}", f.as_str())));
    }
    if !degraded.is_empty() {
        let slots: Vec<String> = degraded.iter().map(|s| catalogs.text(locale, &format!("slot.{}", s.as_str()))).collect();
        parts.push(catalogs.render(locale, "explain.partial_data", &[("slots", &slots.join(", "))]).text);
    }
    Explanation { key: key.to_string(), text: parts.join(" "), features, locale: head.locale, fell_back: head.fell_back }
}

/// Highest normalized Levenshtein similarity between `name` and `known`,
/// after both are reduced to business tokens.
pub fn name_similarity<'a>(name: &str, known: impl IntoIterator<Item = &'a str>) -> f64 {
    let target = business_tokens(name).join(" ");
    if target.is_empty() {
        return 0.0;
    }
    let best = known
        .into_iter()
        .map(|k| strsim::normalized_levenshtein(&target, &business_tokens(k).join(" ")))
        .fold(0.0, f64::max);
    if best < NAME_SIMILARITY_FLOOR {
        0.0
    } else {
        best
    }
}

fn bundled_fraud_names() -> Vec<String> {
    include_str!("../data/fraud_business_names.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

struct Budget {
    start: Instant,
    total_ms: u64,
    per_call_ms: u64,
}

impl Budget {
    fn deadline(&self) -> u64 {
        let spent = self.start.elapsed().as_millis() as u64;
        self.total_ms.saturating_sub(spent).min(self.per_call_ms)
    }
}

type Outcomes = HashMap<ProviderKind, Fetched<Payload>>;

pub struct Engine {
    providers: Arc<Providers>,
    config: Arc<ScoringConfig>,
    catalogs: Arc<Catalogs>,
    reports: Option<Arc<ReportBook>>,
    log: Option<Arc<RecordLog>>,
    hasher: Hasher,
    fraud_names: Vec<String>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("providers", &self.providers).field("config", &self.config).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(providers: Arc<Providers>, config: Arc<ScoringConfig>) -> Self {
        Engine {
            providers,
            config,
            catalogs: Arc::new(Catalogs::bundled()),
            reports: None,
            log: None,
            hasher: Hasher::new("fraudlens"),
            fraud_names: bundled_fraud_names(),
        }
    }

    pub fn with_catalogs(mut self, catalogs: Arc<Catalogs>) -> Self {
        self.catalogs = catalogs;
        self
    }

    pub fn with_reports(mut self, reports: Arc<ReportBook>) -> Self {
        self.reports = Some(reports);
        self
    }

    pub fn with_log(mut self, log: Arc<RecordLog>, hasher: Hasher) -> Self {
        self.log = Some(log);
        self.hasher = hasher;
        self
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn catalogs(&self) -> &Catalogs {
        &self.catalogs
    }

    pub async fn verify(&self, raw: &RawEntity, kind: Option<EntityKind>) -> Result<Verdict, VerifyError> {
        self.verify_with(raw, &VerifyOptions { kind, ..Default::default() }).await
    }

    pub async fn verify_with(&self, raw: &RawEntity, opts: &VerifyOptions) -> Result<Verdict, VerifyError> {
        let start = Instant::now();
        let entity = normalize_as(raw, opts.kind)?;
        let as_of = raw.submitted_at;
        let lex = extract_lexical(&entity);
        let budget = Budget { start, total_ms: self.config.global_budget_ms, per_call_ms: self.config.per_call_deadline_ms };

        let mut calls = Vec::new();
        let plan = plan_lookups(&entity);
        let mut outcomes = self.fan_out(plan, &budget, &mut calls).await;

        let mut website_checked = false;
        if entity.kind == EntityKind::Business {
            if let Some(Fetched::Fresh(Payload::BusinessRegistry(rec))) = outcomes.get(&ProviderKind::BusinessRegistry) {
                if let Some(site) = rec.website.as_deref().and_then(|w| canonical_domain(w).ok()) {
                    let phase2 = [ProviderKind::Whois, ProviderKind::SslCheck, ProviderKind::HostInfo]
                        .into_iter()
                        .map(|p| (p, site.clone()))
                        .collect();
                    outcomes.extend(self.fan_out(phase2, &budget, &mut calls).await);
                    website_checked = true;
                }
            }
        }

        let remote = remote_slots(&entity, &outcomes, as_of.date_naive(), website_checked);
        let local = LocalSignals {
            user_report_weight: self
                .reports
                .as_ref()
                .map_or(0.0, |r| r.aggregate_reputation(&entity.canonical, as_of).decayed_weight),
            name_similarity: if entity.kind == EntityKind::Business { self.similarity(&entity.canonical) } else { 0.0 },
        };
        let mut features = assemble_features(entity.kind, lex, remote, local);
        if features.status(Slot::Mail) == SlotStatus::Fallback {
            features.mail = Some(partial_mail(&outcomes));
        }
        if let (Some(b), Some(w)) = (features.business.as_mut(), features.whois.as_ref()) {
            b.web_signal = w.domain_age_days.map_or(0.0, |age| (1.0 - f64::from(age) / 365.0).clamp(0.0, 1.0));
        }

        let breakdown = score(&features, &self.config)?;
        let label = classify(breakdown.score, self.config.threshold);
        let degraded = features.fallback_slots();
        let locale = opts.locale.as_deref().unwrap_or(crate::catalog::DEFAULT_LOCALE);
        let warning_signs: Vec<Contribution> = breakdown
            .dominant
            .iter()
            .filter(|c| risk(c.feature, &features, &self.config) >= EXPLAIN_RISK_FLOOR)
            .cloned()
            .collect();
        let explanation = explain(&self.catalogs, locale, entity.kind, breakdown.score, label, &warning_signs, &degraded);

        let verdict = Verdict {
            score: breakdown.score,
            display_score: display_score(breakdown.score),
            label,
            threshold: self.config.threshold,
            dominant_features: breakdown.dominant,
            explanation_key: explanation.key,
            explanation: explanation.text,
            explained_features: explanation.features,
            locale: explanation.locale,
            locale_fell_back: explanation.fell_back,
            degraded,
            availability: features.availability.clone(),
            providers: calls,
            features,
            elapsed_ms: start.elapsed().as_millis() as u64,
            entity,
        };
        self.record(&verdict, opts, as_of);
        Ok(verdict)
    }

    fn similarity(&self, canonical: &str) -> f64 {
        let reported = self.reports.as_ref().map(|r| r.reported(EntityKind::Business)).unwrap_or_default();
        name_similarity(canonical, self.fraud_names.iter().chain(reported.iter()).map(String::as_str))
    }

    async fn fan_out(&self, plan: Vec<(ProviderKind, String)>, budget: &Budget, calls: &mut Vec<ProviderCall>) -> Outcomes {
        let futures = plan.into_iter().map(|(provider, key)| async move {
            let deadline = budget.deadline();
            if deadline == 0 {
                return (provider, ProviderStatus::TimedOut, None, 0);
            }
            match self.providers.call_with_deadline(provider, &key, deadline).await {
                Ok(o) => (provider, o.status, o.payload, o.elapsed_ms),
                Err(err) => {
                    tracing::warn!(%provider, %err, "provider not callable");
                    (provider, ProviderStatus::Failed, None, 0)
                }
            }
        });
        let mut out = Outcomes::new();
        for (provider, status, payload, elapsed_ms) in join_all(futures).await {
            calls.push(ProviderCall { provider, status, elapsed_ms });
            let fetched = match (status, payload) {
                (ProviderStatus::Ok, Some(p)) => Fetched::Fresh(p),
                (ProviderStatus::TimedOut, _) => Fetched::TimedOut,
                _ => Fetched::Failed,
            };
            out.insert(provider, fetched);
        }
        out
    }

    fn record(&self, verdict: &Verdict, opts: &VerifyOptions, at: DateTime<Utc>) {
        let Some(log) = &self.log else { return };
        let mut rec = opts.visitor.clone().unwrap_or_else(|| VisitorRecord::blank(at));
        rec.query_kind = Some(verdict.entity.kind);
        rec.query_canonical_hash = Some(self.hasher.hash(&verdict.entity.canonical));
        rec.verdict_score = Some(verdict.score);
        rec.session_id = opts.session_id.clone().or(rec.session_id);
        rec.recorded_at = at;
        if let Err(err) = log.log_interaction(rec) {
            tracing::warn!(%err, "interaction not logged");
        }
    }
}

/// Provider lookups for the first phase of `entity`'s pipeline.
pub fn plan_lookups(entity: &NormalizedEntity) -> Vec<(ProviderKind, String)> {
    use ProviderKind::*;
    let providers: &[ProviderKind] = match entity.kind {
        EntityKind::Url | EntityKind::Domain => &[Whois, SslCheck, HostInfo, Reputation],
        EntityKind::Email => &[Whois, HostInfo, Reputation, MxLookup, DisposableDomain],
        EntityKind::Phone => &[PhoneRegistry],
        EntityKind::Business => &[BusinessRegistry, Reputation],
    };
    providers
        .iter()
        .filter_map(|&p| Providers::lookup_key(p, entity).ok().map(|k| (p, k)))
        .collect()
}

fn fetched<T>(outcomes: &Outcomes, provider: ProviderKind, f: impl FnOnce(&Payload) -> Option<T>) -> Fetched<T> {
    match outcomes.get(&provider) {
        None => Fetched::Skipped,
        Some(Fetched::Fresh(p)) => f(p).map_or(Fetched::Failed, Fetched::Fresh),
        Some(Fetched::TimedOut) => Fetched::TimedOut,
        Some(_) => Fetched::Failed,
    }
}

fn days_between(from: NaiveDate, to: NaiveDate) -> u32 {
    (to - from).num_days().max(0) as u32
}

fn remote_slots(entity: &NormalizedEntity, outcomes: &Outcomes, today: NaiveDate, website_checked: bool) -> RemoteSlots {
    let mut slots = RemoteSlots::default();
    if entity.kind == EntityKind::Phone {
        slots.host = fetched(outcomes, ProviderKind::PhoneRegistry, |p| match p {
            Payload::PhoneRegistry(r) => Some(HostFeatures {
                asn: None,
                isp_name: r.carrier.clone(),
                country: r.country.as_ref().map(|c| c.to_ascii_uppercase()),
                asn_risk: 0.0,
            }),
            _ => None,
        });
        slots.rep = fetched(outcomes, ProviderKind::PhoneRegistry, |p| match p {
            Payload::PhoneRegistry(r) => Some(ReputationFeatures {
                dnsbl_hits: r.fraud_reports,
                abuse_index: (f64::from(r.fraud_reports) / PHONE_REPORT_SATURATION).min(1.0),
                user_report_weight: 0.0,
            }),
            _ => None,
        });
        return slots;
    }
    if entity.kind != EntityKind::Business || website_checked {
        slots.whois = fetched(outcomes, ProviderKind::Whois, |p| match p {
            Payload::Whois(r) => Some(WhoisFeatures { domain_age_days: Some(r.age_days(today)), registrar: r.registrar.clone() }),
            _ => None,
        });
        slots.ssl = fetched(outcomes, ProviderKind::SslCheck, |p| match p {
            Payload::SslCheck(r) => {
                Some(SslFeatures { cert_age_days: Some(days_between(r.not_before, today)), trusted_ca: Some(r.trusted_ca) })
            }
            _ => None,
        });
        slots.host = fetched(outcomes, ProviderKind::HostInfo, |p| match p {
            Payload::HostInfo(r) => Some(HostFeatures {
                asn: r.asn,
                isp_name: r.isp.clone(),
                country: r.country.as_ref().map(|c| c.to_ascii_uppercase()),
                asn_risk: r.asn_risk,
            }),
            _ => None,
        });
    }
    slots.rep = fetched(outcomes, ProviderKind::Reputation, |p| match p {
        Payload::Reputation(r) => {
            Some(ReputationFeatures { dnsbl_hits: r.dnsbl_hits, abuse_index: r.abuse_index, user_report_weight: 0.0 })
        }
        _ => None,
    });
    if entity.kind == EntityKind::Email {
        let mx = fetched(outcomes, ProviderKind::MxLookup, |p| match p {
            Payload::MxLookup(r) => Some(r.has_mx),
            _ => None,
        });
        let disposable = fetched(outcomes, ProviderKind::DisposableDomain, |p| match p {
            Payload::DisposableDomain(r) => Some(r.disposable),
            _ => None,
        });
        slots.mail = match (mx, disposable) {
            (Fetched::Fresh(m), Fetched::Fresh(d)) => Fetched::Fresh(MailFeatures { has_mx: Some(m), disposable: Some(d) }),
            (Fetched::TimedOut, _) | (_, Fetched::TimedOut) => Fetched::TimedOut,
            _ => Fetched::Failed,
        };
    }
    if entity.kind == EntityKind::Business {
        slots.business = fetched(outcomes, ProviderKind::BusinessRegistry, |p| match p {
            Payload::BusinessRegistry(r) => Some(BusinessFeatures {
                name_similarity: 0.0,
                registration_signal: if r.registered { 0.0 } else { 1.0 },
                web_signal: 0.0,
            }),
            _ => None,
        });
    }
    slots
}

/// Whatever half of the mail slot did arrive when the other did not.
fn partial_mail(outcomes: &Outcomes) -> MailFeatures {
    let mut mail = MailFeatures::default();
    if let Some(Fetched::Fresh(Payload::MxLookup(r))) = outcomes.get(&ProviderKind::MxLookup) {
        mail.has_mx = Some(r.has_mx);
    }
    if let Some(Fetched::Fresh(Payload::DisposableDomain(r))) = outcomes.get(&ProviderKind::DisposableDomain) {
        mail.disposable = Some(r.disposable);
    }
    mail
}
