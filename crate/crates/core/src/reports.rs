//! Community threat reports: validation, deduplication and decayed
//! aggregation into the reputation sub-vector.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::entity::{normalize_as, EntityError, EntityKind, RawEntity};
use crate::store::{Hasher, LogEntry, RecordLog, StoreError};

pub const MAX_DESCRIPTION_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error("this reporter already reported the entity within the dedup window")]
    DuplicateWithinWindow,
    #[error("description exceeds {MAX_DESCRIPTION_CHARS} characters")]
    DescriptionTooLong,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Entity(e) => e.code(),
            ReportError::DuplicateWithinWindow => "DuplicateWithinWindow",
            ReportError::DescriptionTooLong => "DescriptionTooLong",
            ReportError::Store(_) => "StoreUnavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatReport {
    pub id: Uuid,
    pub entity_kind: EntityKind,
    pub entity_canonical: String,
    pub description: String,
    pub reported_at: DateTime<Utc>,
    pub reporter_country: Option<String>,
    pub reporter_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAggregate {
    pub entity_canonical: String,
    pub total_reports: u64,
    pub distinct_reporters: u64,
    pub decayed_weight: f64,
    pub last_seen: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPolicy {
    pub half_life_days: f64,
    pub per_reporter_cap: usize,
    pub dedup_window_hours: i64,
}

impl Default for ReportPolicy {
    fn default() -> Self {
        ReportPolicy { half_life_days: 90.0, per_reporter_cap: 3, dedup_window_hours: 24 }
    }
}

/// An incoming report before normalization. `reporter_key` is the raw
/// source identity (typically the client IP); only its salted hash is kept.
#[derive(Debug, Clone)]
pub struct ReportSubmission {
    pub kind: Option<EntityKind>,
    pub value: String,
    pub description: String,
    pub reporter_key: String,
    pub reporter_country: Option<String>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub report_id: Uuid,
    pub entity_kind: EntityKind,
    pub entity_canonical: String,
    pub aggregate: ReportAggregate,
}

pub struct ReportBook {
    log: Arc<RecordLog>,
    hasher: Hasher,
    policy: ReportPolicy,
    index: Mutex<HashMap<String, Vec<ThreatReport>>>,
}

impl std::fmt::Debug for ReportBook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReportBook").field("policy", &self.policy).finish_non_exhaustive()
    }
}

impl ReportBook {
    /// Build the book over a log, indexing any reports it already holds.
    pub fn new(log: Arc<RecordLog>, hasher: Hasher, policy: ReportPolicy) -> Self {
        let mut index: HashMap<String, Vec<ThreatReport>> = HashMap::new();
        for r in log.reports() {
            index.entry(r.entity_canonical.clone()).or_default().push(r);
        }
        ReportBook { log, hasher, policy, index: Mutex::new(index) }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(RecordLog::in_memory()), Hasher::new("reports"), ReportPolicy::default())
    }

    pub fn policy(&self) -> &ReportPolicy {
        &self.policy
    }

    pub fn fingerprint(&self, reporter_key: &str) -> String {
        self.hasher.hash(reporter_key)
    }

    pub fn submit(&self, sub: ReportSubmission) -> Result<Accepted, ReportError> {
        if sub.description.chars().count() > MAX_DESCRIPTION_CHARS {
            return Err(ReportError::DescriptionTooLong);
        }
        let raw = RawEntity::at(sub.value, sub.at)?;
        let entity = normalize_as(&raw, sub.kind)?;
        let fingerprint = self.fingerprint(&sub.reporter_key);
        let window = Duration::hours(self.policy.dedup_window_hours);

        let mut index = self.index.lock().expect("report index lock");
        let existing = index.get(&entity.canonical).map(Vec::as_slice).unwrap_or_default();
        let duplicate = existing
            .iter()
            .any(|r| r.reporter_fingerprint == fingerprint && (sub.at - r.reported_at).abs() < window);
        if duplicate {
            return Err(ReportError::DuplicateWithinWindow);
        }
        let report = ThreatReport {
            id: Uuid::new_v4(),
            entity_kind: entity.kind,
            entity_canonical: entity.canonical.clone(),
            description: sub.description,
            reported_at: sub.at,
            reporter_country: sub.reporter_country.map(|c| c.to_ascii_uppercase()),
            reporter_fingerprint: fingerprint,
        };
        self.log.append(LogEntry::Report(report.clone()))?;
        let id = report.id;
        index.entry(entity.canonical.clone()).or_default().push(report);
        let aggregate = aggregate_reports(&entity.canonical, &index[&entity.canonical], sub.at, &self.policy);
        Ok(Accepted { report_id: id, entity_kind: entity.kind, entity_canonical: entity.canonical, aggregate })
    }

    pub fn aggregate_reputation(&self, entity_canonical: &str, as_of: DateTime<Utc>) -> ReportAggregate {
        let index = self.index.lock().expect("report index lock");
        let reports = index.get(entity_canonical).map(Vec::as_slice).unwrap_or_default();
        aggregate_reports(entity_canonical, reports, as_of, &self.policy)
    }

    /// Canonical forms of every reported entity of `kind`.
    pub fn reported(&self, kind: EntityKind) -> Vec<String> {
        let index = self.index.lock().expect("report index lock");
        let mut out: Vec<String> = index
            .iter()
            .filter(|(_, rs)| rs.iter().any(|r| r.entity_kind == kind))
            .map(|(k, _)| k.clone())
            .collect();
        out.sort();
        out
    }
}

/// Decayed weight of a report `age_days` old.
pub fn decay(age_days: f64, half_life_days: f64) -> f64 {
    0.5f64.powf(age_days.max(0.0) / half_life_days)
}

pub fn aggregate_reports(
    entity_canonical: &str,
    reports: &[ThreatReport],
    as_of: DateTime<Utc>,
    policy: &ReportPolicy,
) -> ReportAggregate {
    let mut by_reporter: BTreeMap<&str, Vec<DateTime<Utc>>> = BTreeMap::new();
    for r in reports {
        by_reporter.entry(r.reporter_fingerprint.as_str()).or_default().push(r.reported_at);
    }
    let mut weight = 0.0;
    for times in by_reporter.values_mut() {
        times.sort_unstable_by(|a, b| b.cmp(a));
        for t in times.iter().take(policy.per_reporter_cap) {
            let age_days = (as_of - *t).num_milliseconds() as f64 / 86_400_000.0;
            weight += decay(age_days, policy.half_life_days);
        }
    }
    ReportAggregate {
        entity_canonical: entity_canonical.to_string(),
        total_reports: reports.len() as u64,
        distinct_reporters: by_reporter.len() as u64,
        decayed_weight: weight,
        last_seen: reports.iter().map(|r| r.reported_at).max(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap()
    }

    fn sub(value: &str, who: &str, at: DateTime<Utc>) -> ReportSubmission {
        ReportSubmission {
            kind: Some(EntityKind::Phone),
            value: value.into(),
            description: "asked for my mobile money PIN".into(),
            reporter_key: who.into(),
            reporter_country: Some("cg".into()),
            at,
        }
    }

    fn report(who: &str, at: DateTime<Utc>) -> ThreatReport {
        ThreatReport {
            id: Uuid::nil(),
            entity_kind: EntityKind::Phone,
            entity_canonical: "+242061234567".into(),
            description: String::new(),
            reported_at: at,
            reporter_country: None,
            reporter_fingerprint: who.into(),
        }
    }

    #[test]
    fn submit_examples() {
        let book = ReportBook::in_memory();
        let a = book.submit(sub("+242061234567", "10.0.0.1", t0())).unwrap();
        assert_eq!((a.aggregate.total_reports, a.aggregate.distinct_reporters), (1, 1));
        assert_eq!(a.entity_canonical, "+242061234567");

        let dup = book.submit(sub("+242 06 123 4567", "10.0.0.1", t0() + Duration::hours(1)));
        assert!(matches!(dup, Err(ReportError::DuplicateWithinWindow)));

        let b = book.submit(sub("+242061234567", "10.0.0.2", t0() + Duration::hours(1))).unwrap();
        assert_eq!((b.aggregate.total_reports, b.aggregate.distinct_reporters), (2, 2));

        let later = book.submit(sub("+242061234567", "10.0.0.1", t0() + Duration::hours(24))).unwrap();
        assert_eq!(later.aggregate.total_reports, 3);
    }

    #[test]
    fn submit_errors() {
        let book = ReportBook::in_memory();
        let mut long = sub("+242061234567", "x", t0());
        long.description = "a".repeat(MAX_DESCRIPTION_CHARS + 1);
        assert!(matches!(book.submit(long), Err(ReportError::DescriptionTooLong)));
        let bad = book.submit(sub("+242 06x123", "x", t0())).unwrap_err();
        assert_eq!(bad.code(), "MalformedEntity");
        let mut ok = sub("+242061234567", "x", t0());
        ok.description = "é".repeat(MAX_DESCRIPTION_CHARS);
        assert!(book.submit(ok).is_ok());
    }

    #[test]
    fn aggregate_examples() {
        let p = ReportPolicy::default();
        let none = aggregate_reports("x", &[], t0(), &p);
        assert_eq!((none.total_reports, none.distinct_reporters, none.decayed_weight, none.last_seen), (0, 0, 0.0, None));

        let one = aggregate_reports("x", &[report("a", t0())], t0() + Duration::days(90), &p);
        assert_eq!(one.decayed_weight, 0.5);

        let three = [report("a", t0()), report("b", t0() - Duration::days(90)), report("c", t0() - Duration::days(180))];
        assert_eq!(aggregate_reports("x", &three, t0(), &p).decayed_weight, 1.75);
    }

    #[test]
    fn per_reporter_cap_keeps_most_recent() {
        let p = ReportPolicy::default();
        let reports: Vec<ThreatReport> = (0..5).map(|i| report("a", t0() - Duration::days(90 * i))).collect();
        let agg = aggregate_reports("x", &reports, t0(), &p);
        assert_eq!(agg.total_reports, 5);
        assert_eq!(agg.distinct_reporters, 1);
        assert_eq!(agg.decayed_weight, 1.75);
    }

    #[test]
    fn no_raw_reporter_identity_in_store() {
        let log = Arc::new(RecordLog::in_memory());
        let book = ReportBook::new(log.clone(), Hasher::new("salt"), ReportPolicy::default());
        book.submit(sub("+242061234567", "197.214.5.77", t0())).unwrap();
        let dump = log.export();
        assert!(!dump.contains("197.214.5.77"));
        assert!(dump.contains(&book.fingerprint("197.214.5.77")));
        let rebuilt = ReportBook::new(log, Hasher::new("salt"), ReportPolicy::default());
        assert_eq!(rebuilt.aggregate_reputation("+242061234567", t0()).total_reports, 1);
        assert_eq!(rebuilt.reported(EntityKind::Phone), vec!["+242061234567".to_string()]);
    }

    fn arb_reports() -> impl Strategy<Value = Vec<(u8, i64)>> {
        prop::collection::vec((0u8..4, -50i64..400), 0..20)
    }

    fn build(entries: &[(u8, i64)]) -> Vec<ThreatReport> {
        entries.iter().map(|(who, d)| report(&format!("r{who}"), t0() - Duration::days(*d))).collect()
    }

    proptest! {
        #[test]
        fn adding_a_report_never_lowers_weight(entries in arb_reports(), extra in (0u8..4, -50i64..400)) {
            let p = ReportPolicy::default();
            let base = build(&entries);
            let mut more = base.clone();
            more.extend(build(&[extra]));
            let w0 = aggregate_reports("x", &base, t0(), &p).decayed_weight;
            let w1 = aggregate_reports("x", &more, t0(), &p).decayed_weight;
            prop_assert!(w1 >= w0 - 1e-12);
        }

        #[test]
        fn weight_decays_with_time(entries in arb_reports(), dt in 0i64..1000) {
            let p = ReportPolicy::default();
            let rs = build(&entries);
            let now = aggregate_reports("x", &rs, t0(), &p);
            let later = aggregate_reports("x", &rs, t0() + Duration::days(dt), &p);
            prop_assert!(later.decayed_weight <= now.decayed_weight + 1e-12);
            prop_assert!(now.distinct_reporters <= now.total_reports);
            prop_assert!(now.decayed_weight <= now.total_reports as f64);
        }
    }
}
