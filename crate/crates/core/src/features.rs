//! Type-conditioned feature vectors.
//!
//! Lexical features are computed locally; the remote sub-vectors arrive from
//! provider lookups and are merged by [`assemble_features`], which substitutes
//! zero-vectors for failed lookups and masks slots a kind never uses.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::entity::{is_ip_literal, EntityKind, NormalizedEntity};

/// Characters counted by `special_char_count`.
pub const SPECIAL_CHARS: [char; 10] = ['-', '_', '@', '%', '&', '=', '?', '~', '+', '#'];

/// Scored features. All but the last two are the rows of the applicability
/// table; `NoMx` and `Disposable` are mail-only extensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Length,
    Entropy,
    SpecialChars,
    IpLiteral,
    DomainAge,
    AsnIsp,
    Country,
    CertAge,
    TrustedCa,
    NameMatch,
    RegSignal,
    DnsblHits,
    AbuseIndex,
    UserReports,
    NoMx,
    Disposable,
}

impl Feature {
    pub const ALL: [Feature; 16] = [
        Feature::Length,
        Feature::Entropy,
        Feature::SpecialChars,
        Feature::IpLiteral,
        Feature::DomainAge,
        Feature::AsnIsp,
        Feature::Country,
        Feature::CertAge,
        Feature::TrustedCa,
        Feature::NameMatch,
        Feature::RegSignal,
        Feature::DnsblHits,
        Feature::AbuseIndex,
        Feature::UserReports,
        Feature::NoMx,
        Feature::Disposable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Length => "length",
            Feature::Entropy => "entropy",
            Feature::SpecialChars => "special_chars",
            Feature::IpLiteral => "ip_literal",
            Feature::DomainAge => "domain_age",
            Feature::AsnIsp => "asn_isp",
            Feature::Country => "country",
            Feature::CertAge => "cert_age",
            Feature::TrustedCa => "trusted_ca",
            Feature::NameMatch => "name_match",
            Feature::RegSignal => "reg_signal",
            Feature::DnsblHits => "dnsbl_hits",
            Feature::AbuseIndex => "abuse_index",
            Feature::UserReports => "user_reports",
            Feature::NoMx => "no_mx",
            Feature::Disposable => "disposable",
        }
    }

    pub fn slot(self) -> Slot {
        match self {
            Feature::Length | Feature::Entropy | Feature::SpecialChars | Feature::IpLiteral => Slot::Lex,
            Feature::DomainAge => Slot::Whois,
            Feature::AsnIsp | Feature::Country => Slot::Host,
            Feature::CertAge | Feature::TrustedCa => Slot::Ssl,
            Feature::NameMatch | Feature::RegSignal => Slot::Business,
            Feature::DnsblHits | Feature::AbuseIndex | Feature::UserReports => Slot::Rep,
            Feature::NoMx | Feature::Disposable => Slot::Mail,
        }
    }

    /// Whether the value comes from a remote lookup (and so can fall back).
    pub fn is_remote(self) -> bool {
        !matches!(
            self,
            Feature::Length
                | Feature::Entropy
                | Feature::SpecialChars
                | Feature::IpLiteral
                | Feature::UserReports
                | Feature::NameMatch
        )
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Lex,
    Host,
    Whois,
    Ssl,
    Rep,
    Business,
    Mail,
}

impl Slot {
    pub const ALL: [Slot; 7] = [Slot::Lex, Slot::Host, Slot::Whois, Slot::Ssl, Slot::Rep, Slot::Business, Slot::Mail];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Lex => "lex",
            Slot::Host => "host",
            Slot::Whois => "whois",
            Slot::Ssl => "ssl",
            Slot::Rep => "rep",
            Slot::Business => "business",
            Slot::Mail => "mail",
        }
    }

    pub fn features(self) -> impl Iterator<Item = Feature> {
        Feature::ALL.into_iter().filter(move |f| f.slot() == self)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    Inapplicable,
    Optional,
    Required,
}

/// Per-feature applicability for a kind (full mark → Required, partial →
/// Optional, dash → Inapplicable).
pub fn applicability_mask(kind: EntityKind) -> BTreeMap<Feature, Applicability> {
    use Applicability::{Inapplicable as N, Optional as O, Required as R};
    // Columns: url, domain, email, phone, business.
    let row = |f: Feature| -> [Applicability; 5] {
        match f {
            Feature::Length => [R, R, R, R, R],
            Feature::Entropy => [R, R, R, N, O],
            Feature::SpecialChars => [R, R, R, N, N],
            Feature::IpLiteral => [R, N, N, N, N],
            Feature::DomainAge => [R, R, R, N, O],
            Feature::AsnIsp => [R, R, O, O, O],
            Feature::Country => [R, R, O, O, O],
            Feature::CertAge => [R, R, N, N, O],
            Feature::TrustedCa => [R, R, N, N, O],
            Feature::NameMatch => [N, N, N, N, R],
            Feature::RegSignal => [N, N, N, N, R],
            Feature::DnsblHits => [R, R, R, O, N],
            Feature::AbuseIndex => [R, R, R, R, R],
            Feature::UserReports => [R, R, R, R, R],
            Feature::NoMx => [N, N, R, N, N],
            Feature::Disposable => [N, N, R, N, N],
        }
    };
    let col = match kind {
        EntityKind::Url => 0,
        EntityKind::Domain => 1,
        EntityKind::Email => 2,
        EntityKind::Phone => 3,
        EntityKind::Business => 4,
    };
    Feature::ALL.iter().map(|&f| (f, row(f)[col])).collect()
}

/// Strongest applicability of any feature in `slot`.
pub fn slot_applicability(kind: EntityKind, slot: Slot) -> Applicability {
    let mask = applicability_mask(kind);
    slot.features()
        .map(|f| mask[&f])
        .max()
        .unwrap_or(Applicability::Inapplicable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Fresh,
    Fallback,
    Inapplicable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LexicalFeatures {
    pub length: usize,
    pub entropy_bits: f64,
    pub special_char_count: usize,
    pub has_ip_literal: bool,
    /// Not scored; kept for explanations.
    pub subdomain_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostFeatures {
    pub asn: Option<u32>,
    pub isp_name: Option<String>,
    /// Uppercase ISO-3166 alpha-2.
    pub country: Option<String>,
    /// Provider-assigned reputation of the announcing network, in [0,1].
    #[serde(default)]
    pub asn_risk: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WhoisFeatures {
    pub domain_age_days: Option<u32>,
    pub registrar: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SslFeatures {
    pub cert_age_days: Option<u32>,
    pub trusted_ca: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReputationFeatures {
    pub dnsbl_hits: u32,
    pub abuse_index: f64,
    pub user_report_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BusinessFeatures {
    pub name_similarity: f64,
    /// 1 when no registry record exists, 0 when the registry confirms it.
    pub registration_signal: f64,
    /// Risk of the associated website, when the registry lists one.
    pub web_signal: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MailFeatures {
    pub has_mx: Option<bool>,
    pub disposable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: EntityKind,
    pub lex: Option<LexicalFeatures>,
    pub host: Option<HostFeatures>,
    pub whois: Option<WhoisFeatures>,
    pub ssl: Option<SslFeatures>,
    pub rep: ReputationFeatures,
    pub business: Option<BusinessFeatures>,
    pub mail: Option<MailFeatures>,
    pub availability: BTreeMap<Slot, SlotStatus>,
}

impl FeatureVector {
    pub fn status(&self, slot: Slot) -> SlotStatus {
        self.availability.get(&slot).copied().unwrap_or(SlotStatus::Inapplicable)
    }

    pub fn fallback_slots(&self) -> Vec<Slot> {
        self.availability
            .iter()
            .filter(|(_, s)| **s == SlotStatus::Fallback)
            .map(|(slot, _)| *slot)
            .collect()
    }
}

/// Result of one remote sub-query as seen by the assembler.
#[derive(Debug, Clone, PartialEq)]
pub enum Fetched<T> {
    Fresh(T),
    TimedOut,
    Failed,
    /// Not queried (e.g. an optional slot with no data source for this entity).
    Skipped,
}

impl<T> Fetched<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Fetched<U> {
        match self {
            Fetched::Fresh(v) => Fetched::Fresh(f(v)),
            Fetched::TimedOut => Fetched::TimedOut,
            Fetched::Failed => Fetched::Failed,
            Fetched::Skipped => Fetched::Skipped,
        }
    }
}

/// Remote sub-vectors of one entity.
#[derive(Debug, Clone)]
pub struct RemoteSlots {
    pub host: Fetched<HostFeatures>,
    pub whois: Fetched<WhoisFeatures>,
    pub ssl: Fetched<SslFeatures>,
    pub rep: Fetched<ReputationFeatures>,
    pub business: Fetched<BusinessFeatures>,
    pub mail: Fetched<MailFeatures>,
}

impl Default for RemoteSlots {
    fn default() -> Self {
        Self {
            host: Fetched::Skipped,
            whois: Fetched::Skipped,
            ssl: Fetched::Skipped,
            rep: Fetched::Skipped,
            business: Fetched::Skipped,
            mail: Fetched::Skipped,
        }
    }
}

/// Signals computed in-process; never subject to fallback.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalSignals {
    pub user_report_weight: f64,
    pub name_similarity: f64,
}

fn merge_slot<T: Default>(kind: EntityKind, slot: Slot, fetched: Fetched<T>) -> (Option<T>, SlotStatus) {
    match slot_applicability(kind, slot) {
        Applicability::Inapplicable => (None, SlotStatus::Inapplicable),
        applicability => match fetched {
            Fetched::Fresh(v) => (Some(v), SlotStatus::Fresh),
            Fetched::TimedOut | Fetched::Failed => (Some(T::default()), SlotStatus::Fallback),
            Fetched::Skipped if applicability == Applicability::Required => (Some(T::default()), SlotStatus::Fallback),
            Fetched::Skipped => (None, SlotStatus::Inapplicable),
        },
    }
}

/// Builds the feature vector for `kind`. Total: any mix of outcomes yields a
/// vector, with failed slots holding zero-vectors flagged `Fallback`.
pub fn assemble_features(
    kind: EntityKind,
    lex: LexicalFeatures,
    remote: RemoteSlots,
    local: LocalSignals,
) -> FeatureVector {
    let mut availability = BTreeMap::new();
    availability.insert(Slot::Lex, SlotStatus::Fresh);

    let (host, s) = merge_slot(kind, Slot::Host, remote.host);
    availability.insert(Slot::Host, s);
    let (whois, s) = merge_slot(kind, Slot::Whois, remote.whois);
    availability.insert(Slot::Whois, s);
    let (ssl, s) = merge_slot(kind, Slot::Ssl, remote.ssl);
    availability.insert(Slot::Ssl, s);
    let (mail, s) = merge_slot(kind, Slot::Mail, remote.mail);
    availability.insert(Slot::Mail, s);

    let (rep, s) = merge_slot(kind, Slot::Rep, remote.rep);
    availability.insert(Slot::Rep, s);
    let mut rep = rep.unwrap_or_default();
    rep.user_report_weight = local.user_report_weight;

    let (business, s) = merge_slot(kind, Slot::Business, remote.business);
    availability.insert(Slot::Business, s);
    let business = business.map(|mut b| {
        b.name_similarity = local.name_similarity;
        b
    });

    FeatureVector {
        kind,
        lex: Some(lex),
        host,
        whois,
        ssl,
        rep,
        business,
        mail,
        availability,
    }
}

/// Base-2 Shannon entropy of the character histogram of `text`.
/// Counts are summed in character order so the result is reproducible to the bit.
pub fn shannon_entropy<T: Float>(text: &str) -> T {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut n = 0usize;
    for c in text.chars() {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n <= 1 {
        return T::zero();
    }
    let total = T::from(n).expect("count fits");
    let h = counts.values().fold(T::zero(), |acc, &c| {
        let p = T::from(c).expect("count fits") / total;
        acc - p * p.log2()
    });
    // -0.0 for a single repeated symbol
    h.max(T::zero())
}

pub fn extract_lexical(entity: &NormalizedEntity) -> LexicalFeatures {
    let text = &entity.canonical;
    let host = entity.lookup_host();
    let has_ip_literal = entity.kind == EntityKind::Url && host.is_some_and(is_ip_literal);
    let subdomain_count = match host {
        Some(h) if !has_ip_literal => h.split('.').count().saturating_sub(2),
        _ => 0,
    };
    LexicalFeatures {
        length: text.chars().count(),
        entropy_bits: shannon_entropy(text),
        special_char_count: text.chars().filter(|c| SPECIAL_CHARS.contains(c)).count(),
        has_ip_literal,
        subdomain_count,
    }
}
