//! Asymmetric-cost thresholding and the linear risk score.
//!
//! The score is `sum(weight_f * risk_f)` over the kind's weight table, plus
//! `fallback_penalty * slot_weight` for each slot that fell back, clamped to
//! [0,1]. Every `risk_f` is a bounded transform of one raw feature, so the
//! contribution of a feature is exactly `weight_f * risk_f`.

use std::collections::BTreeMap;
use std::path::Path;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::EntityKind;
use crate::features::{applicability_mask, Applicability, Feature, FeatureVector, Slot, SlotStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("misclassification costs must be positive")]
    NonPositiveCost,
    #[error("no weight table for {0} entities")]
    MissingWeightTable(EntityKind),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scoring config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel<T> {
    pub false_positive: T,
    pub false_negative: T,
}

impl Default for CostModel<f64> {
    /// A missed scam costs three false alarms.
    fn default() -> Self {
        Self {
            false_positive: 1.0,
            false_negative: 3.0,
        }
    }
}

/// `c_fp / (c_fp + c_fn)`: the Bayes-risk-minimizing cut for calibrated scores.
pub fn optimal_threshold<T>(cost: &CostModel<T>) -> Result<T, ScoringError>
where
    T: Num + PartialOrd + Copy,
{
    if !(cost.false_positive > T::zero()) || !(cost.false_negative > T::zero()) {
        return Err(ScoringError::NonPositiveCost);
    }
    Ok(cost.false_positive / (cost.false_positive + cost.false_negative))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Malicious,
    Legitimate,
}

/// Inclusive at the boundary: a score equal to the threshold is malicious.
pub fn classify<T: PartialOrd>(score: T, threshold: T) -> Label {
    if score >= threshold {
        Label::Malicious
    } else {
        Label::Legitimate
    }
}

pub type WeightTable = BTreeMap<Feature, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub weights: BTreeMap<EntityKind, WeightTable>,
    pub threshold: f64,
    pub fallback_penalty: f64,
    pub global_budget_ms: u64,
    pub per_call_deadline_ms: u64,
    /// Host countries (ISO alpha-2) whose presence raises the `country` risk.
    #[serde(default)]
    pub flagged_countries: Vec<String>,
}

pub const DEFAULT_FALLBACK_PENALTY: f64 = 0.15;
pub const DEFAULT_GLOBAL_BUDGET_MS: u64 = 4500;
pub const REQUIRED_SHARE: f64 = 0.85;

/// Weight table derived from the applicability mask: Required features split
/// 85% of the mass equally, Optional ones 15%. A kind without Optional
/// features gives all mass to Required ones.
pub fn derived_weights(kind: EntityKind) -> WeightTable {
    let mask = applicability_mask(kind);
    let required: Vec<Feature> = mask.iter().filter(|(_, a)| **a == Applicability::Required).map(|(f, _)| *f).collect();
    let optional: Vec<Feature> = mask.iter().filter(|(_, a)| **a == Applicability::Optional).map(|(f, _)| *f).collect();
    let required_share = if optional.is_empty() { 1.0 } else { REQUIRED_SHARE };
    let mut table = WeightTable::new();
    for f in &required {
        table.insert(*f, required_share / required.len() as f64);
    }
    for f in &optional {
        table.insert(*f, (1.0 - required_share) / optional.len() as f64);
    }
    table
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: EntityKind::ALL.into_iter().map(|k| (k, derived_weights(k))).collect(),
            threshold: optimal_threshold(&CostModel::default()).expect("default costs are positive"),
            fallback_penalty: DEFAULT_FALLBACK_PENALTY,
            global_budget_ms: DEFAULT_GLOBAL_BUDGET_MS,
            per_call_deadline_ms: crate::providers::DEFAULT_DEADLINE_MS,
            flagged_countries: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoringFile {
    threshold: Option<f64>,
    cost: Option<CostModel<f64>>,
    fallback_penalty: Option<f64>,
    global_budget_ms: Option<u64>,
    per_call_deadline_ms: Option<u64>,
    #[serde(default)]
    flagged_countries: Vec<String>,
    #[serde(default)]
    weights: BTreeMap<EntityKind, WeightTable>,
}

impl ScoringConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ScoringFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let defaults = ScoringConfig::default();
        let threshold = match (file.threshold, file.cost) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("give either `threshold` or `cost`, not both".into()))
            }
            (Some(t), None) => t,
            (None, Some(cost)) => optimal_threshold(&cost).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            (None, None) => defaults.threshold,
        };
        let mut weights = defaults.weights;
        weights.extend(file.weights);
        let config = ScoringConfig {
            weights,
            threshold,
            fallback_penalty: file.fallback_penalty.unwrap_or(defaults.fallback_penalty),
            global_budget_ms: file.global_budget_ms.unwrap_or(defaults.global_budget_ms),
            per_call_deadline_ms: file.per_call_deadline_ms.unwrap_or(defaults.per_call_deadline_ms),
            flagged_countries: file.flagged_countries,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return invalid(format!("threshold must be in (0,1), got {}", self.threshold));
        }
        if !(self.fallback_penalty >= 0.0) {
            return invalid("fallback_penalty must be >= 0".into());
        }
        if self.per_call_deadline_ms == 0 || self.global_budget_ms == 0 {
            return invalid("deadlines must be positive".into());
        }
        for (kind, table) in &self.weights {
            let mask = applicability_mask(*kind);
            let mut sum = 0.0;
            for (feature, w) in table {
                if !(*w >= 0.0) {
                    return invalid(format!("{kind}.{feature}: negative weight"));
                }
                if *w > 0.0 && mask[feature] == Applicability::Inapplicable {
                    return invalid(format!("{kind}.{feature}: feature does not apply to {kind}"));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return invalid(format!("{kind}: weights sum to {sum}, expected 1"));
            }
        }
        Ok(())
    }

    pub fn with_cost_model(mut self, cost: &CostModel<f64>) -> Result<Self, ScoringError> {
        self.threshold = optimal_threshold(cost)?;
        Ok(self)
    }
}

/// Maps one raw feature of `fv` into [0,1]. Missing sub-vectors and absent
/// optional values contribute 0.
pub fn risk(feature: Feature, fv: &FeatureVector, config: &ScoringConfig) -> f64 {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    match feature {
        Feature::Length => fv.lex.as_ref().map_or(0.0, |l| clamp((l.length as f64 - 30.0) / 120.0)),
        Feature::Entropy => fv.lex.as_ref().map_or(0.0, |l| clamp(l.entropy_bits / 5.0)),
        Feature::SpecialChars => fv.lex.as_ref().map_or(0.0, |l| clamp(l.special_char_count as f64 / 8.0)),
        Feature::IpLiteral => fv.lex.as_ref().map_or(0.0, |l| if l.has_ip_literal { 1.0 } else { 0.0 }),
        Feature::DomainAge => fv
            .whois
            .as_ref()
            .and_then(|w| w.domain_age_days)
            .map_or(0.0, |age| clamp(1.0 - f64::from(age) / 365.0)),
        Feature::AsnIsp => fv.host.as_ref().map_or(0.0, |h| clamp(h.asn_risk)),
        Feature::Country => fv.host.as_ref().and_then(|h| h.country.as_ref()).map_or(0.0, |c| {
            if config.flagged_countries.iter().any(|f| f.eq_ignore_ascii_case(c)) {
                1.0
            } else {
                0.0
            }
        }),
        Feature::CertAge => fv
            .ssl
            .as_ref()
            .and_then(|s| s.cert_age_days)
            .map_or(0.0, |age| clamp(1.0 - f64::from(age) / 30.0)),
        Feature::TrustedCa => match fv.ssl.as_ref().and_then(|s| s.trusted_ca) {
            Some(false) => 1.0,
            _ => 0.0,
        },
        Feature::NameMatch => fv.business.as_ref().map_or(0.0, |b| clamp(b.name_similarity)),
        Feature::RegSignal => fv.business.as_ref().map_or(0.0, |b| clamp(b.registration_signal)),
        Feature::DnsblHits => clamp(f64::from(fv.rep.dnsbl_hits) / 3.0),
        Feature::AbuseIndex => clamp(fv.rep.abuse_index),
        Feature::UserReports => clamp(fv.rep.user_report_weight / 5.0),
        Feature::NoMx => match fv.mail.as_ref().and_then(|m| m.has_mx) {
            Some(false) => 1.0,
            _ => 0.0,
        },
        Feature::Disposable => match fv.mail.as_ref().and_then(|m| m.disposable) {
            Some(true) => 1.0,
            _ => 0.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: Feature,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub score: f64,
    /// Positive contributions, descending, ties by feature name.
    pub dominant: Vec<Contribution>,
    pub fallback_penalty: f64,
}

/// Sum of weights of the remote-sourced features of `slot`.
pub fn slot_weight(table: &WeightTable, slot: Slot) -> f64 {
    slot.features().filter(|f| f.is_remote()).map(|f| table.get(&f).copied().unwrap_or(0.0)).sum()
}

pub fn score(fv: &FeatureVector, config: &ScoringConfig) -> Result<ScoreBreakdown, ScoringError> {
    let table = config.weights.get(&fv.kind).ok_or(ScoringError::MissingWeightTable(fv.kind))?;
    let mut dominant: Vec<Contribution> = table
        .iter()
        .map(|(&feature, &w)| Contribution {
            feature,
            contribution: w * risk(feature, fv, config),
        })
        .filter(|c| c.contribution > 0.0)
        .collect();
    let raw: f64 = dominant.iter().map(|c| c.contribution).sum();
    let fallback_penalty: f64 = fv
        .availability
        .iter()
        .filter(|(_, s)| **s == SlotStatus::Fallback)
        .map(|(slot, _)| config.fallback_penalty * slot_weight(table, *slot))
        .sum();
    dominant.sort_by(|a, b| {
        b.contribution
            .total_cmp(&a.contribution)
            .then_with(|| a.feature.as_str().cmp(b.feature.as_str()))
    });
    Ok(ScoreBreakdown {
        score: (raw + fallback_penalty).clamp(0.0, 1.0),
        dominant,
        fallback_penalty,
    })
}
