//! Detection metrics (confusion counts, precision/recall/F1, ROC AUC, Cohen's
//! kappa), nearest-rank latency percentiles and a corpus runner.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Engine;
use crate::entity::{EntityKind, RawEntity};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input is empty")]
    EmptyInput,
    #[error("need at least one positive and one negative example")]
    SingleClassInput,
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("expected agreement is 1; kappa undefined")]
    DegenerateMarginals,
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("labels and scores do not align: {0}")]
    JoinMismatch(String),
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample<T> {
    pub entity_canonical: String,
    pub kind: EntityKind,
    pub label: bool,
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub f1: Option<T>,
    pub auc: Option<T>,
    pub kappa: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileReport<T> {
    pub p50: T,
    pub p90: T,
    pub p99: T,
}

fn ratio<T: Float>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::from(num).expect("count fits") / T::from(den).expect("count fits"))
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1<T: Float>(precision: T, recall: T) -> Option<T> {
    let sum = precision + recall;
    (sum > T::zero()).then(|| (precision + precision) * recall / sum)
}

fn check_finite<T: Float>(examples: &[LabeledExample<T>]) -> Result<(), EvalError> {
    if examples.iter().all(|e| e.score.is_finite()) {
        Ok(())
    } else {
        Err(EvalError::NonFiniteScore)
    }
}

/// Confusion counts under the inclusive rule `score >= threshold`.
pub fn confusion_metrics<T: Float>(examples: &[LabeledExample<T>], threshold: T) -> Result<MetricsReport<T>, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    check_finite(examples)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for e in examples {
        match (e.score >= threshold, e.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = precision.zip(recall).and_then(|(p, r)| f1(p, r));
    Ok(MetricsReport { tp, fp, tn, fn_, precision, recall, f1, auc: None, kappa: None })
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed from sorted negatives with an integer numerator
/// in half-units.
pub fn auc<T: Float>(examples: &[LabeledExample<T>]) -> Result<T, EvalError> {
    check_finite(examples)?;
    let mut neg: Vec<T> = examples.iter().filter(|e| !e.label).map(|e| e.score).collect();
    let n_pos = examples.iter().filter(|e| e.label).count() as u64;
    let n_neg = neg.len() as u64;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassInput);
    }
    neg.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let mut half_units: u64 = 0;
    for e in examples.iter().filter(|e| e.label) {
        let below = neg.partition_point(|&s| s < e.score) as u64;
        let at_or_below = neg.partition_point(|&s| s <= e.score) as u64;
        half_units += 2 * below + (at_or_below - below);
    }
    let den = 2 * n_pos * n_neg;
    Ok(T::from(half_units).expect("count fits") / T::from(den).expect("count fits"))
}

/// Chance-corrected agreement (p_o − p_e)/(1 − p_e), evaluated over integer
/// counts so a single division produces the result.
pub fn cohen_kappa<T: Float>(a: &[bool], b: &[bool]) -> Result<T, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let a1 = a.iter().filter(|x| **x).count() as u128;
    let b1 = b.iter().filter(|x| **x).count() as u128;
    let expected = a1 * b1 + (n - a1) * (n - b1);
    if expected == n * n {
        return Err(EvalError::DegenerateMarginals);
    }
    let num = (n * agree) as f64 - expected as f64;
    let den = (n * n - expected) as f64;
    Ok(T::from(num / den).expect("kappa fits"))
}

/// Nearest-rank percentile for a per-mille rank: the value at 1-based index
/// ceil(p·n) of the ascending sort.
pub fn nearest_rank<T: Float>(sorted: &[T], per_mille: u64) -> T {
    let n = sorted.len() as u64;
    let rank = (per_mille * n).div_ceil(1000).max(1);
    sorted[(rank - 1) as usize]
}

pub fn percentiles<T: Float>(samples: &[T]) -> Result<PercentileReport<T>, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    Ok(PercentileReport { p50: nearest_rank(&sorted, 500), p90: nearest_rank(&sorted, 900), p99: nearest_rank(&sorted, 990) })
}

/// Confusion metrics plus AUC when both classes are present.
pub fn full_metrics<T: Float>(examples: &[LabeledExample<T>], threshold: T) -> Result<MetricsReport<T>, EvalError> {
    let mut m = confusion_metrics(examples, threshold)?;
    m.auc = auc(examples).ok();
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub entity: String,
    pub kind: EntityKind,
    pub label: bool,
    /// Second annotator's label, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_b: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub entity: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub n: usize,
    pub overall: MetricsReport<f64>,
    /// Every kind; `None` for kinds absent from the corpus.
    pub per_kind: BTreeMap<EntityKind, Option<MetricsReport<f64>>>,
}

fn read_jsonl<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, EvalError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: file.clone(), source })?;
    parse_jsonl(&text, &file)
}

pub fn parse_jsonl<R: for<'de> Deserialize<'de>>(text: &str, file: &str) -> Result<Vec<R>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse { file: file.to_string(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Pairs every label with exactly one score by entity.
pub fn join(labels: &[LabelRecord], scores: &[ScoreRecord]) -> Result<Vec<LabeledExample<f64>>, EvalError> {
    let mut by_entity: HashMap<&str, f64> = HashMap::new();
    for s in scores {
        if by_entity.insert(&s.entity, s.score).is_some() {
            return Err(EvalError::JoinMismatch(format!("duplicate score for {}", s.entity)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.entity.as_str()) {
            return Err(EvalError::JoinMismatch(format!("duplicate label for {}", l.entity)));
        }
        let score = *by_entity.get(l.entity.as_str()).ok_or_else(|| EvalError::JoinMismatch(format!("no score for {}", l.entity)))?;
        out.push(LabeledExample { entity_canonical: l.entity.clone(), kind: l.kind, label: l.label, score });
    }
    if let Some(extra) = scores.iter().find(|s| !seen.contains(s.entity.as_str())) {
        return Err(EvalError::JoinMismatch(format!("no label for {}", extra.entity)));
    }
    Ok(out)
}

pub fn evaluate(labels: &[LabelRecord], examples: &[LabeledExample<f64>], threshold: f64) -> Result<EvalReport, EvalError> {
    let mut overall = full_metrics(examples, threshold)?;
    let pairs: Vec<(bool, bool)> = labels.iter().filter_map(|l| l.label_b.map(|b| (l.label, b))).collect();
    if !pairs.is_empty() && pairs.len() == labels.len() {
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        overall.kappa = cohen_kappa(&a, &b).ok();
    }
    let mut per_kind = BTreeMap::new();
    for kind in EntityKind::ALL {
        let subset: Vec<LabeledExample<f64>> = examples.iter().filter(|e| e.kind == kind).cloned().collect();
        per_kind.insert(kind, if subset.is_empty() { None } else { Some(full_metrics(&subset, threshold)?) });
    }
    Ok(EvalReport { threshold, n: examples.len(), overall, per_kind })
}

pub fn run_eval(labels_path: impl AsRef<Path>, scores_path: impl AsRef<Path>, threshold: f64) -> Result<EvalReport, EvalError> {
    let labels: Vec<LabelRecord> = read_jsonl(labels_path.as_ref())?;
    let scores: Vec<ScoreRecord> = read_jsonl(scores_path.as_ref())?;
    let examples = join(&labels, &scores)?;
    evaluate(&labels, &examples, threshold)
}

/// Scores every labeled entity with `engine` instead of reading a scores file.
pub async fn run_eval_live(labels_path: impl AsRef<Path>, engine: &Engine, threshold: f64) -> Result<EvalReport, EvalError> {
    let labels: Vec<LabelRecord> = read_jsonl(labels_path.as_ref())?;
    let mut scores = Vec::with_capacity(labels.len());
    for l in &labels {
        let raw = RawEntity::new(l.entity.as_str()).map_err(|e| EvalError::JoinMismatch(format!("{}: {e}", l.entity)))?;
        let verdict = engine.verify(&raw, Some(l.kind)).await.map_err(|e| EvalError::JoinMismatch(format!("{}: {e}", l.entity)))?;
        scores.push(ScoreRecord { entity: l.entity.clone(), score: verdict.score });
    }
    let examples = join(&labels, &scores)?;
    evaluate(&labels, &examples, threshold)
}
