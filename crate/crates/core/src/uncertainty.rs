use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sample_dropout_masks;
use crate::error::{Result, UpoError};
use crate::models::{EstimatorModel, Sequence};

/// `T` stochastic estimates of `p(c = 1)` for one triple.
#[derive(Clone, Debug, PartialEq)]
pub struct McPrediction {
    pub id: String,
    pub probs: Vec<f64>,
}

impl McPrediction {
    pub fn new(id: impl Into<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(UpoError::invalid("prediction needs at least one pass"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(UpoError::invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { id: id.into(), probs })
    }

    pub fn passes(&self) -> usize {
        self.probs.len()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }
}

/// `T` forward passes of the estimator under independent dropout masks.
pub fn mc_predict(
    est: &EstimatorModel,
    id: &str,
    template: &Sequence,
    passes: usize,
    rate: f64,
    seed: u64,
) -> Result<McPrediction> {
    if passes < 2 {
        return Err(UpoError::invalid(format!("MC dropout needs T >= 2, got {passes}")));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(UpoError::invalid(format!(
            "MC dropout rate must lie in (0, 1), got {rate}"
        )));
    }
    let masks = sample_dropout_masks(&est.dropout_layout(), rate, seed, passes)?;
    let probs = masks
        .iter()
        .map(|m| est.prob(template, Some(m)))
        .collect::<Result<Vec<_>>>()?;
    McPrediction::new(id, probs)
}

/// Binary entropy in bits with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Mutual information between the prediction and the dropout mask, in bits.
pub fn information_gain(mc: &McPrediction) -> f64 {
    let mean_entropy = mc.probs.iter().map(|&p| binary_entropy(p)).sum::<f64>() / mc.probs.len() as f64;
    (binary_entropy(mc.mean()) - mean_entropy).clamp(0.0, 1.0)
}

/// `(1 - b)^mu`.
pub fn certainty(b_hat: f64, mu: f64) -> f64 {
    (1.0 - b_hat).max(0.0).powf(mu)
}

/// `P_j = (1 - b_j)^mu / sum_k (1 - b_k)^mu`.
pub fn sampling_weights(gains: &[f64], mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(UpoError::invalid(format!("mu must be > 0, got {mu}")));
    }
    if let Some(g) = gains.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(UpoError::invalid(format!("information gain {g} outside [0, 1]")));
    }
    let s: Vec<f64> = gains.iter().map(|&b| certainty(b, mu)).collect();
    let total: f64 = s.iter().sum();
    if !(total > 0.0) {
        return Err(UpoError::DegenerateCertainty);
    }
    Ok(s.into_iter().map(|c| c / total).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `1 / (P + 1)` from the normalized sampling weight.
    PaperLiteral,
    /// `(1 - s) / 2` from the per-triple certainty.
    #[default]
    Smoothing,
}

/// Normalization group for sampling weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    #[default]
    Prompt,
    Dataset,
}

/// Per-triple uncertainty summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub triple_id: String,
    pub b_hat: f64,
    pub s: f64,
    pub p_weight: f64,
    pub alpha: f64,
}

pub fn alpha_weight(rec: &UncertaintyRecord, mode: AlphaMode) -> f64 {
    match mode {
        AlphaMode::PaperLiteral => 1.0 / (rec.p_weight + 1.0),
        AlphaMode::Smoothing => ((1.0 - rec.s) / 2.0).clamp(0.0, 0.5),
    }
}

/// Input row for [`build_records`].
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub id: String,
    /// Normalization group, normally the prompt.
    pub group: String,
    pub b_hat: f64,
    /// The estimator's mean prediction agrees with the labeled direction.
    pub eligible: bool,
}

/// Certainty, sampling weight and smoothing weight for every triple.
///
/// Weights are normalized over the eligible triples of each group; triples
/// the estimator disputes get zero weight and the agnostic smoothing weight.
pub fn build_records(items: &[Scored], mu: f64, scope: WeightScope, mode: AlphaMode) -> Result<Vec<UncertaintyRecord>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let key = match scope {
            WeightScope::Prompt => it.group.as_str(),
            WeightScope::Dataset => "",
        };
        groups.entry(key).or_default().push(i);
    }
    let mut weights = vec![0.0; items.len()];
    for idx in groups.values() {
        let eligible: Vec<usize> = idx.iter().copied().filter(|&i| items[i].eligible).collect();
        if eligible.is_empty() {
            continue;
        }
        let gains: Vec<f64> = eligible.iter().map(|&i| items[i].b_hat).collect();
        for (&i, w) in eligible.iter().zip(sampling_weights(&gains, mu)?) {
            weights[i] = w;
        }
    }
    Ok(items
        .iter()
        .zip(weights)
        .map(|(it, p_weight)| {
            let s = if it.eligible { certainty(it.b_hat, mu) } else { 0.0 };
            let mut rec = UncertaintyRecord {
                triple_id: it.id.clone(),
                b_hat: it.b_hat,
                s,
                p_weight,
                alpha: 0.0,
            };
            rec.alpha = alpha_weight(&rec, mode);
            rec
        })
        .collect())
}

pub fn write_records_csv(path: &Path, records: &[UncertaintyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| UpoError::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<UncertaintyRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(UpoError::from)).collect()
}
