//! Distribution similarity measures used for scoring predictions.
//!
//! All inputs are probability vectors over a question's options in their
//! displayed order. `jsd` uses base-2 logarithms so it is bounded by 1, and
//! `emd` treats options as ordinal positions with ground distance
//! `|i - j| / (n - 1)`, which bounds it by 1 for any option count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(p) - 1|` accepted by every metric.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub higher_is_better: bool,
}

impl MetricValue {
    pub fn one_minus_jsd(value: f64) -> Self {
        Self { name: "1-JSD".into(), value, higher_is_better: true }
    }

    pub fn emd(value: f64) -> Self {
        Self { name: "EMD".into(), value, higher_is_better: false }
    }

    pub fn accuracy(value: f64) -> Self {
        Self { name: "accuracy".into(), value, higher_is_better: true }
    }
}

/// Checks that `p` is a probability vector: finite, non-negative, summing to 1.
pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::validation("empty probability vector"));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::validation(format!("invalid probability entry {x}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::validation(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

fn validate_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    validate_distribution(p)?;
    validate_distribution(q)
}

/// `sum p_i log2(p_i / m_i)` with the `0 log 0 = 0` convention.
fn kl_base2_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    validate_pair(p, q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let value = 0.5 * kl_base2_to_mixture(p, &m) + 0.5 * kl_base2_to_mixture(q, &m);
    Ok(value.clamp(0.0, 1.0))
}

pub fn one_minus_jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    jsd(p, q).map(|d| 1.0 - d)
}

/// Unnormalized 1-D transport cost: sum of absolute CDF differences over the
/// first `n - 1` positions, each gap having unit length.
pub(crate) fn cdf_l1(p: &[f64], q: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q).take(p.len().saturating_sub(1)) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    total
}

/// Earth mover distance over ordinal option positions, normalized to `[0, 1]`.
pub fn emd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() < 2 || q.len() < 2 {
        return Err(Error::validation("emd needs at least two options"));
    }
    validate_pair(p, q)?;
    let n = p.len();
    Ok((cdf_l1(p, q) / (n - 1) as f64).clamp(0.0, 1.0))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in p.iter().enumerate().skip(1) {
        if *x > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of items whose predicted argmax equals the reference argmax.
pub fn argmax_accuracy<P, R>(predictions: &[P], references: &[R]) -> Result<f64>
where
    P: AsRef<[f64]>,
    R: AsRef<[f64]>,
{
    if predictions.is_empty() {
        return Err(Error::validation("argmax accuracy over an empty list"));
    }
    if predictions.len() != references.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    let mut hits = 0usize;
    for (p, r) in predictions.iter().zip(references) {
        let (p, r) = (p.as_ref(), r.as_ref());
        if p.len() != r.len() {
            return Err(Error::validation(format!(
                "item length mismatch: {} vs {}",
                p.len(),
                r.len()
            )));
        }
        if argmax(p) == argmax(r) {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mean `1 - JSD` over all unordered pairs of per-country distributions for a
/// single question. Lower values mean more cross-country variation.
pub fn diversity_profile<D: AsRef<[f64]>>(distributions: &[D]) -> Result<f64> {
    if distributions.len() < 2 {
        return Err(Error::validation(format!(
            "diversity needs at least two countries, got {}",
            distributions.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..distributions.len() {
        for j in (i + 1)..distributions.len() {
            total += one_minus_jsd(distributions[i].as_ref(), distributions[j].as_ref())?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
