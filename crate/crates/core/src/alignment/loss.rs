//! Divergence losses between a human distribution and model option
//! probabilities, with gradients. All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cdf_l1, validate_distribution};

/// Lower clamp applied to model probabilities inside logarithms.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "JS")]
    Js,
    #[serde(rename = "WA")]
    Wa,
    #[serde(rename = "CE")]
    Ce,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Kl, LossKind::Js, LossKind::Wa, LossKind::Ce];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Kl => "KL",
            LossKind::Js => "JS",
            LossKind::Wa => "WA",
            LossKind::Ce => "CE",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "KL" => Ok(LossKind::Kl),
            "JS" => Ok(LossKind::Js),
            "WA" => Ok(LossKind::Wa),
            "CE" => Ok(LossKind::Ce),
            other => Err(Error::validation(format!("unknown loss {other:?}; expected KL, JS, WA or CE"))),
        }
    }
}

fn check(p_human: &[f64], p_llm: &[f64]) -> Result<()> {
    if p_human.len() != p_llm.len() {
        return Err(Error::validation(format!(
            "loss shape mismatch: {} human vs {} model probabilities",
            p_human.len(),
            p_llm.len()
        )));
    }
    validate_distribution(p_human)?;
    validate_distribution(p_llm)
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_EPSILON).ln()
}

/// `KL(human ‖ model)`.
pub fn kl_loss(p_human: &[f64], p_llm: &[f64]) -> Result<f64> {
    check(p_human, p_llm)?;
    Ok(p_human
        .iter()
        .zip(p_llm)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t.ln() - clamped_ln(*p)))
        .sum())
}

/// Jensen-Shannon divergence in nats.
pub fn js_loss(p_human: &[f64], p_llm: &[f64]) -> Result<f64> {
    check(p_human, p_llm)?;
    let mut total = 0.0;
    for (t, p) in p_human.iter().zip(p_llm) {
        let m = 0.5 * (t + p);
        if *t > 0.0 {
            total += 0.5 * t * (t / m).ln();
        }
        if *p > 0.0 {
            total += 0.5 * p * (p / m).ln();
        }
    }
    Ok(total.max(0.0))
}

/// 1-D Wasserstein distance over option positions; divided by `n - 1` when `normalized`.
pub fn wa_loss(p_human: &[f64], p_llm: &[f64], normalized: bool) -> Result<f64> {
    check(p_human, p_llm)?;
    let raw = cdf_l1(p_human, p_llm);
    Ok(if normalized && p_human.len() > 1 { raw / (p_human.len() - 1) as f64 } else { raw })
}

/// Cross-entropy `-sum human_i ln model_i`.
pub fn ce_loss(p_human: &[f64], p_llm: &[f64]) -> Result<f64> {
    check(p_human, p_llm)?;
    Ok(-p_human.iter().zip(p_llm).filter(|(t, _)| **t > 0.0).map(|(t, p)| t * clamped_ln(*p)).sum::<f64>())
}

/// A configured training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub kind: LossKind,
    pub wa_normalized: bool,
}

impl Objective {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, wa_normalized: true }
    }

    pub fn value(&self, p_human: &[f64], p_llm: &[f64]) -> Result<f64> {
        match self.kind {
            LossKind::Kl => kl_loss(p_human, p_llm),
            LossKind::Js => js_loss(p_human, p_llm),
            LossKind::Wa => wa_loss(p_human, p_llm, self.wa_normalized),
            LossKind::Ce => ce_loss(p_human, p_llm),
        }
    }

    /// Gradient of the loss with respect to the model probabilities.
    pub fn grad_wrt_probs(&self, p_human: &[f64], p_llm: &[f64]) -> Vec<f64> {
        let n = p_human.len();
        match self.kind {
            LossKind::Kl | LossKind::Ce => p_human
                .iter()
                .zip(p_llm)
                .map(|(t, p)| if *p > LOG_EPSILON { -t / p } else { 0.0 })
                .collect(),
            LossKind::Js => p_human
                .iter()
                .zip(p_llm)
                .map(|(t, p)| {
                    if *t == 0.0 {
                        0.5 * std::f64::consts::LN_2
                    } else {
                        let p = p.max(LOG_EPSILON);
                        0.5 * (2.0 * p / (p + t)).ln()
                    }
                })
                .collect(),
            LossKind::Wa => {
                let scale = if self.wa_normalized && n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
                // d/dp_j sum_{i<n-1} |C_p(i) - C_t(i)| = sum_{i=j}^{n-2} sign(C_p(i) - C_t(i))
                let mut signs = vec![0.0; n];
                let (mut cp, mut ct) = (0.0, 0.0);
                for i in 0..n.saturating_sub(1) {
                    cp += p_llm[i];
                    ct += p_human[i];
                    signs[i] = (cp - ct).signum() * f64::from(u8::from(cp != ct));
                }
                let mut grad = vec![0.0; n];
                let mut suffix = 0.0;
                for j in (0..n).rev() {
                    suffix += signs[j];
                    grad[j] = scale * suffix;
                }
                grad
            }
        }
    }

    /// Loss at `softmax(logits)` and its gradient with respect to the option logits.
    pub fn value_and_logit_grad(&self, p_human: &[f64], logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = super::softmax(logits);
        let value = self.value(p_human, &p)?;
        let g = self.grad_wrt_probs(p_human, &p);
        let inner: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
        let grad = p.iter().zip(&g).map(|(pi, gi)| pi * (gi - inner)).collect();
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Expected values evaluated at 40 significant digits.
    const T: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
    const P: [f64; 4] = [0.25, 0.4, 0.05, 0.3];

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_loss(&[0.5, 0.5], &[0.9, 0.1]).unwrap() - 0.510_825_623_765_990_7).abs() < 1e-12);
        let uniform = [0.25; 4];
        assert!((kl_loss(&[1.0, 0.0, 0.0, 0.0], &uniform).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((kl_loss(&T, &P).unwrap() - 0.422_342_160_449_724_3).abs() < 1e-12);
    }

    #[test]
    fn other_losses_reference_values() {
        assert!((ce_loss(&T, &P).unwrap() - 1.702_196_386_283_391_8).abs() < 1e-12);
        assert!((js_loss(&T, &P).unwrap() - 0.086_707_559_723_444_79).abs() < 1e-12);
        assert!((wa_loss(&T, &P, false).unwrap() - 0.6).abs() < 1e-12);
        assert!((wa_loss(&T, &P, true).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn equal_inputs() {
        assert_eq!(js_loss(&T, &T).unwrap(), 0.0);
        assert_eq!(wa_loss(&T, &T, true).unwrap(), 0.0);
        let entropy = 1.279_854_225_833_667_5;
        assert!((ce_loss(&T, &T).unwrap() - entropy).abs() < 1e-12);
        assert_eq!(ce_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        for kind in LossKind::ALL {
            assert!(Objective::new(kind).value(&[0.5, 0.5], &[1.0, 0.0, 0.0]).is_err());
        }
    }

    #[test]
    fn clamp_keeps_kl_finite() {
        let v = kl_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(v.is_finite());
        assert!((v - (0.5f64.ln() - 0.5 * LOG_EPSILON.ln())).abs() < 1e-9);
    }

    #[test]
    fn parse_names() {
        assert_eq!("kl".parse::<LossKind>().unwrap(), LossKind::Kl);
        assert_eq!(" WA ".parse::<LossKind>().unwrap(), LossKind::Wa);
        assert!("mse".parse::<LossKind>().is_err());
    }
}
