//! First-token option probabilities and the divergence-minimizing trainer.

mod loss;
mod optimizer;
mod trainer;

use std::collections::HashMap;

pub use loss::{ce_loss, js_loss, kl_loss, wa_loss, LossKind, Objective, LOG_EPSILON};
pub use optimizer::{AdamW, Optimizer, OptimizerKind, Sgd};
pub use trainer::{
    dataset_hash, save_adapter, train, AdapterMetadata, EarlyStopMetric, EpochSummary, LogEvent, StopReason,
    TrainConfig, TrainOutcome, TrainingLog,
};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::prompting::PromptRecord;

/// Next-token logits restricted to a record's option labels, in label order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionLogits {
    pub record: String,
    pub values: Vec<f64>,
    pub label_token_ids: Vec<u32>,
}

/// Max-subtracted softmax. Callers guarantee finite input.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax_normalize(logits: &OptionLogits) -> Result<Vec<f64>> {
    if logits.values.is_empty() || logits.values.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteLogit { record: logits.record.clone() });
    }
    Ok(softmax(&logits.values))
}

/// Resolves each label's first token after `(` and checks that the ids are
/// pairwise distinct and decode back to a prefix of their label.
pub fn label_token_ids<B: Backend + ?Sized>(backend: &B, labels: &[String]) -> Result<Vec<u32>> {
    let mut seen: HashMap<u32, &str> = HashMap::new();
    let mut ids = Vec::with_capacity(labels.len());
    for label in labels {
        let id = backend.label_token_id(label)?;
        if let Some(first) = seen.insert(id, label) {
            return Err(Error::LabelTokenCollision { first: first.to_string(), second: label.clone(), token: id });
        }
        match backend.decode_token(id) {
            Some(piece) if !piece.is_empty() && label.starts_with(piece.trim_start()) => {}
            _ => return Err(Error::UnknownLabel(label.clone())),
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Picks the label-token entries out of a full-vocabulary logit vector.
pub fn restrict_logits(full: &[f64], ids: &[u32], record: &str) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            full.get(id as usize).copied().ok_or_else(|| {
                Error::Backend(format!("{record}: label token {id} outside vocabulary of {}", full.len()))
            })
        })
        .collect()
}

pub fn index_option_logits<B: Backend + ?Sized>(backend: &B, record: &PromptRecord) -> Result<OptionLogits> {
    let ids = label_token_ids(backend, &record.option_labels)?;
    let full = backend.next_token_logits(&record.rendered_text).map_err(|e| match e {
        Error::ContextOverflow { length, limit, .. } => Error::ContextOverflow { record: record.id(), length, limit },
        other => other,
    })?;
    let values = restrict_logits(&full, &ids, &record.id())?;
    Ok(OptionLogits { record: record.id(), values, label_token_ids: ids })
}

/// Option distribution for a record, in display order.
pub fn predict_distribution<B: Backend + ?Sized>(backend: &B, record: &PromptRecord) -> Result<Vec<f64>> {
    softmax_normalize(&index_option_logits(backend, record)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, ToyTokenizer};

    fn logits(values: Vec<f64>) -> OptionLogits {
        OptionLogits { record: "r".into(), label_token_ids: (0..values.len() as u32).collect(), values }
    }

    #[test]
    fn softmax_reference() {
        let p = softmax_normalize(&logits(vec![1.0, 2.0, 3.0])).unwrap();
        let expected = [0.090_030_573_170_380_5, 0.244_728_471_054_797_7, 0.665_240_955_774_821_9];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(softmax_normalize(&logits(vec![0.7; 4])).unwrap(), vec![0.25; 4]);
        let p = softmax_normalize(&logits(vec![5.0, 1005.0])).unwrap();
        assert!(p[0] < 1e-300 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_names_the_record() {
        let err = softmax_normalize(&logits(vec![0.0, f64::NAN])).unwrap_err();
        assert!(err.to_string().contains("record r"));
        assert!(softmax_normalize(&logits(vec![f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn collisions_are_rejected() {
        let mock = MockBackend::default().with_label_token("B", 1);
        let labels: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(label_token_ids(&mock, &labels), Err(Error::LabelTokenCollision { token: 1, .. })));
    }

    #[test]
    fn restricts_in_label_order() {
        let tok = ToyTokenizer::default();
        let mut full = vec![0.0; tok.vocab_size()];
        for (i, l) in ["A", "B", "C", "D"].iter().enumerate() {
            full[tok.label_token(l).unwrap() as usize] = i as f64 + 0.5;
        }
        let labels: Vec<String> = ["C", "A"].iter().map(|s| s.to_string()).collect();
        let ids = label_token_ids(&MockBackend::default(), &labels).unwrap();
        assert_eq!(restrict_logits(&full, &ids, "r").unwrap(), vec![2.5, 0.5]);
    }
}
