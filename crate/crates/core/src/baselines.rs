//! Reference predictors that need no fine-tuning.

use std::collections::{BTreeMap, HashMap};

use crate::alignment::predict_distribution;
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::eval::{Prediction, Predictor};
use crate::prompting::{PromptRecord, PromptTemplate};
use crate::survey_data::Entry;
use crate::util::hashed_bag_of_words;

/// Token budget for JSON replies.
pub const JSON_MAX_NEW_TOKENS: usize = 256;

pub fn zero_shot_predict<B: Backend + ?Sized>(backend: &B, record: &PromptRecord) -> Result<Vec<f64>> {
    predict_distribution(backend, record)
}

/// First-token prediction from a backend, with or without an adapter loaded.
pub struct BackendPredictor<'a> {
    id: String,
    backend: &'a dyn Backend,
}

impl<'a> BackendPredictor<'a> {
    pub fn new(id: impl Into<String>, backend: &'a dyn Backend) -> Self {
        Self { id: id.into(), backend }
    }
}

impl Predictor for BackendPredictor<'_> {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        zero_shot_predict(self.backend, record).map(Prediction::Probs)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let d = self.backend.descriptor();
        let mut meta = BTreeMap::from([
            ("backend.kind".to_string(), serde_json::to_string(&d.kind).unwrap_or_default()),
            ("backend.identifier".to_string(), d.identifier),
            ("backend.deterministic".to_string(), d.deterministic.to_string()),
        ]);
        for (k, v) in d.flags {
            meta.insert(format!("backend.flags.{k}"), v);
        }
        meta
    }
}

/// Maps text to a dense vector for nearest-neighbour retrieval.
pub trait Embedder: Send + Sync {
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature-hashing bag of words; needs no model download.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-bow-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        hashed_bag_of_words(text, self.dim)
    }
}

fn knn_text(country: &str, question: &str) -> String {
    format!("{country} {question}")
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Top-1 retrieval over training entries by cosine similarity of
/// "country + question" embeddings.
pub struct KnnPredictor<E> {
    embedder: E,
    entries: Vec<Entry>,
    vectors: Vec<Vec<f64>>,
}

impl<E: Embedder> KnnPredictor<E> {
    pub fn new(train_entries: &[Entry], embedder: E) -> Result<Self> {
        if train_entries.is_empty() {
            return Err(Error::validation("KNN needs at least one training entry"));
        }
        let vectors = train_entries.iter().map(|e| embedder.embed(&knn_text(&e.group, &e.question.text))).collect();
        Ok(Self { embedder, entries: train_entries.to_vec(), vectors })
    }

    /// Index of the nearest training entry; ties go to the lowest index.
    pub fn nearest(&self, country: &str, question: &str) -> usize {
        let query = self.embedder.embed(&knn_text(country, question));
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.vectors.iter().enumerate() {
            let s = cosine(&query, v);
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    pub fn predict_record(&self, record: &PromptRecord) -> Prediction {
        let i = self.nearest(record.displayed_country(), &record.entry.question.text);
        let neighbour = &self.entries[i];
        if neighbour.target.probs.len() != record.option_count() {
            return Prediction::Failed(format!(
                "nearest neighbour {} has {} options, record has {}",
                neighbour.key(),
                neighbour.target.probs.len(),
                record.option_count()
            ));
        }
        Prediction::Probs(neighbour.target.probs.clone())
    }
}

pub fn knn_predict<E: Embedder>(record: &PromptRecord, train_entries: &[Entry], embedder: E) -> Result<Prediction> {
    Ok(KnnPredictor::new(train_entries, embedder)?.predict_record(record))
}

impl<E: Embedder> Predictor for KnnPredictor<E> {
    fn id(&self) -> String {
        "KNN".into()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        Ok(self.predict_record(record))
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("knn.embedder".to_string(), self.embedder.id()),
            ("knn.k".to_string(), "1".to_string()),
        ])
    }
}

/// Mean training distribution per question; uniform for unseen questions.
#[derive(Debug, Clone, Default)]
pub struct AvgCulturePredictor {
    means: HashMap<(String, u32), Vec<f64>>,
}

impl AvgCulturePredictor {
    pub fn new(train_entries: &[Entry]) -> Self {
        let mut sums: HashMap<(String, u32), (Vec<f64>, usize)> = HashMap::new();
        for e in train_entries {
            let key = (e.question.survey_id.clone(), e.question.question_id);
            let slot = sums.entry(key).or_insert_with(|| (vec![0.0; e.target.probs.len()], 0));
            if slot.0.len() != e.target.probs.len() {
                log::warn!("{}: option count differs from other countries; skipped in average", e.key());
                continue;
            }
            for (s, p) in slot.0.iter_mut().zip(&e.target.probs) {
                *s += p;
            }
            slot.1 += 1;
        }
        let means = sums
            .into_iter()
            .filter_map(|(k, (sum, _))| crate::survey_data::normalize(&sum).map(|m| (k, m)))
            .collect();
        Self { means }
    }

    /// Prediction in the record's display order.
    pub fn predict_record(&self, record: &PromptRecord) -> Vec<f64> {
        let n = record.option_count();
        let key = (record.entry.question.survey_id.clone(), record.entry.question.question_id);
        match self.means.get(&key) {
            Some(mean) if mean.len() == n => record.permutation.iter().map(|&orig| mean[orig]).collect(),
            _ => vec![1.0 / n as f64; n],
        }
    }
}

pub fn avg_culture_predict(record: &PromptRecord, train_entries: &[Entry]) -> Vec<f64> {
    AvgCulturePredictor::new(train_entries).predict_record(record)
}

impl Predictor for AvgCulturePredictor {
    fn id(&self) -> String {
        "Avg_Culture".into()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        Ok(Prediction::Probs(self.predict_record(record)))
    }
}

fn json_value_to_number(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().trim_end_matches('%').trim().parse().ok(),
        _ => None,
    }
}

/// Parses a reply holding a JSON object of label → percentage into a
/// distribution over `labels`. Negatives clip to zero and missing labels
/// count as zero before renormalizing.
pub fn parse_json_distribution(reply: &str, labels: &[String]) -> Option<Vec<f64>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let object: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&reply[start..=end]).ok()?;
    let mut weights = Vec::with_capacity(labels.len());
    for label in labels {
        let value = object
            .iter()
            .find(|(k, _)| k.trim().trim_matches(|c| c == '(' || c == ')').eq_ignore_ascii_case(label))
            .map(|(_, v)| v);
        let w = match value {
            Some(v) => json_value_to_number(v)?,
            None => 0.0,
        };
        if !w.is_finite() {
            return None;
        }
        weights.push(w.max(0.0));
    }
    crate::survey_data::normalize(&weights)
}

pub fn json_zs_predict<B: Backend + ?Sized>(
    backend: &B,
    record: &PromptRecord,
    template: &PromptTemplate,
) -> Result<Prediction> {
    for retry in [false, true] {
        let prompt = template.render_json_zs(record, retry)?;
        let reply = backend.generate_text(&prompt, JSON_MAX_NEW_TOKENS)?;
        if let Some(p) = parse_json_distribution(&reply, &record.option_labels) {
            return Ok(Prediction::Probs(p));
        }
    }
    Ok(Prediction::Failed("reply was not a usable JSON distribution after one retry".into()))
}

pub struct JsonZsPredictor<'a> {
    backend: &'a dyn Backend,
    template: PromptTemplate,
}

impl<'a> JsonZsPredictor<'a> {
    pub fn new(backend: &'a dyn Backend, template: PromptTemplate) -> Self {
        Self { backend, template }
    }
}

impl Predictor for JsonZsPredictor<'_> {
    fn id(&self) -> String {
        "JSON-ZS".into()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        json_zs_predict(self.backend, record, &self.template)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("json_zs.backend".to_string(), self.backend.descriptor().identifier),
            ("json_zs.max_new_tokens".to_string(), JSON_MAX_NEW_TOKENS.to_string()),
            ("json_zs.decoding".to_string(), "greedy".to_string()),
        ])
    }
}
