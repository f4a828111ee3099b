//! Toy language model with a frozen base head and a trainable low-rank adapter.
//!
//! The model reads the displayed country and question from the prompt and
//! builds the feature vector
//!
//! ```text
//! h = [1, u, e, u ⊗ e]
//! ```
//!
//! where `u` is the country's knowledge vector and `e` a hashed bag-of-words
//! embedding of the question text. Next-token logits are
//! `W0 h + (alpha / rank) · B A dropout(h)` with `W0` frozen, `A` initialized
//! with small Gaussian weights and `B` initialized to zero, so an untrained
//! adapter reproduces the base model exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_context, greedy_generate, Backend, BackendDescriptor, BackendKind, ToyTokenizer, TrainableBackend};
use crate::error::{Error, Result};
use crate::prompting::PromptTemplate;
use crate::util::{derive_seed, fnv1a64, hashed_bag_of_words, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default = "default_question_dim")]
    pub question_dim: usize,
    /// Dimension of country vectors; must match the knowledge table.
    #[serde(default = "default_country_dim")]
    pub country_dim: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Standard deviation of the frozen base head weights.
    #[serde(default = "default_base_scale")]
    pub base_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_question_dim() -> usize {
    32
}
fn default_country_dim() -> usize {
    4
}
fn default_rank() -> usize {
    8
}
fn default_alpha() -> f64 {
    32.0
}
fn default_dropout() -> f64 {
    0.05
}
fn default_base_scale() -> f64 {
    0.02
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            question_dim: default_question_dim(),
            country_dim: default_country_dim(),
            rank: default_rank(),
            alpha: default_alpha(),
            dropout: default_dropout(),
            base_scale: default_base_scale(),
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn feature_dim(&self) -> usize {
        1 + self.country_dim + self.question_dim + self.country_dim * self.question_dim
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::validation("adapter rank must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("adapter dropout must lie in [0, 1)"));
        }
        if self.question_dim == 0 {
            return Err(Error::validation("question_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingBackend {
    config: EmbeddingConfig,
    tokenizer: ToyTokenizer,
    template: PromptTemplate,
    knowledge: BTreeMap<String, Vec<f64>>,
    /// Frozen head, `vocab × feature_dim`, row-major.
    base: Vec<f64>,
    /// `[A (rank × feature_dim) | B (vocab × rank)]`, row-major.
    params: Vec<f64>,
    grads: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingCheckpoint {
    kind: BackendKind,
    config: EmbeddingConfig,
    params: Vec<f64>,
}

impl EmbeddingBackend {
    pub fn new(
        config: EmbeddingConfig,
        knowledge: BTreeMap<String, Vec<f64>>,
        template: PromptTemplate,
    ) -> Result<Self> {
        config.validate()?;
        if let Some((name, v)) = knowledge.iter().find(|(_, v)| v.len() != config.country_dim) {
            return Err(Error::validation(format!(
                "country vector for {name:?} has {} dims, expected {}",
                v.len(),
                config.country_dim
            )));
        }
        let tokenizer = ToyTokenizer::default();
        let vocab = tokenizer.vocab_size();
        let dim = config.feature_dim();

        let mut base_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["base"]));
        let base = (0..vocab * dim)
            .map(|_| config.base_scale * base_rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut adapter_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["adapter"]));
        let a_scale = 1.0 / (dim as f64).sqrt();
        let mut params: Vec<f64> = (0..config.rank * dim)
            .map(|_| a_scale * adapter_rng.sample::<f64, _>(StandardNormal))
            .collect();
        params.extend(std::iter::repeat(0.0).take(vocab * config.rank));
        let grads = vec![0.0; params.len()];

        Ok(Self { config, tokenizer, template, knowledge, base, params, grads })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    fn scaling(&self) -> f64 {
        self.config.alpha / self.config.rank as f64
    }

    fn country_vector(&self, country: &str) -> Vec<f64> {
        if let Some(v) = self.knowledge.get(country) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(country.as_bytes()));
        (0..self.config.country_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Feature vector for a prompt. Text outside the prompt template gets a
    /// zero country vector and embeds the whole text as the question.
    pub fn features(&self, prompt: &str) -> Vec<f64> {
        let (country, question) = match self.template.parse_rendered(prompt) {
            Some(p) => (self.country_vector(&p.country), p.question),
            None => (vec![0.0; self.config.country_dim], prompt.to_string()),
        };
        let e = hashed_bag_of_words(&question, self.config.question_dim);
        let mut h = Vec::with_capacity(self.config.feature_dim());
        h.push(1.0);
        h.extend_from_slice(&country);
        h.extend_from_slice(&e);
        for u in &country {
            h.extend(e.iter().map(|x| u * x));
        }
        h
    }

    fn dropped(&self, h: &[f64], seed: Option<u64>) -> Vec<f64> {
        let p = self.config.dropout;
        match seed {
            Some(seed) if p > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep_scale = 1.0 / (1.0 - p);
                h.iter().map(|x| if rng.gen::<f64>() < p { 0.0 } else { x * keep_scale }).collect()
            }
            _ => h.to_vec(),
        }
    }

    fn split_params(&self) -> (&[f64], &[f64]) {
        self.params.split_at(self.config.rank * self.config.feature_dim())
    }

    fn forward(&self, prompt: &str, dropout_seed: Option<u64>) -> Result<Vec<f64>> {
        check_context(self.tokenizer.count(prompt), self.context_length(), prompt)?;
        let dim = self.config.feature_dim();
        let rank = self.config.rank;
        let h = self.features(prompt);
        let x = self.dropped(&h, dropout_seed);
        let (a, b) = self.split_params();
        let ax: Vec<f64> = (0..rank).map(|j| dot(&a[j * dim..(j + 1) * dim], &x)).collect();
        let s = self.scaling();
        Ok((0..self.vocab_size())
            .map(|v| dot(&self.base[v * dim..(v + 1) * dim], &h) + s * dot(&b[v * rank..(v + 1) * rank], &ax))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Backend for EmbeddingBackend {
    fn descriptor(&self) -> BackendDescriptor {
        let c = &self.config;
        BackendDescriptor {
            kind: BackendKind::ToyEmbedding,
            identifier: "toy-embedding".into(),
            trainable: true,
            deterministic: true,
            flags: BTreeMap::from([
                ("question_dim".to_string(), c.question_dim.to_string()),
                ("country_dim".to_string(), c.country_dim.to_string()),
                ("rank".to_string(), c.rank.to_string()),
                ("alpha".to_string(), c.alpha.to_string()),
                ("dropout".to_string(), c.dropout.to_string()),
                ("seed".to_string(), c.seed.to_string()),
            ]),
        }
    }

    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn context_length(&self) -> usize {
        8192
    }

    fn label_token_id(&self, label: &str) -> Result<u32> {
        self.tokenizer.label_token(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn decode_token(&self, id: u32) -> Option<String> {
        self.tokenizer.decode(id).map(str::to_string)
    }

    fn next_token_logits(&self, prompt: &str) -> Result<Vec<f64>> {
        self.forward(prompt, None)
    }

    fn generate_text(&self, prompt: &str, max_new_tokens: usize) -> Result<String> {
        greedy_generate(self, prompt, max_new_tokens)
    }

    fn as_trainable(&mut self) -> Option<&mut dyn TrainableBackend> {
        Some(self)
    }
}

impl TrainableBackend for EmbeddingBackend {
    fn forward_train(&self, prompt: &str, dropout_seed: u64) -> Result<Vec<f64>> {
        self.forward(prompt, Some(dropout_seed))
    }

    fn backward(&mut self, prompt: &str, dropout_seed: u64, grad_logits: &[f64]) -> Result<()> {
        let dim = self.config.feature_dim();
        let rank = self.config.rank;
        let vocab = self.vocab_size();
        if grad_logits.len() != vocab {
            return Err(Error::validation(format!("gradient has {} entries, vocabulary {vocab}", grad_logits.len())));
        }
        let h = self.features(prompt);
        let x = self.dropped(&h, Some(dropout_seed));
        let s = self.scaling();
        let (a, b) = self.split_params();
        let ax: Vec<f64> = (0..rank).map(|j| dot(&a[j * dim..(j + 1) * dim], &x)).collect();
        let mut bt_g = vec![0.0; rank];
        for (v, g) in grad_logits.iter().enumerate().filter(|(_, g)| **g != 0.0) {
            for j in 0..rank {
                bt_g[j] += b[v * rank + j] * g;
            }
        }
        let (ga, gb) = self.grads.split_at_mut(rank * dim);
        for (v, g) in grad_logits.iter().enumerate().filter(|(_, g)| **g != 0.0) {
            for j in 0..rank {
                gb[v * rank + j] += s * g * ax[j];
            }
        }
        for j in 0..rank {
            let c = s * bt_g[j];
            if c != 0.0 {
                for (gi, xi) in ga[j * dim..(j + 1) * dim].iter_mut().zip(&x) {
                    *gi += c * xi;
                }
            }
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    fn params_and_grads(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.params, &self.grads)
    }

    fn adapter_params(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn load_adapter_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::validation(format!(
                "expected {} adapter parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn base_weights_digest(&self) -> String {
        let mut bytes: Vec<u8> = self.base.iter().flat_map(|w| w.to_le_bytes()).collect();
        for (name, v) in &self.knowledge {
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend(v.iter().flat_map(|w| w.to_le_bytes()));
        }
        sha256_hex(&bytes)
    }

    fn adapter_checkpoint(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(EmbeddingCheckpoint {
            kind: BackendKind::ToyEmbedding,
            config: self.config.clone(),
            params: self.params.clone(),
        })?)
    }

    fn restore_checkpoint(&mut self, checkpoint: &serde_json::Value) -> Result<()> {
        let ckpt: EmbeddingCheckpoint = serde_json::from_value(checkpoint.clone())?;
        if ckpt.kind != BackendKind::ToyEmbedding || ckpt.config != self.config {
            return Err(Error::Backend("checkpoint was produced by a differently configured backend".into()));
        }
        self.load_adapter_params(&ckpt.params)
    }
}
