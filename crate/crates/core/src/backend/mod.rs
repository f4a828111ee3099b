//! Anything that can score a first token: mock fixtures and the trainable toy models.

mod embedding;
mod mock;
mod table;
mod tokenizer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use embedding::{EmbeddingBackend, EmbeddingConfig};
pub use mock::{MockBackend, MockFixture};
pub use table::TableBackend;
pub use tokenizer::ToyTokenizer;

use crate::alignment::Optimizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RealLm,
    Mock,
    ToyTable,
    ToyEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub identifier: String,
    pub trainable: bool,
    pub deterministic: bool,
    /// Inference flags and other settings that affect outputs.
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn vocab_size(&self) -> usize;

    fn context_length(&self) -> usize;

    /// Token id of the first token of `label` rendered right after `(`.
    fn label_token_id(&self, label: &str) -> Result<u32>;

    fn decode_token(&self, id: u32) -> Option<String>;

    /// Logits for the token following `prompt`, over the full vocabulary.
    fn next_token_logits(&self, prompt: &str) -> Result<Vec<f64>>;

    /// Greedy continuation of `prompt`.
    fn generate_text(&self, prompt: &str, max_new_tokens: usize) -> Result<String>;

    fn as_trainable(&mut self) -> Option<&mut dyn TrainableBackend> {
        None
    }
}

/// A backend whose adapter parameters can be optimized. Base weights stay frozen.
pub trait TrainableBackend: Backend {
    /// Registers prompts seen during training (table models allocate rows here).
    fn prepare(&mut self, _prompts: &[&str]) -> Result<()> {
        Ok(())
    }

    /// Training-mode forward pass; `dropout_seed` fixes the dropout mask.
    fn forward_train(&self, prompt: &str, dropout_seed: u64) -> Result<Vec<f64>>;

    /// Accumulates adapter gradients for `d loss / d logits` under the same mask.
    fn backward(&mut self, prompt: &str, dropout_seed: u64, grad_logits: &[f64]) -> Result<()>;

    fn zero_grad(&mut self);

    fn params_and_grads(&mut self) -> (&mut [f64], &[f64]);

    fn adapter_params(&self) -> Vec<f64>;

    fn load_adapter_params(&mut self, params: &[f64]) -> Result<()>;

    /// Digest of the frozen base weights.
    fn base_weights_digest(&self) -> String;

    /// Adapter checkpoint in the backend's native JSON format.
    fn adapter_checkpoint(&self) -> Result<serde_json::Value>;

    fn restore_checkpoint(&mut self, checkpoint: &serde_json::Value) -> Result<()>;
}

/// Applies one optimizer update to the backend's adapter parameters.
pub fn gradient_step(backend: &mut dyn Backend, optimizer: &mut dyn Optimizer) -> Result<()> {
    let identifier = backend.descriptor().identifier;
    let trainable = backend
        .as_trainable()
        .ok_or_else(|| Error::Capability(format!("backend {identifier:?} is not trainable")))?;
    let (params, grads) = trainable.params_and_grads();
    optimizer.step(params, grads);
    Ok(())
}

pub(crate) fn check_context(tokens: usize, limit: usize, prompt: &str) -> Result<()> {
    if tokens > limit {
        let head: String = prompt.chars().take(48).collect();
        return Err(Error::ContextOverflow { record: format!("{head:?}..."), length: tokens, limit });
    }
    Ok(())
}

/// Greedy decoding by repeated next-token argmax.
pub(crate) fn greedy_generate<B: Backend + ?Sized>(
    backend: &B,
    prompt: &str,
    max_new_tokens: usize,
) -> Result<String> {
    let mut text = prompt.to_string();
    let mut generated = String::new();
    for _ in 0..max_new_tokens {
        let logits = backend.next_token_logits(&text)?;
        let id = crate::metrics::argmax(&logits) as u32;
        let piece = backend.decode_token(id).unwrap_or_default();
        text.push_str(&piece);
        generated.push_str(&piece);
    }
    Ok(generated)
}
