use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_context, greedy_generate, Backend, BackendDescriptor, BackendKind, ToyTokenizer, TrainableBackend};
use crate::error::{Error, Result};
use crate::prompting::PromptTemplate;
use crate::util::sha256_hex;

/// Trainable lookup model: one full-vocabulary logit row per
/// (displayed country, question text). Unknown keys score all-zero logits.
///
/// Training each row is a convex problem in its own logits, which makes this
/// backend the reference optimum for trainer tests.
#[derive(Debug, Clone)]
pub struct TableBackend {
    tokenizer: ToyTokenizer,
    template: PromptTemplate,
    keys: BTreeMap<(String, String), usize>,
    params: Vec<f64>,
    grads: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableCheckpoint {
    kind: BackendKind,
    vocab_size: usize,
    keys: Vec<(String, String)>,
    params: Vec<f64>,
}

impl TableBackend {
    pub fn new(template: PromptTemplate) -> Self {
        Self {
            tokenizer: ToyTokenizer::default(),
            template,
            keys: BTreeMap::new(),
            params: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn key(&self, prompt: &str) -> Option<(String, String)> {
        self.template.parse_rendered(prompt).map(|p| (p.country, p.question))
    }

    fn row(&self, prompt: &str) -> Option<usize> {
        self.key(prompt).and_then(|k| self.keys.get(&k).copied())
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    /// Sets a row's logits directly, registering the key if needed.
    pub fn set_row(&mut self, prompt: &str, logits: &[f64]) -> Result<()> {
        let vocab = self.vocab_size();
        if logits.len() != vocab {
            return Err(Error::validation(format!("row needs {vocab} logits, got {}", logits.len())));
        }
        self.prepare(&[prompt])?;
        let row = self.row(prompt).expect("registered");
        self.params[row * vocab..(row + 1) * vocab].copy_from_slice(logits);
        Ok(())
    }
}

impl Backend for TableBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::ToyTable,
            identifier: "toy-table".into(),
            trainable: true,
            deterministic: true,
            flags: BTreeMap::from([("rows".to_string(), self.rows().to_string())]),
        }
    }

    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn context_length(&self) -> usize {
        usize::MAX
    }

    fn label_token_id(&self, label: &str) -> Result<u32> {
        self.tokenizer.label_token(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn decode_token(&self, id: u32) -> Option<String> {
        self.tokenizer.decode(id).map(str::to_string)
    }

    fn next_token_logits(&self, prompt: &str) -> Result<Vec<f64>> {
        check_context(self.tokenizer.count(prompt), self.context_length(), prompt)?;
        let vocab = self.vocab_size();
        Ok(match self.row(prompt) {
            Some(r) => self.params[r * vocab..(r + 1) * vocab].to_vec(),
            None => vec![0.0; vocab],
        })
    }

    fn generate_text(&self, prompt: &str, max_new_tokens: usize) -> Result<String> {
        greedy_generate(self, prompt, max_new_tokens)
    }

    fn as_trainable(&mut self) -> Option<&mut dyn TrainableBackend> {
        Some(self)
    }
}

impl TrainableBackend for TableBackend {
    fn prepare(&mut self, prompts: &[&str]) -> Result<()> {
        let vocab = self.vocab_size();
        for prompt in prompts {
            let key = self
                .key(prompt)
                .ok_or_else(|| Error::Backend("table backend cannot parse training prompt".into()))?;
            if !self.keys.contains_key(&key) {
                self.keys.insert(key, self.keys.len());
                self.params.extend(std::iter::repeat(0.0).take(vocab));
                self.grads.extend(std::iter::repeat(0.0).take(vocab));
            }
        }
        Ok(())
    }

    fn forward_train(&self, prompt: &str, _dropout_seed: u64) -> Result<Vec<f64>> {
        self.next_token_logits(prompt)
    }

    fn backward(&mut self, prompt: &str, _dropout_seed: u64, grad_logits: &[f64]) -> Result<()> {
        let vocab = self.vocab_size();
        let row = self
            .row(prompt)
            .ok_or_else(|| Error::Backend("backward on an unregistered table row".into()))?;
        for (g, d) in self.grads[row * vocab..(row + 1) * vocab].iter_mut().zip(grad_logits) {
            *g += d;
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
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn base_weights_digest(&self) -> String {
        sha256_hex(format!("toy-table/vocab={}", self.vocab_size()).as_bytes())
    }

    fn adapter_checkpoint(&self) -> Result<serde_json::Value> {
        let mut keys = vec![(String::new(), String::new()); self.keys.len()];
        for (k, &i) in &self.keys {
            keys[i] = k.clone();
        }
        Ok(serde_json::to_value(TableCheckpoint {
            kind: BackendKind::ToyTable,
            vocab_size: self.vocab_size(),
            keys,
            params: self.params.clone(),
        })?)
    }

    fn restore_checkpoint(&mut self, checkpoint: &serde_json::Value) -> Result<()> {
        let ckpt: TableCheckpoint = serde_json::from_value(checkpoint.clone())?;
        if ckpt.kind != BackendKind::ToyTable || ckpt.vocab_size != self.vocab_size() {
            return Err(Error::Backend("checkpoint does not match a toy table backend".into()));
        }
        if ckpt.params.len() != ckpt.keys.len() * ckpt.vocab_size {
            return Err(Error::Backend("table checkpoint has inconsistent sizes".into()));
        }
        self.keys = ckpt.keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        self.grads = vec![0.0; ckpt.params.len()];
        self.params = ckpt.params;
        Ok(())
    }
}
