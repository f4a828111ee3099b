use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_context, Backend, BackendDescriptor, BackendKind, ToyTokenizer};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// Fixture entry keyed either by the literal prompt or its SHA-256 hex digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptKey {
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub prompt_sha256: Option<String>,
}

impl PromptKey {
    fn digest(&self) -> Result<String> {
        match (&self.prompt, &self.prompt_sha256) {
            (Some(p), _) => Ok(sha256_hex(p.as_bytes())),
            (None, Some(h)) => Ok(h.to_lowercase()),
            (None, None) => Err(Error::Backend("fixture entry needs `prompt` or `prompt_sha256`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsFixture {
    #[serde(flatten)]
    pub key: PromptKey,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyFixture {
    #[serde(flatten)]
    pub key: PromptKey,
    pub text: String,
}

/// JSON fixture describing a mock backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub identifier: Option<String>,
    #[serde(default)]
    pub context_length: Option<usize>,
    /// Overrides the tokenizer's label token ids.
    #[serde(default)]
    pub label_tokens: BTreeMap<String, u32>,
    #[serde(default)]
    pub logits: Vec<LogitsFixture>,
    #[serde(default)]
    pub default_logits: Option<Vec<f64>>,
    #[serde(default)]
    pub replies: Vec<ReplyFixture>,
    #[serde(default)]
    pub default_reply: Option<String>,
}

/// Deterministic backend that replays stored logits and replies.
#[derive(Debug, Clone)]
pub struct MockBackend {
    identifier: String,
    tokenizer: ToyTokenizer,
    context_length: usize,
    label_tokens: BTreeMap<String, u32>,
    logits: HashMap<String, Vec<f64>>,
    default_logits: Option<Vec<f64>>,
    replies: HashMap<String, String>,
    default_reply: Option<String>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self {
            identifier: "mock".into(),
            tokenizer: ToyTokenizer::default(),
            context_length: 4096,
            label_tokens: BTreeMap::new(),
            logits: HashMap::new(),
            default_logits: None,
            replies: HashMap::new(),
            default_reply: None,
        }
    }
}

impl MockBackend {
    pub fn from_fixture(fixture: MockFixture) -> Result<Self> {
        let mut backend = Self::default();
        if let Some(id) = fixture.identifier {
            backend.identifier = id;
        }
        if let Some(n) = fixture.context_length {
            backend.context_length = n;
        }
        backend.label_tokens = fixture.label_tokens;
        let vocab = backend.vocab_size();
        for entry in fixture.logits {
            if entry.values.len() != vocab {
                return Err(Error::Backend(format!(
                    "fixture logits have {} entries, vocabulary has {vocab}",
                    entry.values.len()
                )));
            }
            backend.logits.insert(entry.key.digest()?, entry.values);
        }
        if let Some(d) = &fixture.default_logits {
            if d.len() != vocab {
                return Err(Error::Backend(format!("default logits have {} entries, vocabulary has {vocab}", d.len())));
            }
        }
        backend.default_logits = fixture.default_logits;
        for r in fixture.replies {
            backend.replies.insert(r.key.digest()?, r.text);
        }
        backend.default_reply = fixture.default_reply;
        Ok(backend)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        let mut backend = Self::from_fixture(serde_json::from_str(&text)?)?;
        if backend.identifier == "mock" {
            backend.identifier = path.display().to_string();
        }
        Ok(backend)
    }

    pub fn with_logits(mut self, prompt: &str, logits: Vec<f64>) -> Self {
        self.logits.insert(sha256_hex(prompt.as_bytes()), logits);
        self
    }

    pub fn with_default_logits(mut self, logits: Vec<f64>) -> Self {
        self.default_logits = Some(logits);
        self
    }

    pub fn with_reply(mut self, prompt: &str, text: &str) -> Self {
        self.replies.insert(sha256_hex(prompt.as_bytes()), text.to_string());
        self
    }

    pub fn with_default_reply(mut self, text: &str) -> Self {
        self.default_reply = Some(text.to_string());
        self
    }

    pub fn with_label_token(mut self, label: &str, id: u32) -> Self {
        self.label_tokens.insert(label.to_string(), id);
        self
    }

    pub fn with_context_length(mut self, n: usize) -> Self {
        self.context_length = n;
        self
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Mock,
            identifier: self.identifier.clone(),
            trainable: false,
            deterministic: true,
            flags: BTreeMap::new(),
        }
    }

    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn context_length(&self) -> usize {
        self.context_length
    }

    fn label_token_id(&self, label: &str) -> Result<u32> {
        if let Some(id) = self.label_tokens.get(label) {
            return Ok(*id);
        }
        self.tokenizer.label_token(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn decode_token(&self, id: u32) -> Option<String> {
        self.tokenizer.decode(id).map(str::to_string)
    }

    fn next_token_logits(&self, prompt: &str) -> Result<Vec<f64>> {
        check_context(self.tokenizer.count(prompt), self.context_length, prompt)?;
        let digest = sha256_hex(prompt.as_bytes());
        self.logits
            .get(&digest)
            .or(self.default_logits.as_ref())
            .cloned()
            .ok_or_else(|| Error::Backend(format!("mock has no logits for prompt {digest}")))
    }

    fn generate_text(&self, prompt: &str, max_new_tokens: usize) -> Result<String> {
        check_context(self.tokenizer.count(prompt), self.context_length, prompt)?;
        let digest = sha256_hex(prompt.as_bytes());
        let reply = self
            .replies
            .get(&digest)
            .or(self.default_reply.as_ref())
            .ok_or_else(|| Error::Backend(format!("mock has no reply for prompt {digest}")))?;
        Ok(reply.chars().take(max_new_tokens).collect())
    }
}
