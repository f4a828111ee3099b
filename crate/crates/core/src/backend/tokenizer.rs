/// Character-level vocabulary shared by the toy and mock backends.
///
/// Id 0 is the unknown token. Every other token is a single character, so
/// the first token of a label is its first character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyTokenizer {
    vocab: Vec<String>,
}

const SYMBOLS: &str = "()[]{}:;,.!?\"'%/-_+= \n";

impl Default for ToyTokenizer {
    fn default() -> Self {
        let mut vocab = vec!["<unk>".to_string()];
        vocab.extend(('A'..='Z').map(String::from));
        vocab.extend(('a'..='z').map(String::from));
        vocab.extend(('0'..='9').map(String::from));
        vocab.extend(SYMBOLS.chars().map(String::from));
        Self { vocab }
    }
}

impl ToyTokenizer {
    pub const UNKNOWN: u32 = 0;

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        self.vocab.iter().position(|v| v == piece).map(|i| i as u32)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| self.token_id(c.encode_utf8(&mut buf)).unwrap_or(Self::UNKNOWN))
            .collect()
    }

    /// Number of tokens `encode` would produce.
    pub fn count(&self, text: &str) -> usize {
        text.chars().count()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// First token of `label` when rendered right after an opening parenthesis.
    pub fn label_token(&self, label: &str) -> Option<u32> {
        let tokens = self.encode(&format!("({label}"));
        match tokens.get(1) {
            Some(&id) if id != Self::UNKNOWN => Some(id),
            _ => None,
        }
    }
}
