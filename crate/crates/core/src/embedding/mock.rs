use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingProvider, HiddenStates, ProviderKind, Result};
use crate::synthetic::{ADD_OP, CONGESTION_TOKEN, MUL_OP, TIMING_TRIGGER};

pub const MIN_MOCK_K: usize = 8;
/// Emitted for text with no tokens, with mask `[1]`.
pub const PAD_TOKEN: &str = "<pad>";
/// Tokens whose indicator coordinate is set to 1.0; token `i` owns coordinate `i`.
/// Coordinates `INDICATOR_TOKENS.len()..MIN_MOCK_K` are reserved and zero.
pub const INDICATOR_TOKENS: [&str; 4] = [CONGESTION_TOKEN, TIMING_TRIGGER, MUL_OP, ADD_OP];

fn token_vector(token: &str, k: usize, seed: u64, out: &mut Vec<f32>) {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let start = out.len();
    out.resize(start + k, 0.0);
    if let Some(i) = INDICATOR_TOKENS.iter().position(|t| *t == token) {
        out[start + i] = 1.0;
    }
    for v in &mut out[start + MIN_MOCK_K..start + k] {
        *v = rng.gen_range(-1.0f32..1.0);
    }
}

/// Whitespace-tokenized stand-in for an LLM: each token's row is a
/// pseudo-random function of (token, seed), plus indicator coordinates for
/// the planted synthetic tokens. Panics if `k < MIN_MOCK_K`.
pub fn mock_hidden_states(text: &str, k: usize, seed: u64) -> HiddenStates {
    assert!(k >= MIN_MOCK_K, "mock width must be at least {MIN_MOCK_K}");
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        tokens.push(PAD_TOKEN);
    }
    let mut matrix = Vec::with_capacity(tokens.len() * k);
    for t in &tokens {
        token_vector(t, k, seed, &mut matrix);
    }
    let mask = vec![1u8; tokens.len()];
    HiddenStates::new(k, matrix, mask).expect("mock states are well formed")
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    k: usize,
    seed: u64,
}

impl MockProvider {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        if k < MIN_MOCK_K {
            return Err(EmbeddingError::Shape(format!(
                "mock provider needs k >= {MIN_MOCK_K}, got {k}"
            )));
        }
        Ok(Self { k, seed })
    }
}

impl EmbeddingProvider for MockProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn k(&self) -> usize {
        self.k
    }

    fn identity(&self) -> String {
        format!("mock:k={}:seed={}", self.k, self.seed)
    }

    fn hidden_states(&self, text: &str) -> Result<HiddenStates> {
        Ok(mock_hidden_states(text, self.k, self.seed))
    }
}
