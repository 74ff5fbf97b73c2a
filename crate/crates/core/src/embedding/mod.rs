//! Token hidden states and masked mean pooling into fixed-size embeddings.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LineRecord, ModuleSpan};

mod mock;
mod remote;
mod store;

pub use mock::{mock_hidden_states, MockProvider, INDICATOR_TOKENS, MIN_MOCK_K, PAD_TOKEN};
pub use remote::{RemoteInfo, RemoteProvider};
pub use store::{parse_store, write_store, FileStoreProvider, StoreRecord, STORE_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("empty attention")]
    EmptyAttention,
    #[error("hidden states shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite hidden state value")]
    NonFinite,
    #[error("no stored hidden states for text hash {0}")]
    Missing(String),
    #[error("remote provider: {0}")]
    Remote(String),
    #[error("embedding store {path}: {reason}")]
    Store { path: String, reason: String },
    #[error("{unit}: {source}")]
    Unit {
        unit: UnitRef,
        #[source]
        source: Box<EmbeddingError>,
    },
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Token-level hidden states served by a provider, `n × k` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    k: usize,
    matrix: Vec<f32>,
    mask: Vec<u8>,
}

impl HiddenStates {
    pub fn new(k: usize, matrix: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        if k == 0 {
            return Err(EmbeddingError::Shape("k must be positive".into()));
        }
        if matrix.len() != mask.len() * k {
            return Err(EmbeddingError::Shape(format!(
                "{} values for {} tokens of width {k}",
                matrix.len(),
                mask.len()
            )));
        }
        if let Some(m) = mask.iter().find(|&&m| m > 1) {
            return Err(EmbeddingError::Shape(format!("mask entry {m} not in {{0,1}}")));
        }
        if !mask.contains(&1) {
            return Err(EmbeddingError::EmptyAttention);
        }
        Ok(Self { k, matrix, mask })
    }

    /// Build without checking that some token is attended; pooling will
    /// report `EmptyAttention` instead.
    pub fn new_unchecked_attention(k: usize, matrix: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        match Self::new(k, matrix.clone(), mask.clone()) {
            Err(EmbeddingError::EmptyAttention) => Ok(Self { k, matrix, mask }),
            other => other,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_tokens(&self) -> usize {
        self.mask.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.k..(i + 1) * self.k]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }
}

/// Per-coordinate mean of the attended rows, accumulated in double precision.
pub fn masked_mean_pool(hs: &HiddenStates) -> Result<Vec<f64>> {
    let mut sum = vec![0.0f64; hs.k];
    let mut count = 0u64;
    for (i, &m) in hs.mask.iter().enumerate() {
        if m == 0 {
            continue;
        }
        count += 1;
        for (acc, &v) in sum.iter_mut().zip(hs.row(i)) {
            *acc += v as f64;
        }
    }
    if count == 0 {
        return Err(EmbeddingError::EmptyAttention);
    }
    let denom = count as f64;
    let out: Vec<f64> = sum.into_iter().map(|s| s / denom).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(out)
}

/// Pooled vector rounded to the 32-bit storage precision.
pub fn pool_f32(hs: &HiddenStates) -> Result<Vec<f32>> {
    Ok(masked_mean_pool(hs)?.into_iter().map(|v| v as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    File,
    Remote,
}

/// Source of token hidden states. Implementations must be deterministic in
/// the input text and callable from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn k(&self) -> usize;
    /// Model name/version recorded in bundles.
    fn identity(&self) -> String;
    fn hidden_states(&self, text: &str) -> Result<HiddenStates>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Module,
    Line,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub design_id: String,
    pub module_id: String,
    pub line_no: Option<usize>,
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.design_id, self.module_id)?;
        if let Some(l) = self.line_no {
            write!(f, ":{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub unit_kind: UnitKind,
    pub unit_ref: UnitRef,
}

pub fn text_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn pool_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<f32>> {
    let hs = provider.hidden_states(text)?;
    if hs.k() != provider.k() {
        return Err(EmbeddingError::Shape(format!(
            "provider declared k={} but served k={}",
            provider.k(),
            hs.k()
        )));
    }
    pool_f32(&hs)
}

fn attach(unit: &UnitRef) -> impl FnOnce(EmbeddingError) -> EmbeddingError + '_ {
    move |e| EmbeddingError::Unit {
        unit: unit.clone(),
        source: Box::new(e),
    }
}

pub fn embed_module(provider: &dyn EmbeddingProvider, module: &ModuleSpan) -> Result<Embedding> {
    let unit_ref = UnitRef {
        design_id: module.design_id.clone(),
        module_id: module.module_id.clone(),
        line_no: None,
    };
    let vector = pool_text(provider, &module.text).map_err(attach(&unit_ref))?;
    Ok(Embedding {
        vector,
        unit_kind: UnitKind::Module,
        unit_ref,
    })
}

pub fn embed_line(provider: &dyn EmbeddingProvider, line: &LineRecord) -> Result<Embedding> {
    let unit_ref = UnitRef {
        design_id: line.design_id.clone(),
        module_id: line.module_id.clone(),
        line_no: Some(line.line_no),
    };
    let vector = pool_text(provider, &line.text).map_err(attach(&unit_ref))?;
    Ok(Embedding {
        vector,
        unit_kind: UnitKind::Line,
        unit_ref,
    })
}

/// Provider wrapper with an optional content-addressed cache of pooled
/// vectors keyed by (provider identity, SHA-256 of text).
pub struct Embedder<'a> {
    provider: &'a dyn EmbeddingProvider,
    identity: String,
    cache: Option<Mutex<HashMap<(String, [u8; 32]), Arc<Vec<f32>>>>>,
}

impl<'a> Embedder<'a> {
    pub fn new(provider: &'a dyn EmbeddingProvider) -> Self {
        Self {
            identity: provider.identity(),
            provider,
            cache: None,
        }
    }

    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider
    }

    pub fn cached_entries(&self) -> usize {
        self.cache
            .as_ref()
            .map_or(0, |c| c.lock().expect("cache lock").len())
    }

    fn pooled(&self, text: &str) -> Result<Arc<Vec<f32>>> {
        let Some(cache) = &self.cache else {
            return pool_text(self.provider, text).map(Arc::new);
        };
        let key = (self.identity.clone(), text_hash(text));
        if let Some(v) = cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(pool_text(self.provider, text)?);
        cache.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }

    pub fn embed_module(&self, module: &ModuleSpan) -> Result<Embedding> {
        let unit_ref = UnitRef {
            design_id: module.design_id.clone(),
            module_id: module.module_id.clone(),
            line_no: None,
        };
        let vector = self.pooled(&module.text).map_err(attach(&unit_ref))?;
        Ok(Embedding {
            vector: vector.as_ref().clone(),
            unit_kind: UnitKind::Module,
            unit_ref,
        })
    }

    pub fn embed_line(&self, line: &LineRecord) -> Result<Embedding> {
        let unit_ref = UnitRef {
            design_id: line.design_id.clone(),
            module_id: line.module_id.clone(),
            line_no: Some(line.line_no),
        };
        let vector = self.pooled(&line.text).map_err(attach(&unit_ref))?;
        Ok(Embedding {
            vector: vector.as_ref().clone(),
            unit_kind: UnitKind::Line,
            unit_ref,
        })
    }
}
