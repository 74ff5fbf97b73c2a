//! Single-file model bundle.
//!
//! Layout: `LOCQBND1`, `u32` manifest length, manifest JSON, payload
//! (autoencoder tensors as little-endian `f32`, then head JSON), and a
//! SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::Task;
use crate::heads::Head;
use crate::reducer::{Autoencoder, ReducerConfig};

pub const BUNDLE_MAGIC: [u8; 8] = *b"LOCQBND1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("not a model bundle (bad magic)")]
    Magic,
    #[error("bundle truncated")]
    Truncated,
    #[error("bundle hash mismatch: file is corrupt or modified")]
    Hash,
    #[error("payload hash does not match manifest")]
    PayloadHash,
    #[error("unsupported bundle format version {0}")]
    Version(u32),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("tensor layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Reducer(#[from] crate::reducer::ReducerError),
}

pub type Result<T> = std::result::Result<T, BundleError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRecord {
    pub kind: String,
    pub identity: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub reducer: u64,
    pub head: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Seconds since the epoch; from `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
    pub provider: ProviderRecord,
    pub task: Task,
    pub head_type: String,
    pub input_dim: usize,
    pub d: usize,
    pub p: usize,
    pub threshold: f64,
    pub seeds: Seeds,
    /// Train share of the line-level split, with `seeds.split`.
    pub train_fraction: f64,
    pub reducer: ReducerConfig,
    pub tensors: Vec<TensorEntry>,
    pub head_offset: usize,
    pub head_len: usize,
    pub payload_sha256: String,
    /// Pipeline configuration as given to `train`.
    pub config: serde_json::Value,
    pub train_summary: serde_json::Value,
}

/// Fields that describe a bundle; layout fields are filled in on save.
#[derive(Debug, Clone)]
pub struct BundleMeta {
    pub provider: ProviderRecord,
    pub task: Task,
    pub p: usize,
    pub threshold: f64,
    pub seeds: Seeds,
    pub train_fraction: f64,
    pub reducer: ReducerConfig,
    pub config: serde_json::Value,
    pub train_summary: serde_json::Value,
    pub created_unix: u64,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub autoencoder: Autoencoder,
    pub head: Head,
}

/// `SOURCE_DATE_EPOCH` if set and valid, otherwise the current time.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

fn head_type(head: &Head) -> &'static str {
    match head {
        Head::Gbdt(_) => "gbdt",
        Head::Logistic(_) => "logistic",
    }
}

impl ModelBundle {
    pub fn new(meta: BundleMeta, autoencoder: Autoencoder, head: Head) -> Result<Self> {
        let (payload, tensors, head_offset) = encode_payload(&autoencoder, &head)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            created_unix: meta.created_unix,
            provider: meta.provider,
            task: meta.task,
            head_type: head_type(&head).to_owned(),
            input_dim: autoencoder.input_dim(),
            d: autoencoder.latent_dim(),
            p: meta.p,
            threshold: meta.threshold,
            seeds: meta.seeds,
            train_fraction: meta.train_fraction,
            reducer: meta.reducer,
            tensors,
            head_offset,
            head_len: payload.len() - head_offset,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            config: meta.config,
            train_summary: meta.train_summary,
        };
        Ok(Self {
            manifest,
            autoencoder,
            head,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (payload, _, _) = encode_payload(&self.autoencoder, &self.head)?;
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(12 + manifest.len() + payload.len() + 32);
        out.extend_from_slice(&BUNDLE_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || bytes[..8] != BUNDLE_MAGIC {
            return Err(BundleError::Magic);
        }
        if bytes.len() < 12 + 32 {
            return Err(BundleError::Truncated);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(BundleError::Hash);
        }
        let mlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        if body.len() < 12 + mlen {
            return Err(BundleError::Truncated);
        }
        let manifest: Manifest = serde_json::from_slice(&body[12..12 + mlen])?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(BundleError::Version(manifest.format_version));
        }
        let payload = &body[12 + mlen..];
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(BundleError::PayloadHash);
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let len = t.shape.iter().product::<usize>() * 4;
            let raw = payload
                .get(t.offset..t.offset + len)
                .ok_or_else(|| BundleError::Layout(format!("{} out of bounds", t.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((t.name.clone(), t.shape.clone(), data));
        }
        let autoencoder = Autoencoder::from_tensors(manifest.input_dim, &manifest.reducer, &tensors)?;
        let head_bytes = payload
            .get(manifest.head_offset..manifest.head_offset + manifest.head_len)
            .ok_or_else(|| BundleError::Layout("head out of bounds".into()))?;
        let head: Head = serde_json::from_slice(head_bytes)?;
        Ok(Self {
            manifest,
            autoencoder,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| BundleError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| BundleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn encode_payload(ae: &Autoencoder, head: &Head) -> Result<(Vec<u8>, Vec<TensorEntry>, usize)> {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, shape, data) in ae.tensors() {
        entries.push(TensorEntry {
            name,
            shape,
            offset: payload.len(),
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let head_offset = payload.len();
    payload.extend_from_slice(&serde_json::to_vec(head)?);
    Ok((payload, entries, head_offset))
}
