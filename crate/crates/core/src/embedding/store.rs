//! Content-addressed file store of precomputed hidden states.
//!
//! Each record: 16-byte magic, `u32` k, `u32` n, `n × k` little-endian
//! `f32` row-major, `n` mask bytes, 32-byte SHA-256 of the unit text.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{text_hash, EmbeddingError, EmbeddingProvider, HiddenStates, ProviderKind, Result};

pub const STORE_MAGIC: [u8; 16] = *b"LOCQEMB1\0\0\0\0\0\0\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub key: [u8; 32],
    pub states: HiddenStates,
}

impl StoreRecord {
    pub fn for_text(text: &str, states: HiddenStates) -> Self {
        Self {
            key: text_hash(text),
            states,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&STORE_MAGIC);
        out.extend_from_slice(&(self.states.k() as u32).to_le_bytes());
        out.extend_from_slice(&(self.states.n_tokens() as u32).to_le_bytes());
        for v in self.states.matrix() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.states.mask());
        out.extend_from_slice(&self.key);
    }
}

pub fn write_store<W: Write>(mut writer: W, records: &[StoreRecord]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for r in records {
        buf.clear();
        r.encode(&mut buf);
        writer.write_all(&buf)?;
    }
    writer.flush()
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Option<&'a [u8]> {
    let s = bytes.get(*pos..pos.checked_add(n)?)?;
    *pos += n;
    Some(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Option<u32> {
    take(bytes, pos, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Parse every record. Records with an all-zero mask are kept; pooling them
/// reports `EmptyAttention`.
pub fn parse_store(bytes: &[u8]) -> std::result::Result<Vec<StoreRecord>, String> {
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let at = pos;
        let bad = |what: &str| format!("record at byte {at}: {what}");
        let magic = take(bytes, &mut pos, 16).ok_or_else(|| bad("truncated magic"))?;
        if magic != STORE_MAGIC {
            return Err(bad("bad magic"));
        }
        let k = read_u32(bytes, &mut pos).ok_or_else(|| bad("truncated header"))? as usize;
        let n = read_u32(bytes, &mut pos).ok_or_else(|| bad("truncated header"))? as usize;
        let len = n.checked_mul(k).and_then(|v| v.checked_mul(4));
        let raw = len
            .and_then(|len| take(bytes, &mut pos, len))
            .ok_or_else(|| bad("truncated matrix"))?;
        let matrix = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mask = take(bytes, &mut pos, n)
            .ok_or_else(|| bad("truncated mask"))?
            .to_vec();
        let key: [u8; 32] = take(bytes, &mut pos, 32)
            .ok_or_else(|| bad("truncated key"))?
            .try_into()
            .unwrap();
        let states = HiddenStates::new_unchecked_attention(k, matrix, mask)
            .map_err(|e| bad(&e.to_string()))?;
        out.push(StoreRecord { key, states });
    }
    Ok(out)
}

#[derive(Debug)]
pub struct FileStoreProvider {
    k: usize,
    identity: String,
    records: HashMap<[u8; 32], HiddenStates>,
}

impl FileStoreProvider {
    /// Load a store file. The identity defaults to a digest of the file.
    pub fn open(path: &Path, identity: Option<String>) -> Result<Self> {
        let store_err = |reason: String| EmbeddingError::Store {
            path: path.display().to_string(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| store_err(e.to_string()))?;
        let records = parse_store(&bytes).map_err(store_err)?;
        let k = records.first().map(|r| r.states.k()).ok_or_else(|| store_err("empty store".into()))?;
        if let Some(r) = records.iter().find(|r| r.states.k() != k) {
            return Err(store_err(format!(
                "mixed widths {k} and {} in one store",
                r.states.k()
            )));
        }
        let identity = identity.unwrap_or_else(|| {
            let digest = Sha256::digest(&bytes);
            format!("file:k={k}:{}", hex::encode(&digest[..8]))
        });
        Ok(Self {
            k,
            identity,
            records: records.into_iter().map(|r| (r.key, r.states)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<&HiddenStates> {
        self.records.get(key)
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }

    fn k(&self) -> usize {
        self.k
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn hidden_states(&self, text: &str) -> Result<HiddenStates> {
        let key = text_hash(text);
        self.records
            .get(&key)
            .cloned()
            .ok_or_else(|| EmbeddingError::Missing(hex::encode(key)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{masked_mean_pool, mock_hidden_states};

    #[test]
    fn store_returns_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        let texts = ["module m ;", "assign a = b ;", ""];
        let records: Vec<_> = texts
            .iter()
            .map(|t| StoreRecord::for_text(t, mock_hidden_states(t, 16, 2)))
            .collect();
        write_store(std::fs::File::create(&path).unwrap(), &records).unwrap();

        let store = FileStoreProvider::open(&path, None).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.k(), 16);
        for t in texts {
            let got = store.hidden_states(t).unwrap();
            let want = mock_hidden_states(t, 16, 2);
            let bits = |h: &HiddenStates| h.matrix().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&got), bits(&want));
            assert_eq!(got.mask(), want.mask());
        }
        match store.hidden_states("unknown") {
            Err(EmbeddingError::Missing(h)) => assert_eq!(h, hex::encode(text_hash("unknown"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn record_layout() {
        let hs = HiddenStates::new(2, vec![1.0, -2.0], vec![1]).unwrap();
        let mut buf = Vec::new();
        StoreRecord::for_text("t", hs).encode(&mut buf);
        assert_eq!(buf.len(), 16 + 4 + 4 + 8 + 1 + 32);
        assert_eq!(&buf[..8], b"LOCQEMB1");
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1u32.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf[32], 1);
        assert_eq!(&buf[33..], &text_hash("t"));
    }

    #[test]
    fn all_padding_record_fails_pooling() {
        let hs = HiddenStates::new_unchecked_attention(2, vec![1.0, 2.0], vec![0]).unwrap();
        let mut buf = Vec::new();
        StoreRecord::for_text("pad", hs).encode(&mut buf);
        let parsed = parse_store(&buf).unwrap();
        assert!(matches!(
            masked_mean_pool(&parsed[0].states),
            Err(EmbeddingError::EmptyAttention)
        ));
    }

    #[test]
    fn truncated_store_rejected() {
        let hs = HiddenStates::new(2, vec![1.0, 2.0], vec![1]).unwrap();
        let mut buf = Vec::new();
        StoreRecord::for_text("t", hs).encode(&mut buf);
        buf.pop();
        assert!(parse_store(&buf).unwrap_err().contains("truncated key"));
    }
}
