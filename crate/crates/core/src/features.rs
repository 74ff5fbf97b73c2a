//! Per-line model inputs: `[line; module]` concatenation, encoding, and the
//! ±p neighbourhood of latents within a module.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::corpus::{split_lines, Dataset, LineKey, ModuleSpan, Split};
use crate::embedding::{Embedder, Embedding, EmbeddingError, UnitKind};
use crate::reducer::{Autoencoder, ReducerError};

pub const TABLE_MAGIC: [u8; 8] = *b"LOCQFTB1";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("expected a {expected:?} embedding, got {got:?}")]
    Kind { expected: UnitKind, got: UnitKind },
    #[error("embedding widths differ: line {line}, module {module}")]
    Width { line: usize, module: usize },
    #[error("line {line} does not belong to module {module}")]
    ModuleMismatch { line: String, module: String },
    #[error("latent {index} has width {got}, expected {expected}")]
    LatentWidth {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {len} latents")]
    Index { index: usize, len: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Reducer(#[from] ReducerError),
    #[error("feature table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// `[e(line); e(module)]`, length `2k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatFeature {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentEmbedding {
    pub vector: Vec<f64>,
    pub unit_ref: LineKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeature {
    pub vector: Vec<f64>,
    pub p: usize,
    pub center_ref: LineKey,
}

pub fn concat_line_module(line: &Embedding, module: &Embedding) -> Result<ConcatFeature> {
    if line.unit_kind != UnitKind::Line {
        return Err(FeatureError::Kind {
            expected: UnitKind::Line,
            got: line.unit_kind,
        });
    }
    if module.unit_kind != UnitKind::Module {
        return Err(FeatureError::Kind {
            expected: UnitKind::Module,
            got: module.unit_kind,
        });
    }
    if line.vector.len() != module.vector.len() {
        return Err(FeatureError::Width {
            line: line.vector.len(),
            module: module.vector.len(),
        });
    }
    if line.unit_ref.module_id != module.unit_ref.module_id
        || line.unit_ref.design_id != module.unit_ref.design_id
    {
        return Err(FeatureError::ModuleMismatch {
            line: line.unit_ref.to_string(),
            module: module.unit_ref.to_string(),
        });
    }
    let vector = line
        .vector
        .iter()
        .chain(&module.vector)
        .map(|&v| v as f64)
        .collect();
    Ok(ConcatFeature { vector })
}

/// Concatenate `z[i-p] … z[i+p]`; neighbours outside the module are zero
/// blocks.
pub fn augment_context(z: &[LatentEmbedding], i: usize, p: usize) -> Result<AugmentedFeature> {
    if i >= z.len() {
        return Err(FeatureError::Index {
            index: i,
            len: z.len(),
        });
    }
    let d = z[0].vector.len();
    if let Some((index, bad)) = z.iter().enumerate().find(|(_, l)| l.vector.len() != d) {
        return Err(FeatureError::LatentWidth {
            index,
            expected: d,
            got: bad.vector.len(),
        });
    }
    let mut vector = Vec::with_capacity((2 * p + 1) * d);
    for offset in 0..=2 * p {
        match (i + offset).checked_sub(p).and_then(|j| z.get(j)) {
            Some(l) => vector.extend_from_slice(&l.vector),
            None => vector.extend(std::iter::repeat(0.0).take(d)),
        }
    }
    Ok(AugmentedFeature {
        vector,
        p,
        center_ref: z[i].unit_ref.clone(),
    })
}

/// Concatenated inputs for every line of one module, in line order.
pub fn module_inputs(module: &ModuleSpan, embedder: &Embedder<'_>) -> Result<Vec<(LineKey, ConcatFeature)>> {
    let e_module = embedder.embed_module(module)?;
    split_lines(module)
        .iter()
        .map(|line| {
            let e_line = embedder.embed_line(line)?;
            Ok((line.key(), concat_line_module(&e_line, &e_module)?))
        })
        .collect()
}

/// Encode a module's concatenated inputs into latents.
pub fn encode_module(
    inputs: &[(LineKey, ConcatFeature)],
    model: &Autoencoder,
) -> Result<Vec<LatentEmbedding>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let width = inputs[0].1.vector.len();
    let mut x = Array2::zeros((inputs.len(), width));
    for (i, (_, c)) in inputs.iter().enumerate() {
        if c.vector.len() != width {
            return Err(ReducerError::Width {
                expected: width,
                got: c.vector.len(),
            }
            .into());
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&c.vector));
    }
    let z = model.encode_batch(x.view())?;
    Ok(inputs
        .iter()
        .zip(z.outer_iter())
        .map(|((key, _), row)| LatentEmbedding {
            vector: row.to_vec(),
            unit_ref: key.clone(),
        })
        .collect())
}

/// Augmented features for every line of a module.
pub fn module_features(
    module: &ModuleSpan,
    embedder: &Embedder<'_>,
    model: &Autoencoder,
    p: usize,
) -> Result<Vec<AugmentedFeature>> {
    let z = encode_module(&module_inputs(module, embedder)?, model)?;
    (0..z.len()).map(|i| augment_context(&z, i, p)).collect()
}

/// Row-major feature matrix with aligned label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub keys: Vec<LineKey>,
    pub width: usize,
    pub data: Vec<f64>,
    pub congestion: Vec<bool>,
    pub timing: Vec<bool>,
    pub wns: Vec<Option<f64>>,
    pub split: Vec<Split>,
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Row indices matching a predicate, in table order.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Vec<usize> {
        (0..self.rows()).filter(|&i| keep(i)).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
            width: self.width,
            data: rows.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
            congestion: rows.iter().map(|&i| self.congestion[i]).collect(),
            timing: rows.iter().map(|&i| self.timing[i]).collect(),
            wns: rows.iter().map(|&i| self.wns[i]).collect(),
            split: rows.iter().map(|&i| self.split[i]).collect(),
        }
    }

    /// Binary dump: magic, `u32` rows, `u32` width, row-major `f32`, then
    /// `u8` congestion, `u8` timing and `f32` WNS (NaN when absent) columns.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4 + self.rows() * 6);
        buf.extend_from_slice(&TABLE_MAGIC);
        buf.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend(self.congestion.iter().map(|&b| b as u8));
        buf.extend(self.timing.iter().map(|&b| b as u8));
        for w in &self.wns {
            buf.extend_from_slice(&w.map_or(f32::NAN, |v| v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()
    }
}

/// A dumped table: features at `f32` precision with its label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpedTable {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub congestion: Vec<bool>,
    pub timing: Vec<bool>,
    pub wns: Vec<Option<f32>>,
}

pub fn read_table<R: Read>(mut r: R) -> Result<DumpedTable> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| FeatureError::Table(m.to_owned());
    if bytes.len() < 16 || bytes[..8] != TABLE_MAGIC {
        return Err(bad("bad magic"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + rows * width * 4 + rows * 2 + rows * 4;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let f32s = |s: &[u8]| -> Vec<f32> {
        s.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mut at = 16;
    let data = f32s(&bytes[at..at + rows * width * 4]);
    at += rows * width * 4;
    let congestion = bytes[at..at + rows].iter().map(|&b| b != 0).collect();
    at += rows;
    let timing = bytes[at..at + rows].iter().map(|&b| b != 0).collect();
    at += rows;
    let wns = f32s(&bytes[at..])
        .into_iter()
        .map(|v| (!v.is_nan()).then_some(v))
        .collect();
    Ok(DumpedTable {
        rows,
        width,
        data,
        congestion,
        timing,
        wns,
    })
}

/// Concatenated inputs per module, keyed like `Dataset::modules`.
pub type ModuleInputs = std::collections::BTreeMap<(String, String), Vec<(LineKey, ConcatFeature)>>;

pub fn collect_inputs(dataset: &Dataset, embedder: &Embedder<'_>) -> Result<ModuleInputs> {
    dataset
        .modules
        .iter()
        .map(|(key, module)| Ok((key.clone(), module_inputs(module, embedder)?)))
        .collect()
}

/// Rows of `inputs` whose examples satisfy `keep`, as a matrix in dataset
/// order.
pub fn input_matrix(
    dataset: &Dataset,
    inputs: &ModuleInputs,
    mut keep: impl FnMut(&crate::corpus::Example) -> bool,
) -> Array2<f64> {
    let flat: Vec<&ConcatFeature> = inputs.values().flatten().map(|(_, c)| c).collect();
    debug_assert_eq!(flat.len(), dataset.examples.len());
    let width = flat.first().map_or(0, |c| c.vector.len());
    let rows: Vec<&ConcatFeature> = flat
        .into_iter()
        .zip(&dataset.examples)
        .filter(|(_, e)| keep(e))
        .map(|(c, _)| c)
        .collect();
    let mut x = Array2::zeros((rows.len(), width));
    for (i, c) in rows.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&c.vector));
    }
    x
}

/// Encode every module once; the result can be augmented at several radii.
pub fn encode_inputs(
    inputs: &ModuleInputs,
    model: &Autoencoder,
) -> Result<Vec<Vec<LatentEmbedding>>> {
    inputs.values().map(|m| encode_module(m, model)).collect()
}

/// Augment pre-encoded modules at radius `p` into a table aligned with the
/// dataset examples.
pub fn table_from_latents(
    dataset: &Dataset,
    latents: &[Vec<LatentEmbedding>],
    p: usize,
) -> Result<FeatureTable> {
    let d = latents
        .iter()
        .find_map(|z| z.first())
        .map_or(0, |l| l.vector.len());
    let width = (2 * p + 1) * d;
    let n = dataset.examples.len();
    let mut table = FeatureTable {
        keys: Vec::with_capacity(n),
        width,
        data: Vec::with_capacity(n * width),
        congestion: Vec::with_capacity(n),
        timing: Vec::with_capacity(n),
        wns: Vec::with_capacity(n),
        split: Vec::with_capacity(n),
    };
    let mut examples = dataset.examples.iter();
    for z in latents {
        for i in 0..z.len() {
            let feature = augment_context(z, i, p)?;
            let example = examples
                .next()
                .ok_or_else(|| FeatureError::Table("more latents than examples".into()))?;
            if feature.center_ref != example.line.key() {
                return Err(FeatureError::Table(format!(
                    "latent {} does not line up with example {}",
                    feature.center_ref,
                    example.line.key()
                )));
            }
            table.data.extend_from_slice(&feature.vector);
            table.keys.push(feature.center_ref);
            table.congestion.push(example.congestion);
            table.timing.push(example.timing);
            table.wns.push(example.wns_ns);
            table.split.push(example.split);
        }
    }
    if examples.next().is_some() {
        return Err(FeatureError::Table("fewer latents than examples".into()));
    }
    Ok(table)
}

/// Features for every line in the dataset, sorted by (design, module, line).
pub fn build_feature_table(
    dataset: &Dataset,
    embedder: &Embedder<'_>,
    model: &Autoencoder,
    p: usize,
) -> Result<FeatureTable> {
    let inputs = collect_inputs(dataset, embedder)?;
    table_from_latents(dataset, &encode_inputs(&inputs, model)?, p)
}
