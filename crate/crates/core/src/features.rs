//! Embedding providers and block-structured descriptor fusion.
//!
//! A fused descriptor is `[w_local * L, w_global * G, w_hist * H]` where each
//! block is L2-normalized before scaling. For unit blocks the cosine between
//! two fused descriptors is the weight-squared average of the per-block
//! cosines: `sum_b w_b^2 cos_b / sum_b w_b^2`.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, HistogramFeature, ImageBuffer, ImagingError};

/// Output width of the VGG-16 fully-connected layers, for real backbones
/// wired through the lookup provider.
pub const VGG16_FC_DIM: usize = 4096;
pub const DEFAULT_TOY_DIM: usize = 64;

const SIDECAR_MAGIC: &[u8; 4] = b"CGE1";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{block} block dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch {
        block: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("no precomputed embedding for image {0:?}")]
    MissingEmbedding(String),
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("embedding sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::Config(
                "embedding must have positive dim".into(),
            ));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Returns `v / |v|`; the zero vector is returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(FeatureError::NonFinite { index });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    LocalRoi,
    GlobalBody,
}

/// Source of local and global embeddings. Implementations must be
/// deterministic and safe to share across threads.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self, kind: EmbedKind) -> usize;

    /// `key` identifies the image (or ROI) for table-backed providers;
    /// pixel-based providers ignore it.
    fn embed(
        &self,
        key: &str,
        image: &ImageBuffer,
        kind: EmbedKind,
    ) -> Result<EmbeddingVector, FeatureError>;
}

/// Luminance-pooling embedder, see [`imaging::toy_embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyProvider {
    pub local_dim: usize,
    pub global_dim: usize,
}

impl Default for ToyProvider {
    fn default() -> Self {
        Self {
            local_dim: DEFAULT_TOY_DIM,
            global_dim: DEFAULT_TOY_DIM,
        }
    }
}

impl EmbeddingProvider for ToyProvider {
    fn dim(&self, kind: EmbedKind) -> usize {
        match kind {
            EmbedKind::LocalRoi => self.local_dim,
            EmbedKind::GlobalBody => self.global_dim,
        }
    }

    fn embed(
        &self,
        _key: &str,
        image: &ImageBuffer,
        kind: EmbedKind,
    ) -> Result<EmbeddingVector, FeatureError> {
        let values = imaging::toy_embed(image, self.dim(kind))?;
        Ok(EmbeddingVector { values })
    }
}

/// Precomputed vectors keyed by image id, loaded from a `CGE1` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the vector for `id`.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), FeatureError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(FeatureError::DimMismatch {
                block: "sidecar",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(FeatureError::Sidecar(format!(
                "image id too long ({} bytes)",
                id.len()
            )));
        }
        match self.index.get(&id) {
            Some(&i) => self.entries[i].1 = vector,
            None => {
                self.index.insert(id.clone(), self.entries.len());
                self.entries.push((id, vector));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.entries[i].1.as_slice())
    }

    /// `CGE1`, u32 dim, u32 count, then per entry: u16 id length, UTF-8 id,
    /// `dim` little-endian f32.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), FeatureError> {
        w.write_all(SIDECAR_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (id, v) in &self.entries {
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != SIDECAR_MAGIC {
            return Err(FeatureError::Sidecar(format!("bad magic {magic:?}")));
        }
        let dim = read_u32(&mut r, "dim")? as usize;
        let count = read_u32(&mut r, "count")? as usize;
        if dim == 0 {
            return Err(FeatureError::Sidecar("dim must be positive".into()));
        }
        let mut table = Self::new(dim);
        let mut buf = vec![0u8; dim * 4];
        for n in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "entry id length")?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut id, "entry id")?;
            let id = String::from_utf8(id)
                .map_err(|_| FeatureError::Sidecar(format!("entry {n}: id is not UTF-8")))?;
            read_exact(&mut r, &mut buf, "entry vector")?;
            let v: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            table.insert(id, v)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path)
            .map_err(|e| FeatureError::Sidecar(format!("{}: {e}", path.display())))?;
        Self::read_from(io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), FeatureError> {
    r.read_exact(buf)
        .map_err(|e| FeatureError::Sidecar(format!("truncated {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, FeatureError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Table-backed provider. Local lookups try `key` first and then the image
/// id before any `#` suffix, so `img-3#0` falls back to `img-3`.
#[derive(Debug, Clone)]
pub struct LookupProvider {
    local: Arc<EmbeddingTable>,
    global: Arc<EmbeddingTable>,
}

impl LookupProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        let t = Arc::new(table);
        Self {
            local: Arc::clone(&t),
            global: t,
        }
    }

    pub fn with_tables(local: EmbeddingTable, global: EmbeddingTable) -> Self {
        Self {
            local: Arc::new(local),
            global: Arc::new(global),
        }
    }

    fn table(&self, kind: EmbedKind) -> &EmbeddingTable {
        match kind {
            EmbedKind::LocalRoi => &self.local,
            EmbedKind::GlobalBody => &self.global,
        }
    }
}

impl EmbeddingProvider for LookupProvider {
    fn dim(&self, kind: EmbedKind) -> usize {
        self.table(kind).dim()
    }

    fn embed(
        &self,
        key: &str,
        _image: &ImageBuffer,
        kind: EmbedKind,
    ) -> Result<EmbeddingVector, FeatureError> {
        let table = self.table(kind);
        let base = key.split('#').next().unwrap_or(key);
        let v = table
            .get(key)
            .or_else(|| table.get(base))
            .ok_or_else(|| FeatureError::MissingEmbedding(key.to_string()))?;
        EmbeddingVector::new(v.iter().map(|&x| x as f64).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockWeights {
    pub local: f64,
    pub global: f64,
    pub hist: f64,
}

impl Default for BlockWeights {
    fn default() -> Self {
        Self {
            local: 1.0,
            global: 1.0,
            hist: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Local,
    Global,
    Hist,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Local => "local",
            Block::Global => "global",
            Block::Hist => "hist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub local_dim: usize,
    pub global_dim: usize,
    /// Bins per color channel; 0 disables the histogram block.
    pub hist_bins: usize,
    pub block_weights: BlockWeights,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            local_dim: DEFAULT_TOY_DIM,
            global_dim: DEFAULT_TOY_DIM,
            hist_bins: 8,
            block_weights: BlockWeights::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.local_dim == 0 || self.global_dim == 0 {
            return Err(FeatureError::Config("block dims must be positive".into()));
        }
        let w = self.block_weights;
        let ws = [w.local, w.global, w.hist];
        if ws.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(FeatureError::Config(format!(
                "weights must be finite and nonnegative, got {ws:?}"
            )));
        }
        let hist_weight = if self.hist_bins == 0 { 0.0 } else { w.hist };
        if w.local <= 0.0 && w.global <= 0.0 && hist_weight <= 0.0 {
            return Err(FeatureError::Config(
                "at least one block weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn hist_dim(&self) -> usize {
        3 * self.hist_bins
    }

    pub fn total_dim(&self) -> usize {
        self.local_dim + self.global_dim + self.hist_dim()
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let g0 = self.local_dim;
        let h0 = g0 + self.global_dim;
        match block {
            Block::Local => 0..g0,
            Block::Global => g0..h0,
            Block::Hist => h0..h0 + self.hist_dim(),
        }
    }

    pub fn weight(&self, block: Block) -> f64 {
        match block {
            Block::Local => self.block_weights.local,
            Block::Global => self.block_weights.global,
            Block::Hist => self.block_weights.hist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDescriptor {
    layout: FusionConfig,
    values: Vec<f32>,
}

impl FusedDescriptor {
    /// Wraps raw values, checking length and finiteness but not block norms.
    pub fn from_raw(layout: FusionConfig, values: Vec<f32>) -> Result<Self, FeatureError> {
        if values.len() != layout.total_dim() {
            return Err(FeatureError::DimMismatch {
                block: "fused",
                expected: layout.total_dim(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { index });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &FusionConfig {
        &self.layout
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, block: Block) -> &[f32] {
        &self.values[self.layout.block_range(block)]
    }
}

/// Normalizes each block, scales it by its weight and concatenates
/// `local, global, hist`.
pub fn fuse(
    local: &EmbeddingVector,
    global: &EmbeddingVector,
    hist: Option<&HistogramFeature>,
    config: &FusionConfig,
) -> Result<FusedDescriptor, FeatureError> {
    config.validate()?;
    check_dim(Block::Local, config.local_dim, local.dim())?;
    check_dim(Block::Global, config.global_dim, global.dim())?;
    let hist_values: &[f64] = match (config.hist_bins, hist) {
        (0, None) => &[],
        (0, Some(h)) => {
            return Err(FeatureError::DimMismatch {
                block: "hist",
                expected: 0,
                actual: h.values.len(),
            })
        }
        (_, None) => {
            return Err(FeatureError::DimMismatch {
                block: "hist",
                expected: config.hist_dim(),
                actual: 0,
            })
        }
        (_, Some(h)) => {
            check_dim(Block::Hist, config.hist_dim(), h.values.len())?;
            &h.values
        }
    };

    let mut values = Vec::with_capacity(config.total_dim());
    for (block, raw) in [
        (Block::Local, local.values()),
        (Block::Global, global.values()),
        (Block::Hist, hist_values),
    ] {
        let weight = config.weight(block);
        let unit = l2_normalize(raw)?;
        values.extend(unit.iter().map(|x| (x * weight) as f32));
    }
    Ok(FusedDescriptor {
        layout: *config,
        values,
    })
}

fn check_dim(block: Block, expected: usize, actual: usize) -> Result<(), FeatureError> {
    if expected != actual {
        return Err(FeatureError::DimMismatch {
            block: block.name(),
            expected,
            actual,
        });
    }
    Ok(())
}
