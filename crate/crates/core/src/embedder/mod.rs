//! Desk-scale text encoder: hashed character n-grams times a trainable
//! projection, L2-normalized.

mod hashing;
mod masking;
mod matrix;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use hashing::{hash_features, mix64, normalize_text, stable_hash, Feature};
pub use masking::{apply_masking, apply_masking_with, classify_heading, detect_sections, MaskingPolicy, Section, SectionKind};
pub use matrix::{export_embeddings, import_embeddings, EmbeddingMatrix};

pub const DEFAULT_VOCAB_DIM: u32 = 1 << 18;
pub const DEFAULT_EMBED_DIM: u32 = 128;
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (2, 4);

const CHECKPOINT_MAGIC: &[u8; 4] = b"CPMD";

/// Hashed n-gram features followed by a `vocab_dim × embed_dim` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    vocab_dim: u32,
    embed_dim: u32,
    ngram_range: (usize, usize),
    seed: u64,
    /// Row-major: row `f` is the embedding contribution of bucket `f`.
    projection: Vec<f32>,
}

impl EncoderModel {
    /// Random initialization, uniform with variance `1/embed_dim` per entry.
    pub fn new(vocab_dim: u32, embed_dim: u32, ngram_range: (usize, usize), seed: u64) -> Result<Self> {
        if vocab_dim == 0 || embed_dim == 0 {
            return Err(Error::Invalid("vocab_dim and embed_dim must be positive".into()));
        }
        if ngram_range.0 == 0 || ngram_range.0 > ngram_range.1 {
            return Err(Error::Invalid(format!("bad n-gram range {ngram_range:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / f64::from(embed_dim)).sqrt() as f32;
        let projection = (0..vocab_dim as usize * embed_dim as usize)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(Self {
            vocab_dim,
            embed_dim,
            ngram_range,
            seed,
            projection,
        })
    }

    pub fn with_defaults(seed: u64) -> Result<Self> {
        Self::new(DEFAULT_VOCAB_DIM, DEFAULT_EMBED_DIM, DEFAULT_NGRAM_RANGE, seed)
    }

    pub fn vocab_dim(&self) -> u32 {
        self.vocab_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim as usize
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        self.ngram_range
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f32] {
        &mut self.projection
    }

    pub fn features(&self, text: &str) -> Result<Vec<Feature>> {
        let f = hash_features(text, self.ngram_range, self.vocab_dim);
        if f.is_empty() {
            return Err(Error::Empty("text".into()));
        }
        Ok(f)
    }

    /// Unnormalized projection of a feature vector, accumulated in `f64`.
    pub fn hidden(&self, features: &[Feature]) -> Vec<f64> {
        let d = self.embed_dim();
        let mut h = vec![0.0f64; d];
        for &(b, v) in features {
            let row = &self.projection[b as usize * d..(b as usize + 1) * d];
            for (hi, &p) in h.iter_mut().zip(row) {
                *hi += v * f64::from(p);
            }
        }
        h
    }

    /// Unit-norm embedding of `text`.
    pub fn encode<T: Scalar>(&self, text: &str) -> Result<Vec<T>> {
        let mut h = self.hidden(&self.features(text)?);
        if !crate::scalar::normalize(&mut h) {
            return Err(Error::NonFinite("text projects to a zero vector".into()));
        }
        Ok(h.into_iter().map(T::of).collect())
    }

    /// Encodes `(id, text)` records into an embedding matrix. Parallel over
    /// records; each row depends only on its own text.
    pub fn encode_all<S: AsRef<str> + Sync>(&self, records: &[(String, S)]) -> Result<EmbeddingMatrix> {
        let rows: Vec<Vec<f32>> = records
            .par_iter()
            .map(|(_, t)| self.encode::<f32>(t.as_ref()))
            .collect::<Result<_>>()?;
        let ids = records.iter().map(|(id, _)| id.clone()).collect();
        EmbeddingMatrix::new(ids, self.embed_dim(), rows.concat())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let default_range = self.ngram_range == DEFAULT_NGRAM_RANGE;
        let mut out = Vec::with_capacity(32 + self.projection.len() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(if default_range { 1u32 } else { 2u32 }).to_le_bytes());
        out.extend_from_slice(&self.vocab_dim.to_le_bytes());
        out.extend_from_slice(&self.embed_dim.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        if !default_range {
            out.extend_from_slice(&(self.ngram_range.0 as u32).to_le_bytes());
            out.extend_from_slice(&(self.ngram_range.1 as u32).to_le_bytes());
        }
        for p in &self.projection {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let version = read_u32(&mut r)?;
        let vocab_dim = read_u32(&mut r)?;
        let embed_dim = read_u32(&mut r)?;
        let seed = read_u64(&mut r)?;
        let ngram_range = match version {
            1 => DEFAULT_NGRAM_RANGE,
            2 => (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize),
            v => return Err(Error::Format(format!("unsupported model version {v}"))),
        };
        if vocab_dim == 0 || embed_dim == 0 {
            return Err(Error::Format("zero model dimension".into()));
        }
        let n = vocab_dim as usize * embed_dim as usize;
        if r.len() != n * 4 {
            return Err(Error::Format(format!(
                "projection holds {} bytes, expected {}",
                r.len(),
                n * 4
            )));
        }
        let projection: Vec<f32> = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if projection.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite projection entry".into()));
        }
        Ok(Self {
            vocab_dim,
            embed_dim,
            ngram_range,
            seed,
            projection,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}
