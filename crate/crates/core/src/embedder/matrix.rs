//! Unit-norm embedding matrices and the `CPRE` file format.
//!
//! Layout (little endian): `"CPRE"`, `u32` version (1), `u32` dim, `u64` count,
//! `count × dim` `f32` rows, then `count` LF-terminated UTF-8 ids.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{read_u32, read_u64};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CPRE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix, renormalizing every row to unit norm.
    pub fn new(ids: Vec<String>, dim: usize, mut vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dimension 0".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} ids but {} values at dim {dim}",
                ids.len(),
                vectors.len()
            )));
        }
        for (r, row) in vectors.chunks_exact_mut(dim).enumerate() {
            let n: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::NonNormalizable(r));
            }
            for x in row.iter_mut() {
                *x = (f64::from(*x) / n) as f32;
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.contains('\n') {
                return Err(Error::Format(format!("id {id:?} contains a newline")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            ids,
            dim,
            vectors,
            index,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.vectors.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad embedding magic".into()));
        }
        let mut r = &bytes[4..];
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported embedding version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(Error::Format("dimension 0".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let nbytes = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| n <= r.len())
            .ok_or_else(|| Error::Format("truncated vector block".into()))?;
        let vectors: Vec<f32> = r[..nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tail = std::str::from_utf8(&r[nbytes..])
            .map_err(|_| Error::Format("ids are not UTF-8".into()))?;
        let ids: Vec<String> = match tail.strip_suffix('\n') {
            Some(body) => body.split('\n').map(str::to_owned).collect(),
            None if tail.is_empty() => Vec::new(),
            None => return Err(Error::Format("id block is not LF-terminated".into())),
        };
        if ids.len() != count {
            return Err(Error::Format(format!("header says {count} ids, found {}", ids.len())));
        }
        Self::new(ids, dim, vectors)
    }
}

pub fn export_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a `CPRE` file; rows are renormalized and id order is preserved.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}
