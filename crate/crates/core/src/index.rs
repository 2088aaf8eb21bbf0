//! Exact cosine top-k search.
//!
//! A query runs in two passes. The coarse pass streams an 8-bit quantized copy
//! of the corpus (a quarter of the bytes of the `f32` rows) and yields, for
//! every document, an approximate score together with a rigorous bound on its
//! error. Only documents whose upper bound reaches the k-th best lower bound
//! can belong to the top k; those are rescored exactly. Exact scores are
//! sequential `f64` sums of `f32` products in dimension order, bit-identical to
//! a plain scan. Ties are broken by ascending document id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Documents interleaved per block of the quantized copy.
pub const LANES: usize = 64;

/// Blocks per parallel work item.
const BLOCKS_PER_TASK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct SearchIndex {
    ids: Vec<String>,
    dim: usize,
    /// Row-major `f32` rows, the source of exact scores.
    rows: Vec<f32>,
    /// `i8` codes, blocked: block `b`, dimension `d`, lane `l` at `(b*dim + d)*LANES + l`.
    codes: Vec<i8>,
    scales: Vec<f32>,
    /// `‖r - scale·code‖₂`, rounded up.
    residuals: Vec<f64>,
    /// `‖scale·code‖₂`.
    code_norms: Vec<f64>,
    /// Position of each row's id in ascending id order.
    id_order: Vec<u32>,
    positions: HashMap<String, usize>,
}

impl SearchIndex {
    pub fn build(matrix: &EmbeddingMatrix) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::Empty("cannot index an empty matrix".into()));
        }
        let n = matrix.len();
        let dim = matrix.dim();
        let nblocks = n.div_ceil(LANES);
        let mut codes = vec![0i8; nblocks * dim * LANES];
        let mut scales = vec![0.0f32; n];
        let mut residuals = vec![0.0f64; n];
        let mut code_norms = vec![0.0f64; n];
        for r in 0..n {
            let row = matrix.row(r);
            let max = row.iter().fold(0.0f32, |m, x| m.max(x.abs()));
            let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
            let base = (r / LANES) * dim * LANES + r % LANES;
            let (mut res, mut cn) = (0.0f64, 0.0f64);
            for (d, &x) in row.iter().enumerate() {
                let c = (x / scale).round().clamp(-127.0, 127.0);
                codes[base + d * LANES] = c as i8;
                let approx = f64::from(c) * f64::from(scale);
                res += (f64::from(x) - approx).powi(2);
                cn += approx * approx;
            }
            scales[r] = scale;
            residuals[r] = res.sqrt() * (1.0 + 1e-12) + 1e-30;
            code_norms[r] = cn.sqrt();
        }
        let mut sorted: Vec<usize> = (0..n).collect();
        sorted.sort_by(|&a, &b| matrix.ids()[a].cmp(&matrix.ids()[b]));
        let mut id_order = vec![0u32; n];
        for (pos, &r) in sorted.iter().enumerate() {
            id_order[r] = pos as u32;
        }
        let positions = matrix.ids().iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        Ok(Self {
            ids: matrix.ids().to_vec(),
            dim,
            rows: matrix.vectors().to_vec(),
            codes,
            scales,
            residuals,
            code_norms,
            id_order,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        let r = *self.positions.get(id)?;
        Some(&self.rows[r * self.dim..(r + 1) * self.dim])
    }

    fn check_query<T: Scalar>(&self, query: &[T]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query vector".into()));
        }
        Ok(())
    }

    fn exact(&self, q: &[f64], r: usize) -> f64 {
        let mut acc = 0.0f64;
        for (a, &b) in q.iter().zip(&self.rows[r * self.dim..(r + 1) * self.dim]) {
            acc += a * f64::from(b);
        }
        acc
    }

    /// Exact cosine of `query` against every row, in row order.
    pub fn scores<T: Scalar>(&self, query: &[T]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let q: Vec<f64> = query.iter().map(|x| x.as_f64()).collect();
        Ok((0..self.len()).into_par_iter().map(|r| self.exact(&q, r)).collect())
    }

    /// Approximate scores from the quantized copy, with per-row error bounds.
    fn coarse(&self, q: &[f64]) -> (Vec<f32>, Vec<f64>) {
        let qf: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let block_len = self.dim * LANES;
        let mut raw = vec![0.0f32; self.codes.len() / self.dim];
        raw.par_chunks_mut(LANES * BLOCKS_PER_TASK)
            .zip(self.codes.par_chunks(block_len * BLOCKS_PER_TASK))
            .for_each(|(dst, src)| {
                for (out, block) in dst.chunks_mut(LANES).zip(src.chunks(block_len)) {
                    coarse_block(&qf, block, out);
                }
            });
        raw.truncate(self.len());

        let qnorm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        // f32 dot product of dim terms (plus the rounding of q to f32 and the
        // final scale multiply) is off by at most gamma * |q|·|code·scale|.
        let u = f64::from(f32::EPSILON) / 2.0;
        let terms = (self.dim + 3) as f64;
        let gamma = 2.0 * terms * u / (1.0 - terms * u);
        let bounds = (0..self.len())
            .map(|r| qnorm * (self.residuals[r] + gamma * self.code_norms[r]) + 1e-9)
            .collect();
        let approx = raw.iter().zip(&self.scales).map(|(s, sc)| s * sc).collect();
        (approx, bounds)
    }

    /// Top `k` rows by cosine, skipping ids in `exclude`.
    pub fn top_k<T: Scalar>(&self, query: &[T], k: usize, exclude: Option<&HashSet<String>>) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        self.check_query(query)?;
        let q: Vec<f64> = query.iter().map(|x| x.as_f64()).collect();
        let mut skip = vec![false; self.len()];
        if let Some(ex) = exclude {
            for id in ex {
                if let Some(&r) = self.positions.get(id) {
                    skip[r] = true;
                }
            }
        }
        let (approx, bounds) = self.coarse(&q);
        let mut lower: Vec<f64> = (0..self.len())
            .filter(|&r| !skip[r])
            .map(|r| f64::from(approx[r]) - bounds[r])
            .collect();
        let threshold = if lower.len() > k {
            let (_, kth, _) = lower.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            *kth
        } else {
            f64::NEG_INFINITY
        };
        let candidates = (0..self.len())
            .filter(|&r| !skip[r] && f64::from(approx[r]) + bounds[r] >= threshold)
            .map(|r| Candidate {
                score: self.exact(&q, r),
                order: self.id_order[r],
                row: r as u32,
            });
        Ok(self.select(candidates, k))
    }

    fn select(&self, candidates: impl Iterator<Item = Candidate>, k: usize) -> Vec<Hit> {
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for c in candidates {
            if heap.len() < k {
                heap.push(Worst(c));
            } else if heap.peek().is_some_and(|w| c.better_than(&w.0)) {
                heap.pop();
                heap.push(Worst(c));
            }
        }
        let mut best: Vec<Candidate> = heap.into_iter().map(|w| w.0).collect();
        best.sort_by(|a, b| b.cmp_quality(a));
        best.into_iter()
            .enumerate()
            .map(|(i, c)| Hit {
                doc_id: self.ids[c.row as usize].clone(),
                score: c.score,
                rank: i + 1,
            })
            .collect()
    }

    /// Nearest row and its cosine.
    pub fn max_similarity<T: Scalar>(
        &self,
        query: &[T],
        exclude: Option<&HashSet<String>>,
    ) -> Result<(String, f64)> {
        let hit = self
            .top_k(query, 1, exclude)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Empty("every document is excluded".into()))?;
        Ok((hit.doc_id, hit.score))
    }

    /// Top-k for every row of `queries`, parallel across queries. `exclude`
    /// maps a query id to the ids it must not retrieve.
    pub fn batch_top_k(
        &self,
        queries: &EmbeddingMatrix,
        k: usize,
        exclude: Option<&HashMap<String, HashSet<String>>>,
    ) -> Result<Vec<(String, Vec<Hit>)>> {
        if queries.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: queries.dim(),
            });
        }
        (0..queries.len())
            .into_par_iter()
            .map(|i| {
                let qid = &queries.ids()[i];
                let ex = exclude.and_then(|m| m.get(qid));
                Ok((qid.clone(), self.top_k(queries.row(i), k, ex)?))
            })
            .collect()
    }
}

fn coarse_block(q: &[f32], block: &[i8], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F, checked just above.
            unsafe { coarse_block_avx512(q, block, out) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { coarse_block_avx2(q, block, out) };
            return;
        }
    }
    coarse_block_generic(q, block, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn coarse_block_avx512(q: &[f32], block: &[i8], out: &mut [f32]) {
    coarse_block_generic(q, block, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn coarse_block_avx2(q: &[f32], block: &[i8], out: &mut [f32]) {
    coarse_block_generic(q, block, out);
}

#[inline(always)]
fn coarse_block_generic(q: &[f32], block: &[i8], out: &mut [f32]) {
    let mut acc = [0.0f32; LANES];
    for (qd, lanes) in q.iter().zip(block.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += qd * f32::from(lanes[l]);
        }
    }
    let n = out.len();
    out.copy_from_slice(&acc[..n]);
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    order: u32,
    row: u32,
}

impl Candidate {
    /// Higher score wins; equal scores go to the smaller id.
    fn cmp_quality(&self, other: &Self) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.order.cmp(&self.order))
    }

    fn better_than(&self, other: &Self) -> bool {
        self.cmp_quality(other) == Ordering::Greater
    }
}

/// Heap wrapper whose maximum is the worst candidate.
struct Worst(Candidate);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.cmp_quality(&self.0)
    }
}
