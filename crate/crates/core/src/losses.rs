//! Contrastive objectives with analytic gradients.
//!
//! Similarities are plain dot products; callers pass unit vectors so the dot
//! product is the cosine. Gradients are taken with respect to the vectors as
//! given (no renormalization), which is what finite differences on the raw
//! inputs measure. Batch losses are the arithmetic mean of per-query terms.
//!
//! Objectives:
//!
//! * InfoNCE: `-log( e^{s(q_i,p_i)/τ} / Σ_j e^{s(q_i,p_j)/τ} )`, one positive per query.
//! * Multi-positive InfoNCE: `-log( Σ_k e^{s(q_i,p_ik)/τ} / Σ_{j≠i} e^{s(q_i,x_j)/τ} )`.
//!   The denominator skips `j = i` entirely, so the value can be negative.
//! * Group-InfoNCE: the group similarity `s_G(q_i,G_j)` (mean of member cosines)
//!   replaces the single positive, the denominator holds the own group plus every
//!   other query and every other group, and the population variance of the own
//!   group's member cosines, scaled by `1/τ²`, is added per query.
//! * Triplet margin: `max(0, s(a,n) - s(a,p) + α)`.
//!
//! `x_j` in the multi-positive and group denominators is the other query `q_j`
//! when `cross_query_negatives` is on (the default), or the other query's first
//! positive `p_j1` when it is off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[serde(alias = "infonce")]
    InfoNce,
    #[serde(alias = "multipos")]
    MultiPos,
    #[serde(alias = "group_infonce", alias = "group-infonce")]
    GroupInfoNce,
    Triplet,
}

impl Objective {
    pub fn is_contrastive(self) -> bool {
        !matches!(self, Objective::Triplet)
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "infonce" => Ok(Objective::InfoNce),
            "multipos" => Ok(Objective::MultiPos),
            "group-infonce" | "group_infonce" => Ok(Objective::GroupInfoNce),
            "triplet" => Ok(Objective::Triplet),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// Divide by `m`, so a single-member group has zero variance.
    #[default]
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    pub tau: f64,
    pub margin: f64,
    pub variance_penalty: bool,
    pub variance_kind: VarianceKind,
    pub cross_query_negatives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::GroupInfoNce,
            tau: 0.07,
            margin: 0.2,
            variance_penalty: true,
            variance_kind: VarianceKind::Population,
            cross_query_negatives: true,
        }
    }
}

impl LossConfig {
    pub fn with_objective(objective: Objective) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::Invalid(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Queries `x_i` and their positive groups `G_i`, all groups of equal size `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch<T> {
    queries: Vec<Vec<T>>,
    groups: Vec<Vec<Vec<T>>>,
    dim: usize,
    m: usize,
}

impl<T: Scalar> EncodedBatch<T> {
    /// Builds a batch of unit vectors (norm 1 within `1e-6`).
    pub fn new(queries: Vec<Vec<T>>, groups: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let b = Self::from_raw(queries, groups)?;
        let tol = 1e-6;
        let all = b.queries.iter().chain(b.groups.iter().flatten());
        for (i, v) in all.enumerate() {
            if (norm(v).as_f64() - 1.0).abs() > tol {
                return Err(Error::Invalid(format!("vector {i} is not unit norm")));
            }
        }
        Ok(b)
    }

    /// Shape-checked batch without the unit-norm requirement. Gradient checks
    /// evaluate the losses at perturbed, slightly non-unit points.
    pub fn from_raw(queries: Vec<Vec<T>>, groups: Vec<Vec<Vec<T>>>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Empty("batch has no queries".into()));
        }
        if queries.len() != groups.len() {
            return Err(Error::Invalid(format!(
                "{} queries but {} groups",
                queries.len(),
                groups.len()
            )));
        }
        let dim = queries[0].len();
        let m = groups[0].len();
        if dim == 0 {
            return Err(Error::Invalid("zero-dimensional vectors".into()));
        }
        if m == 0 {
            return Err(Error::Empty("positive group".into()));
        }
        for (q, g) in queries.iter().zip(&groups) {
            if g.len() != m {
                return Err(Error::Invalid(format!("group sizes differ: {} vs {m}", g.len())));
            }
            for v in std::iter::once(q).chain(g) {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("batch vector".into()));
                }
            }
        }
        Ok(Self {
            queries,
            groups,
            dim,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn group_size(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn queries(&self) -> &[Vec<T>] {
        &self.queries
    }

    pub fn groups(&self) -> &[Vec<Vec<T>>] {
        &self.groups
    }

    /// Mutable access to every scalar, queries first then groups in order.
    /// Used by finite-difference checks.
    pub fn param_mut(&mut self, flat: usize) -> &mut T {
        let d = self.dim;
        let nq = self.queries.len() * d;
        if flat < nq {
            &mut self.queries[flat / d][flat % d]
        } else {
            let r = flat - nq;
            let per_group = self.m * d;
            &mut self.groups[r / per_group][(r % per_group) / d][r % d]
        }
    }

    pub fn param_count(&self) -> usize {
        self.queries.len() * self.dim * (1 + self.m)
    }

    fn vec(&self, r: Ref) -> &[T] {
        match r {
            Ref::Query(i) => &self.queries[i],
            Ref::Member(j, k) => &self.groups[j][k],
        }
    }

    fn sim(&self, a: Ref, b: Ref) -> T {
        dot(self.vec(a), self.vec(b))
    }
}

#[derive(Debug, Clone, Copy)]
enum Ref {
    Query(usize),
    Member(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad_queries: Vec<Vec<T>>,
    pub grad_groups: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> LossOutput<T> {
    fn zeros(n: usize, m: usize, dim: usize) -> Self {
        Self {
            value: T::zero(),
            grad_queries: vec![vec![T::zero(); dim]; n],
            grad_groups: vec![vec![vec![T::zero(); dim]; m]; n],
        }
    }

    fn grad_mut(&mut self, r: Ref) -> &mut [T] {
        match r {
            Ref::Query(i) => &mut self.grad_queries[i],
            Ref::Member(j, k) => &mut self.grad_groups[j][k],
        }
    }

    /// Accumulates `coef * d(a·b)` into the gradients of `a` and `b`.
    fn add_pair(&mut self, batch: &EncodedBatch<T>, a: Ref, b: Ref, coef: T) {
        if coef == T::zero() {
            return;
        }
        let va = batch.vec(a);
        let vb = batch.vec(b);
        for (g, x) in self.grad_mut(a).iter_mut().zip(vb) {
            *g += coef * *x;
        }
        for (g, x) in self.grad_mut(b).iter_mut().zip(va) {
            *g += coef * *x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_queries.iter().flatten().all(|x| x.is_finite())
            && self.grad_groups.iter().flatten().flatten().all(|x| x.is_finite())
    }
}

/// `(log Σ e^{x}, softmax(x))`, stabilized by the maximum.
fn log_softmax<T: Scalar>(logits: &[T]) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let lse = max + total.ln();
    (lse, exps.into_iter().map(|e| e / total).collect())
}

fn require_pairs<T: Scalar>(batch: &EncodedBatch<T>) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Invalid(format!(
            "contrastive objectives need at least 2 queries, got {}",
            batch.len()
        )));
    }
    Ok(())
}

fn negative_ref(cfg: &LossConfig, j: usize) -> Ref {
    if cfg.cross_query_negatives {
        Ref::Query(j)
    } else {
        Ref::Member(j, 0)
    }
}

/// Single-positive InfoNCE over in-batch positives.
pub fn infonce<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    cfg.validate()?;
    if batch.group_size() != 1 {
        return Err(Error::Invalid(format!(
            "infonce needs exactly one positive per query, got {}",
            batch.group_size()
        )));
    }
    require_pairs(batch)?;
    let n = batch.len();
    let tau = T::of(cfg.tau);
    let scale = T::one() / (tau * T::of(n as f64));
    let mut out = LossOutput::zeros(n, 1, batch.dim());
    let mut total = T::zero();
    for i in 0..n {
        let logits: Vec<T> = (0..n)
            .map(|j| batch.sim(Ref::Query(i), Ref::Member(j, 0)) / tau)
            .collect();
        let (lse, p) = log_softmax(&logits);
        total += lse - logits[i];
        for (j, &pj) in p.iter().enumerate() {
            let delta = if i == j { T::one() } else { T::zero() };
            out.add_pair(batch, Ref::Query(i), Ref::Member(j, 0), (pj - delta) * scale);
        }
    }
    out.value = total / T::of(n as f64);
    Ok(out)
}

/// Multi-positive InfoNCE. No sign guarantee: the own positives are not part
/// of the denominator.
pub fn multipos_infonce<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    cfg.validate()?;
    require_pairs(batch)?;
    let n = batch.len();
    let m = batch.group_size();
    let tau = T::of(cfg.tau);
    let scale = T::one() / (tau * T::of(n as f64));
    let mut out = LossOutput::zeros(n, m, batch.dim());
    let mut total = T::zero();
    for i in 0..n {
        let q = Ref::Query(i);
        let pos: Vec<T> = (0..m).map(|k| batch.sim(q, Ref::Member(i, k)) / tau).collect();
        let negs: Vec<Ref> = (0..n).filter(|&j| j != i).map(|j| negative_ref(cfg, j)).collect();
        let neg: Vec<T> = negs.iter().map(|&r| batch.sim(q, r) / tau).collect();
        let (lse_pos, p_pos) = log_softmax(&pos);
        let (lse_neg, p_neg) = log_softmax(&neg);
        total += lse_neg - lse_pos;
        for (k, w) in p_pos.into_iter().enumerate() {
            out.add_pair(batch, q, Ref::Member(i, k), -w * scale);
        }
        for (r, w) in negs.into_iter().zip(p_neg) {
            out.add_pair(batch, q, r, w * scale);
        }
    }
    out.value = total / T::of(n as f64);
    Ok(out)
}

/// Mean cosine between `query` and each member of `group`.
pub fn group_similarity<T: Scalar>(query: &[T], group: &[Vec<T>]) -> Result<T> {
    if group.is_empty() {
        return Err(Error::Empty("group".into()));
    }
    let mut acc = T::zero();
    for g in group {
        if g.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                got: g.len(),
            });
        }
        acc += dot(query, g);
    }
    Ok(acc / T::of(group.len() as f64))
}

/// Population variance.
pub fn population_variance<T: Scalar>(xs: &[T]) -> T {
    let n = T::of(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n
}

/// Group-InfoNCE with optional within-group variance penalty.
pub fn group_infonce<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    Ok(group_infonce_terms(batch, cfg)?.0)
}

/// Per-query `(contrastive term, penalty term)`.
pub type GroupTerms<T> = Vec<(T, T)>;

/// Group-InfoNCE plus the per-query `(contrastive term, penalty term)` split.
pub fn group_infonce_terms<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<(LossOutput<T>, GroupTerms<T>)> {
    cfg.validate()?;
    require_pairs(batch)?;
    let n = batch.len();
    let m = batch.group_size();
    let tau = T::of(cfg.tau);
    let mf = T::of(m as f64);
    let inv_n = T::one() / T::of(n as f64);
    let mut out = LossOutput::zeros(n, m, batch.dim());
    let mut terms = Vec::with_capacity(n);
    let mut total = T::zero();
    for i in 0..n {
        let q = Ref::Query(i);
        let member_sims: Vec<Vec<T>> = (0..n)
            .map(|j| (0..m).map(|k| batch.sim(q, Ref::Member(j, k))).collect())
            .collect();
        let group_sim = |j: usize| member_sims[j].iter().copied().sum::<T>() / mf;

        // logits: own group, then (other query, other group) for each j != i
        let mut logits = vec![group_sim(i) / tau];
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        for &j in &others {
            logits.push(batch.sim(q, negative_ref(cfg, j)) / tau);
            logits.push(group_sim(j) / tau);
        }
        let (lse, w) = log_softmax(&logits);
        let contrastive = lse - logits[0];

        // d/d s_G(i,i) = (w0 - 1)/τ, spread evenly over the m members
        let own = (w[0] - T::one()) / (tau * mf) * inv_n;
        for k in 0..m {
            out.add_pair(batch, q, Ref::Member(i, k), own);
        }
        for (slot, &j) in others.iter().enumerate() {
            let wq = w[1 + 2 * slot] / tau * inv_n;
            out.add_pair(batch, q, negative_ref(cfg, j), wq);
            let wg = w[2 + 2 * slot] / (tau * mf) * inv_n;
            for k in 0..m {
                out.add_pair(batch, q, Ref::Member(j, k), wg);
            }
        }

        let mut penalty = T::zero();
        if cfg.variance_penalty {
            let own_sims = &member_sims[i];
            let tau2 = tau * tau;
            penalty = population_variance(own_sims) / tau2;
            let mean = own_sims.iter().copied().sum::<T>() / mf;
            // dVar/dc_k = 2 (c_k - mean) / m
            for (k, &c) in own_sims.iter().enumerate() {
                let coef = T::of(2.0) * (c - mean) / (mf * tau2) * inv_n;
                out.add_pair(batch, q, Ref::Member(i, k), coef);
            }
        }
        total += contrastive + penalty;
        terms.push((contrastive, penalty));
    }
    out.value = total * inv_n;
    Ok((out, terms))
}

/// Triplet margin loss for one `(anchor, positive, negative)`.
///
/// The returned gradients use a batch of one: `grad_queries[0]` is the anchor,
/// `grad_groups[0]` is `[positive, negative]`.
pub fn triplet_margin<T: Scalar>(
    anchor: &[T],
    positive: &[T],
    negative: &[T],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    let batch = EncodedBatch::from_raw(
        vec![anchor.to_vec()],
        vec![vec![positive.to_vec(), negative.to_vec()]],
    )?;
    triplet_batch(&batch, cfg)
}

/// Mean triplet margin loss over a batch whose groups are `[positive, negative]`.
pub fn triplet_batch<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    cfg.validate()?;
    if batch.group_size() != 2 {
        return Err(Error::Invalid(format!(
            "triplet batches carry [positive, negative] groups, got group size {}",
            batch.group_size()
        )));
    }
    let n = batch.len();
    let inv_n = T::one() / T::of(n as f64);
    let margin = T::of(cfg.margin);
    let mut out = LossOutput::zeros(n, 2, batch.dim());
    let mut total = T::zero();
    for i in 0..n {
        let a = Ref::Query(i);
        let sp = batch.sim(a, Ref::Member(i, 0));
        let sn = batch.sim(a, Ref::Member(i, 1));
        let slack = sn - sp + margin;
        if slack > T::zero() {
            total += slack;
            out.add_pair(batch, a, Ref::Member(i, 1), inv_n);
            out.add_pair(batch, a, Ref::Member(i, 0), -inv_n);
        }
    }
    out.value = total * inv_n;
    Ok(out)
}

/// Dispatches on `cfg.objective`.
pub fn compute_loss<T: Scalar>(batch: &EncodedBatch<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    match cfg.objective {
        Objective::InfoNce => infonce(batch, cfg),
        Objective::MultiPos => multipos_infonce(batch, cfg),
        Objective::GroupInfoNce => group_infonce(batch, cfg),
        Objective::Triplet => triplet_batch(batch, cfg),
    }
}
