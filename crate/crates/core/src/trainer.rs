//! Deterministic mini-batch training of [`EncoderModel`].
//!
//! Stage 1 aligns statements with their accepted solutions using a
//! contrastive objective; stage 2 fine-tunes on problem-level triplets.
//! The forward pass may run in parallel, but every reduction happens in a
//! fixed sequential order, so a run is bit-reproducible for any thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DuplicatePair, SimplifiedPair, Solution};
use crate::embedder::{apply_masking_with, EncoderModel, Feature, MaskingPolicy};
use crate::error::{Error, Result};
use crate::losses::{compute_loss, EncodedBatch, LossConfig, Objective};
use crate::mining::{MinedTriplet, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adamw" => Ok(Self::AdamW),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch_size: usize,
    /// Positives per query (`m`).
    pub group_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub masking: MaskingPolicy,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub validation_fraction: f64,
    /// Stage 2: triplets kept per task after balanced downsampling.
    pub per_task_cap: usize,
    pub vocab_dim: u32,
    pub embed_dim: u32,
    pub ngram_range: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            batch_size: 64,
            group_size: 4,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            epochs: 20,
            seed: 0,
            masking: MaskingPolicy::default(),
            optimizer: OptimizerKind::AdamW,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            validation_fraction: 0.05,
            per_task_cap: 1000,
            vocab_dim: crate::embedder::DEFAULT_VOCAB_DIM,
            embed_dim: crate::embedder::DEFAULT_EMBED_DIM,
            ngram_range: crate::embedder::DEFAULT_NGRAM_RANGE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.masking.validate()?;
        let bad = |m: String| Err(Error::Invalid(m));
        if self.batch_size == 0 || (self.loss.objective.is_contrastive() && self.batch_size < 2) {
            return bad(format!("batch size {} too small", self.batch_size));
        }
        if self.group_size == 0 {
            return bad("group size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} invalid", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} invalid", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam hyperparameters out of range".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        Ok(())
    }

    /// Group size actually fed to the objective.
    fn effective_group_size(&self) -> usize {
        match self.loss.objective {
            Objective::InfoNce => 1,
            _ => self.group_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExampleGroup {
    pub query_text: String,
    pub positives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletExample {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Exactly `m` positives: without replacement when there are enough,
/// otherwise all of them padded by uniform resampling with replacement.
pub fn sample_positives<T: Clone, R: Rng>(positives: &[T], m: usize, rng: &mut R) -> Result<Vec<T>> {
    if positives.is_empty() {
        return Err(Error::Empty("example has no positives".into()));
    }
    if positives.len() >= m {
        return Ok(positives.choose_multiple(rng, m).cloned().collect());
    }
    let mut out = positives.to_vec();
    while out.len() < m {
        out.push(positives[rng.gen_range(0..positives.len())].clone());
    }
    Ok(out)
}

pub fn sample_groups(examples: &[TrainExampleGroup], m: usize, seed: u64) -> Result<Vec<TrainExampleGroup>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_groups_with(examples, m, &mut rng)
}

fn sample_groups_with<R: Rng>(examples: &[TrainExampleGroup], m: usize, rng: &mut R) -> Result<Vec<TrainExampleGroup>> {
    examples
        .iter()
        .map(|ex| {
            Ok(TrainExampleGroup {
                query_text: ex.query_text.clone(),
                positives: sample_positives(&ex.positives, m, rng)?,
            })
        })
        .collect()
}

/// Adaptive-moment or plain gradient descent over a row-major `f32` matrix.
///
/// Weight decay is decoupled: `θ ← θ − lr·(update + λ·θ)`. Moments are
/// stored in `f32`; arithmetic is `f64`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

const ROWS_PER_TASK: usize = 512;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            ..Self::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `grad_row(r, buf)` fills row `r`'s gradient and returns
    /// false when the row has no gradient (treated as zero).
    pub fn step<F>(&mut self, params: &mut [f32], row_dim: usize, grad_row: F)
    where
        F: Fn(usize, &mut [f64]) -> bool + Sync,
    {
        assert!(row_dim > 0 && params.len().is_multiple_of(row_dim), "row_dim must divide params");
        self.t += 1;
        let (lr, wd) = (self.lr, self.weight_decay);
        let chunk = row_dim * ROWS_PER_TASK;
        match self.kind {
            OptimizerKind::Sgd => {
                params.par_chunks_mut(chunk).enumerate().for_each(|(c, p)| {
                    let mut g = vec![0.0f64; row_dim];
                    for (r, row) in p.chunks_mut(row_dim).enumerate() {
                        let touched = grad_row(c * ROWS_PER_TASK + r, &mut g);
                        if !touched && wd == 0.0 {
                            continue;
                        }
                        for (x, &gi) in row.iter_mut().zip(&g) {
                            let gi = if touched { gi } else { 0.0 };
                            let th = f64::from(*x);
                            *x = (th - lr * (gi + wd * th)) as f32;
                        }
                    }
                });
            }
            OptimizerKind::AdamW => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let bc1 = 1.0 - b1.powi(self.t as i32);
                let bc2 = 1.0 - b2.powi(self.t as i32);
                params
                    .par_chunks_mut(chunk)
                    .zip(self.m.par_chunks_mut(chunk))
                    .zip(self.v.par_chunks_mut(chunk))
                    .enumerate()
                    .for_each(|(c, ((p, m), v))| {
                        let mut g = vec![0.0f64; row_dim];
                        let rows = p.chunks_mut(row_dim).zip(m.chunks_mut(row_dim)).zip(v.chunks_mut(row_dim));
                        for (r, ((prow, mrow), vrow)) in rows.enumerate() {
                            if !grad_row(c * ROWS_PER_TASK + r, &mut g) {
                                g.fill(0.0);
                            }
                            for i in 0..row_dim {
                                let mi = b1 * f64::from(mrow[i]) + (1.0 - b1) * g[i];
                                let vi = b2 * f64::from(vrow[i]) + (1.0 - b2) * g[i] * g[i];
                                mrow[i] = mi as f32;
                                vrow[i] = vi as f32;
                                let upd = (mi / bc1) / ((vi / bc2).sqrt() + eps);
                                let th = f64::from(prow[i]);
                                prow[i] = (th - lr * (upd + wd * th)) as f32;
                            }
                        }
                    });
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Mean cosine between training queries and their positives, measured
    /// before each update.
    pub train_positive_cosine: f64,
    /// Mean cosine between validation queries and their positives.
    pub val_positive_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose model was returned.
    pub selected_epoch: usize,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,val_loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, val);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

struct Encoded {
    features: Vec<Feature>,
    unit: Vec<f64>,
    norm: f64,
}

fn encode_texts(model: &EncoderModel, texts: &[String]) -> Result<Vec<Encoded>> {
    texts
        .par_iter()
        .map(|t| {
            let features = model.features(t)?;
            let mut unit = model.hidden(&features);
            let norm = crate::scalar::norm(&unit);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::NonFinite(format!("text encodes to norm {norm}")));
            }
            unit.iter_mut().for_each(|x| *x /= norm);
            Ok(Encoded { features, unit, norm })
        })
        .collect()
}

/// Queries and equal-size groups, flattened as `[queries..., members...]`.
struct TextBatch {
    texts: Vec<String>,
    n: usize,
    m: usize,
}

impl TextBatch {
    fn new(queries: Vec<String>, groups: Vec<Vec<String>>) -> Self {
        let n = queries.len();
        let m = groups.first().map_or(0, Vec::len);
        let mut texts = queries;
        texts.extend(groups.into_iter().flatten());
        Self { texts, n, m }
    }
}

struct StepResult {
    loss: f64,
    positive_cosine: f64,
}

/// Forward pass, loss, and (when `opt` is given) one optimizer step.
fn run_batch(model: &mut EncoderModel, loss_cfg: &LossConfig, batch: &TextBatch, opt: Option<&mut Optimizer>) -> Result<StepResult> {
    let enc = encode_texts(model, &batch.texts)?;
    let (n, m) = (batch.n, batch.m);
    let queries: Vec<Vec<f64>> = enc[..n].iter().map(|e| e.unit.clone()).collect();
    let groups: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| (0..m).map(|k| enc[n + i * m + k].unit.clone()).collect())
        .collect();
    let eb = EncodedBatch::new(queries, groups)?;
    let out = compute_loss(&eb, loss_cfg)?;
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("loss {} is not finite", out.value)));
    }
    // Triplet groups are [positive, negative]; only the first member is a positive.
    let pos_members = if loss_cfg.objective == Objective::Triplet { 1 } else { m };
    let mut cos = 0.0;
    for i in 0..n {
        for k in 0..pos_members {
            cos += crate::scalar::dot(&eb.queries()[i], &eb.groups()[i][k]);
        }
    }
    let positive_cosine = cos / (n * pos_members) as f64;

    if let Some(opt) = opt {
        let grads: Vec<&Vec<f64>> = out
            .grad_queries
            .iter()
            .chain(out.grad_groups.iter().flatten())
            .collect();
        backward_step(model, opt, &enc, &grads);
    }
    Ok(StepResult {
        loss: out.value,
        positive_cosine,
    })
}

/// Chains unit-vector gradients through normalization and the projection,
/// then applies the optimizer.
fn backward_step(model: &mut EncoderModel, opt: &mut Optimizer, enc: &[Encoded], grad_units: &[&Vec<f64>]) {
    let d = model.embed_dim();
    // dL/dh = (g − e(e·g)) / ‖h‖
    let grad_hidden: Vec<Vec<f64>> = enc
        .iter()
        .zip(grad_units)
        .map(|(e, g)| {
            let eg = crate::scalar::dot(&e.unit, g);
            e.unit.iter().zip(g.iter()).map(|(u, gi)| (gi - u * eg) / e.norm).collect()
        })
        .collect();
    // (bucket, text, value) sorted by bucket; stable so text order is kept.
    let mut entries: Vec<(u32, u32, f64)> = enc
        .iter()
        .enumerate()
        .flat_map(|(t, e)| e.features.iter().map(move |&(b, v)| (b, t as u32, v)))
        .collect();
    entries.sort_by_key(|&(b, _, _)| b);
    let mut slot = vec![u32::MAX; model.vocab_dim() as usize];
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        let b = entries[i].0;
        let mut j = i;
        while j < entries.len() && entries[j].0 == b {
            j += 1;
        }
        slot[b as usize] = ranges.len() as u32;
        ranges.push((i, j));
        i = j;
    }
    let grad_row = |r: usize, buf: &mut [f64]| -> bool {
        let s = slot[r];
        if s == u32::MAX {
            return false;
        }
        let (lo, hi) = ranges[s as usize];
        buf.fill(0.0);
        for &(_, t, v) in &entries[lo..hi] {
            for (x, g) in buf.iter_mut().zip(&grad_hidden[t as usize]) {
                *x += v * g;
            }
        }
        true
    };
    opt.step(model.projection_mut(), d, grad_row);
}

fn check_finite(model: &EncoderModel, epoch: usize) -> Result<()> {
    if model.projection().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("non-finite parameters after epoch {epoch}")))
    }
}

/// One group per problem: statement → its solution codes.
pub fn stage1_groups(corpus: &Corpus, solutions: &[Solution]) -> (Vec<TrainExampleGroup>, Vec<String>) {
    let by_problem = crate::corpus::solutions_by_problem(solutions);
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for p in corpus.problems() {
        match by_problem.get(p.id.as_str()) {
            Some(sols) => groups.push(TrainExampleGroup {
                query_text: p.statement.clone(),
                positives: sols.iter().map(|s| s.code.clone()).collect(),
            }),
            None => warnings.push(format!("problem {} has no solution; skipped", p.id)),
        }
    }
    (groups, warnings)
}

fn validation_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).max(2)
}

fn mask_query<R: Rng>(policy: &MaskingPolicy, text: &str, rng: &mut R) -> String {
    if policy.is_disabled() {
        text.to_owned()
    } else {
        apply_masking_with(policy, text, rng)
    }
}

/// Stage-1 training from a fresh model built from `cfg`'s dimensions.
pub fn train_stage1(corpus: &Corpus, solutions: &[Solution], cfg: &TrainConfig) -> Result<(EncoderModel, TrainReport)> {
    let model = EncoderModel::new(cfg.vocab_dim, cfg.embed_dim, cfg.ngram_range, cfg.seed)?;
    let (groups, warnings) = stage1_groups(corpus, solutions);
    let (model, mut report) = train_groups(model, &groups, cfg)?;
    report.warnings.splice(0..0, warnings);
    Ok((model, report))
}

/// Contrastive training on prepared groups. Returns the model with the
/// lowest validation loss (earliest on ties).
pub fn train_groups(mut model: EncoderModel, examples: &[TrainExampleGroup], cfg: &TrainConfig) -> Result<(EncoderModel, TrainReport)> {
    cfg.validate()?;
    if !cfg.loss.objective.is_contrastive() {
        return Err(Error::Invalid("stage 1 needs a contrastive objective".into()));
    }
    if examples.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if let Some(i) = examples.iter().position(|e| e.positives.is_empty()) {
        return Err(Error::Invalid(format!("training example {i} has no positives")));
    }
    let n_val = validation_count(examples.len(), cfg.validation_fraction);
    if examples.len() < n_val + 2 {
        return Err(Error::Invalid(format!(
            "need at least {} training groups, got {}",
            n_val + 2,
            examples.len()
        )));
    }
    let m = cfg.effective_group_size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_examples: Vec<TrainExampleGroup> = val_idx.iter().map(|&i| examples[i].clone()).collect();
    let val_groups = sample_groups_with(&val_examples, m, &mut rng)?;
    let val_batches: Vec<TextBatch> = val_groups
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| {
            TextBatch::new(
                c.iter().map(|g| g.query_text.clone()).collect(),
                c.iter().map(|g| g.positives.clone()).collect(),
            )
        })
        .collect();

    let mut opt = Optimizer::from_config(cfg);
    let mut train_order: Vec<usize> = train_idx.to_vec();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut cos_sum = 0.0;
        let mut batches = 0usize;
        for chunk in train_order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut queries = Vec::with_capacity(chunk.len());
            let mut groups = Vec::with_capacity(chunk.len());
            for &i in chunk {
                queries.push(mask_query(&cfg.masking, &examples[i].query_text, &mut rng));
                groups.push(sample_positives(&examples[i].positives, m, &mut rng)?);
            }
            let tb = TextBatch::new(queries, groups);
            let r = run_batch(&mut model, &cfg.loss, &tb, Some(&mut opt))?;
            loss_sum += r.loss;
            cos_sum += r.positive_cosine;
            batches += 1;
        }
        check_finite(&model, epoch)?;
        let (val_loss, val_cos) = evaluate(&mut model, &cfg.loss, &val_batches)?;
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_positive_cosine: cos_sum / batches.max(1) as f64,
            val_loss: Some(val_loss),
            val_positive_cosine: Some(val_cos),
        });
        log::info!("epoch {epoch}: val_loss {val_loss}");
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.projection().to_vec()));
        }
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch");
    model.projection_mut().copy_from_slice(&params);
    Ok((
        model,
        TrainReport {
            epochs: logs,
            selected_epoch,
            warnings: Vec::new(),
        },
    ))
}

fn evaluate(model: &mut EncoderModel, loss_cfg: &LossConfig, batches: &[TextBatch]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut cos = 0.0;
    for b in batches {
        let r = run_batch(model, loss_cfg, b, None)?;
        loss += r.loss;
        cos += r.positive_cosine;
    }
    let n = batches.len().max(1) as f64;
    Ok((loss / n, cos / n))
}

/// A named stream of triplets, e.g. one per fine-tuning task.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletTask {
    pub name: String,
    pub triplets: Vec<TripletExample>,
}

/// Joins accepted mined negatives with the positive pairs they were mined
/// for. Returns a `p2dup` task (duplicate pairs, either direction) and an
/// `s2full` task (simplified → full).
pub fn stage2_tasks(
    corpus: &Corpus,
    dup_pairs: &[DuplicatePair],
    simplified_pairs: &[SimplifiedPair],
    mined: &[MinedTriplet],
) -> Result<Vec<TripletTask>> {
    let text = |id: &str| -> Result<String> {
        corpus
            .get(id)
            .map(|p| p.statement.clone())
            .ok_or_else(|| Error::Invalid(format!("problem {id:?} not in corpus")))
    };
    let mut dup_set = std::collections::BTreeSet::new();
    for p in dup_pairs {
        dup_set.insert((p.problem_a.as_str(), p.problem_b.as_str()));
        dup_set.insert((p.problem_b.as_str(), p.problem_a.as_str()));
    }
    let simp_set: std::collections::BTreeSet<(&str, &str)> = simplified_pairs
        .iter()
        .map(|p| (p.simplified_id.as_str(), p.full_id.as_str()))
        .collect();
    let mut tasks: BTreeMap<&str, Vec<TripletExample>> = BTreeMap::new();
    for t in mined.iter().filter(|t| t.verdict == Verdict::Accepted) {
        let key = (t.anchor.as_str(), t.positive.as_str());
        let name = if dup_set.contains(&key) {
            "p2dup"
        } else if simp_set.contains(&key) {
            "s2full"
        } else {
            continue;
        };
        tasks.entry(name).or_default().push(TripletExample {
            anchor: text(&t.anchor)?,
            positive: text(&t.positive)?,
            negative: text(&t.negative)?,
        });
    }
    Ok(tasks
        .into_iter()
        .map(|(name, triplets)| TripletTask {
            name: name.to_owned(),
            triplets,
        })
        .collect())
}

/// Seeded downsampling of each task to at most `cap` triplets, then
/// round-robin interleaving across tasks (tasks in the given order).
pub fn balanced_mixture(tasks: &[TripletTask], cap: usize, seed: u64) -> Vec<TripletExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled: Vec<Vec<TripletExample>> = tasks
        .iter()
        .map(|t| {
            let mut idx: Vec<usize> = (0..t.triplets.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            idx.into_iter().map(|i| t.triplets[i].clone()).collect()
        })
        .collect();
    let longest = sampled.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for s in &sampled {
            if let Some(t) = s.get(i) {
                out.push(t.clone());
            }
        }
    }
    out
}

/// Stage-2 fine-tuning with the triplet margin objective on a balanced
/// mixture. Returns the final-epoch model; the log has no validation column.
pub fn train_stage2(mut model: EncoderModel, tasks: &[TripletTask], cfg: &TrainConfig) -> Result<(EncoderModel, TrainReport)> {
    let loss = LossConfig {
        objective: Objective::Triplet,
        ..cfg.loss
    };
    let cfg = TrainConfig { loss, ..cfg.clone() };
    cfg.validate()?;
    let mixture = balanced_mixture(tasks, cfg.per_task_cap, cfg.seed);
    if mixture.is_empty() {
        return Err(Error::Empty("triplet set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
    let mut opt = Optimizer::from_config(&cfg);
    let mut order: Vec<usize> = (0..mixture.len()).collect();
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut cos_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let queries = chunk
                .iter()
                .map(|&i| mask_query(&cfg.masking, &mixture[i].anchor, &mut rng))
                .collect();
            let groups = chunk
                .iter()
                .map(|&i| vec![mixture[i].positive.clone(), mixture[i].negative.clone()])
                .collect();
            let tb = TextBatch::new(queries, groups);
            let r = run_batch(&mut model, &cfg.loss, &tb, Some(&mut opt))?;
            loss_sum += r.loss;
            cos_sum += r.positive_cosine;
            batches += 1;
        }
        check_finite(&model, epoch)?;
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_positive_cosine: cos_sum / batches as f64,
            val_loss: None,
            val_positive_cosine: None,
        });
    }
    Ok((
        model,
        TrainReport {
            selected_epoch: cfg.epochs,
            epochs: logs,
            warnings: Vec::new(),
        },
    ))
}
