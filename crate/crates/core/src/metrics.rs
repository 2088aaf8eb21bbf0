//! Ranking metrics over graded relevance judgments.
//!
//! NDCG uses linear gain, `DCG@k = Σ_{r≤k} rel_r / log2(r + 1)`, normalized by
//! the DCG of the relevance-sorted ideal ranking. With binary judgments this
//! equals the exponential-gain variant. Scores average arithmetically over the
//! queries in the qrels, in qrels order; a query absent from the run scores 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::Hit;

/// Relevance judgments: query id → (doc id → grade).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// Builds qrels, requiring at least one positive grade per query.
    pub fn new(judgments: BTreeMap<String, BTreeMap<String, u32>>) -> Result<Self> {
        for (q, docs) in &judgments {
            if !docs.values().any(|&r| r > 0) {
                return Err(Error::Invalid(format!("query {q:?} has no relevant document")));
            }
        }
        Ok(Self { judgments })
    }

    pub fn from_pairs<I, Q, D>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Q, D, u32)>,
        Q: Into<String>,
        D: Into<String>,
    {
        let mut j: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for (q, d, r) in pairs {
            j.entry(q.into()).or_default().insert(d.into(), r);
        }
        Self::new(j)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn judgments(&self) -> &BTreeMap<String, BTreeMap<String, u32>> {
        &self.judgments
    }

    pub fn get(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Total number of positive judgments.
    pub fn relevant_count(&self) -> usize {
        self.judgments.values().flat_map(|d| d.values()).filter(|&&r| r > 0).count()
    }

    /// Parses TREC qrels: `qid 0 docid rel` per line.
    pub fn parse_trec(text: &str) -> Result<Self> {
        let mut j: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::Schema {
                    line: i + 1,
                    reason: format!("expected 4 columns, got {}", cols.len()),
                });
            }
            let rel = cols[3].parse::<u32>().map_err(|e| Error::Schema {
                line: i + 1,
                reason: format!("bad relevance {:?}: {e}", cols[3]),
            })?;
            j.entry(cols[0].to_owned()).or_default().insert(cols[2].to_owned(), rel);
        }
        Self::new(j)
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, r) in docs {
                let _ = writeln!(out, "{q} 0 {d} {r}");
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_trec(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Ranked hits per query.
pub type RunResult = BTreeMap<String, Vec<Hit>>;

/// Serializes a run as `qid docid rank score` lines.
pub fn run_to_text(run: &RunResult) -> String {
    let mut out = String::new();
    for (q, hits) in run {
        for h in hits {
            let _ = writeln!(out, "{q} {} {} {:.6}", h.doc_id, h.rank, h.score);
        }
    }
    out
}

pub fn parse_run(text: &str) -> Result<RunResult> {
    let mut run = RunResult::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| Error::Schema { line: i + 1, reason };
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 columns, got {}", cols.len())));
        }
        let rank = cols[2].parse().map_err(|e| bad(format!("bad rank: {e}")))?;
        let score = cols[3].parse().map_err(|e| bad(format!("bad score: {e}")))?;
        run.entry(cols[0].to_owned()).or_default().push(Hit {
            doc_id: cols[1].to_owned(),
            score,
            rank,
        });
    }
    for hits in run.values_mut() {
        hits.sort_by_key(|h| h.rank);
    }
    Ok(run)
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// NDCG@k of one ranked list.
pub fn ndcg_query(hits: &[Hit], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = hits
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, h)| f64::from(rels.get(&h.doc_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = rels.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| f64::from(r) / discount(i + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

pub fn recall_query(hits: &[Hit], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    let relevant = rels.values().filter(|&&r| r > 0).count();
    if relevant == 0 {
        return 0.0;
    }
    let found = hits
        .iter()
        .take(k)
        .filter(|h| rels.get(&h.doc_id).is_some_and(|&r| r > 0))
        .count();
    found as f64 / relevant as f64
}

pub fn reciprocal_rank_query(hits: &[Hit], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    hits.iter()
        .take(k)
        .position(|h| rels.get(&h.doc_id).is_some_and(|&r| r > 0))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn average(
    run: &RunResult,
    qrels: &Qrels,
    k: usize,
    per_query: fn(&[Hit], &BTreeMap<String, u32>, usize) -> f64,
) -> Result<f64> {
    if run.is_empty() {
        return Err(Error::Empty("run".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if qrels.is_empty() {
        return Err(Error::Empty("qrels".into()));
    }
    let entries: Vec<(&String, &BTreeMap<String, u32>)> = qrels.judgments.iter().collect();
    let values: Vec<f64> = entries
        .par_iter()
        .map(|(q, rels)| run.get(*q).map_or(0.0, |hits| per_query(hits, rels, k)))
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn ndcg_at_k(run: &RunResult, qrels: &Qrels, k: usize) -> Result<f64> {
    average(run, qrels, k, ndcg_query)
}

pub fn recall_at_k(run: &RunResult, qrels: &Qrels, k: usize) -> Result<f64> {
    average(run, qrels, k, recall_query)
}

/// Mean reciprocal rank of the first relevant hit within the top `k`.
pub fn mrr(run: &RunResult, qrels: &Qrels, k: usize) -> Result<f64> {
    average(run, qrels, k, reciprocal_rank_query)
}

/// Mean of exactly four per-task scores.
pub fn task_average(scores: &[f64]) -> Result<f64> {
    if scores.len() != 4 {
        return Err(Error::Invalid(format!("expected 4 task scores, got {}", scores.len())));
    }
    Ok(scores.iter().sum::<f64>() / 4.0)
}

/// Two-decimal rendering used for reported scores.
pub fn format_score(x: f64) -> String {
    format!("{x:.2}")
}
