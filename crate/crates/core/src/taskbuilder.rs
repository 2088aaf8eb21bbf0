//! Construction of the four retrieval tasks.
//!
//! * `t2c`: statement → its accepted solutions, over problems dated on or after a cutoff.
//! * `c2c`: one designated solution → the other solutions of the same problem.
//! * `p2dup`: one member of a duplicate cluster → the rest of the cluster, among distractors.
//! * `s2full`: simplified statement → the full statement it was derived from.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DuplicateLevel, DuplicatePair, Problem, SimplifiedPair, Solution};
use crate::error::{Error, Result};
use crate::metrics::Qrels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    T2c,
    C2c,
    P2dup,
    S2full,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::T2c, TaskKind::C2c, TaskKind::P2dup, TaskKind::S2full];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::T2c => "t2c",
            TaskKind::C2c => "c2c",
            TaskKind::P2dup => "p2dup",
            TaskKind::S2full => "s2full",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub cutoff_date: NaiveDate,
    pub cluster_test_fraction: f64,
    pub test_pair_count: usize,
    pub seed: u64,
    /// Restricts p2dup distractors to one platform.
    pub distractor_source: Option<String>,
    /// Keeps only these duplicate levels before clustering.
    pub levels: Option<Vec<DuplicateLevel>>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            cutoff_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            cluster_test_fraction: 0.30,
            test_pair_count: 10_000,
            seed: 0,
            distractor_source: None,
            levels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.cluster_test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Invalid(format!("cluster fraction {f} outside (0, 1)")));
        }
        Ok(())
    }
}

/// Mutually duplicate problems and the annotated edges between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DupCluster {
    pub members: BTreeSet<String>,
    pub levels: Vec<DuplicatePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainRemainder {
    Problems(Vec<String>),
    DupPairs(Vec<DuplicatePair>),
    SimplifiedPairs(Vec<SimplifiedPair>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltTask {
    pub kind: TaskKind,
    pub queries: BTreeMap<String, String>,
    pub corpus: BTreeMap<String, String>,
    pub qrels: Qrels,
    pub train_remainder: TrainRemainder,
    /// Problem ids behind every query and every relevant document.
    pub test_problems: BTreeSet<String>,
    pub warnings: Vec<String>,
}

impl BuiltTask {
    /// True when no training item touches a test problem.
    pub fn is_leak_free(&self) -> bool {
        let t = &self.test_problems;
        match &self.train_remainder {
            TrainRemainder::Problems(ids) => ids.iter().all(|id| !t.contains(id)),
            TrainRemainder::DupPairs(pairs) => pairs
                .iter()
                .all(|p| !t.contains(&p.problem_a) && !t.contains(&p.problem_b)),
            TrainRemainder::SimplifiedPairs(pairs) => pairs
                .iter()
                .all(|p| !t.contains(&p.simplified_id) && !t.contains(&p.full_id)),
        }
    }
}

/// Problems (with their solutions) split at a cutoff date.
#[derive(Debug, Clone)]
pub struct TemporalSplit<'a> {
    pub cutoff: NaiveDate,
    pub train: Vec<&'a Problem>,
    pub test: Vec<&'a Problem>,
    pub train_solutions: Vec<&'a Solution>,
    pub test_solutions: Vec<&'a Solution>,
    pub warnings: Vec<String>,
}

/// Test = problems dated on or after `cutoff` plus their solutions; train is the complement.
pub fn temporal_split<'a>(corpus: &'a Corpus, solutions: &'a [Solution], cutoff: NaiveDate) -> TemporalSplit<'a> {
    let (test, train): (Vec<&Problem>, Vec<&Problem>) =
        corpus.problems().iter().partition(|p| p.timestamp >= cutoff);
    let test_ids: BTreeSet<&str> = test.iter().map(|p| p.id.as_str()).collect();
    let (test_solutions, train_solutions): (Vec<&Solution>, Vec<&Solution>) = solutions
        .iter()
        .filter(|s| corpus.contains(&s.problem_id))
        .partition(|s| test_ids.contains(s.problem_id.as_str()));
    let mut warnings = Vec::new();
    if test.is_empty() {
        warnings.push(format!("no problems dated on or after {cutoff}; test split is empty"));
    }
    TemporalSplit {
        cutoff,
        train,
        test,
        train_solutions,
        test_solutions,
        warnings,
    }
}

fn group_solutions<'a>(sols: &[&'a Solution]) -> BTreeMap<&'a str, Vec<&'a Solution>> {
    let mut m: BTreeMap<&str, Vec<&Solution>> = BTreeMap::new();
    for s in sols {
        m.entry(s.problem_id.as_str()).or_default().push(s);
    }
    m
}

fn train_ids(split: &TemporalSplit<'_>) -> TrainRemainder {
    TrainRemainder::Problems(split.train.iter().map(|p| p.id.clone()).collect())
}

/// Text-to-code: statement queries over all test-split solutions.
pub fn build_t2c(split: &TemporalSplit<'_>) -> Result<BuiltTask> {
    let by_problem = group_solutions(&split.test_solutions);
    let mut queries = BTreeMap::new();
    let mut qrels = Vec::new();
    let mut test_problems = BTreeSet::new();
    let mut warnings = split.warnings.clone();
    for p in &split.test {
        match by_problem.get(p.id.as_str()) {
            Some(sols) => {
                queries.insert(p.id.clone(), p.statement.clone());
                test_problems.insert(p.id.clone());
                qrels.extend(sols.iter().map(|s| (p.id.clone(), s.id.clone(), 1)));
            }
            None => warnings.push(format!("problem {} has no solution; skipped", p.id)),
        }
    }
    let corpus = split
        .test_solutions
        .iter()
        .map(|s| (s.id.clone(), s.code.clone()))
        .collect();
    Ok(BuiltTask {
        kind: TaskKind::T2c,
        queries,
        corpus,
        qrels: qrels_or_empty(qrels)?,
        train_remainder: train_ids(split),
        test_problems,
        warnings,
    })
}

/// Code-to-code: one seeded query solution per problem with at least two.
pub fn build_c2c(split: &TemporalSplit<'_>, seed: u64) -> Result<BuiltTask> {
    let by_problem = group_solutions(&split.test_solutions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = BTreeMap::new();
    let mut qrels = Vec::new();
    let mut test_problems = BTreeSet::new();
    let mut query_solutions = BTreeSet::new();
    let mut warnings = split.warnings.clone();
    for (pid, sols) in &by_problem {
        if sols.len() < 2 {
            warnings.push(format!("problem {pid} has fewer than 2 solutions; skipped"));
            continue;
        }
        let q = sols[rng.gen_range(0..sols.len())];
        queries.insert(q.id.clone(), q.code.clone());
        query_solutions.insert(q.id.as_str());
        test_problems.insert(pid.to_string());
        qrels.extend(
            sols.iter()
                .filter(|s| s.id != q.id)
                .map(|s| (q.id.clone(), s.id.clone(), 1)),
        );
    }
    let corpus = split
        .test_solutions
        .iter()
        .filter(|s| !query_solutions.contains(s.id.as_str()))
        .map(|s| (s.id.clone(), s.code.clone()))
        .collect();
    Ok(BuiltTask {
        kind: TaskKind::C2c,
        queries,
        corpus,
        qrels: qrels_or_empty(qrels)?,
        train_remainder: train_ids(split),
        test_problems,
        warnings,
    })
}

fn qrels_or_empty(pairs: Vec<(String, String, u32)>) -> Result<Qrels> {
    Qrels::from_pairs(pairs)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Connected components of the duplicate-pair graph, ordered by smallest member id.
pub fn cluster_duplicates(pairs: &[DuplicatePair]) -> Vec<DupCluster> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names: Vec<&str> = Vec::new();
    for p in pairs {
        for id in [p.problem_a.as_str(), p.problem_b.as_str()] {
            if !index.contains_key(id) {
                index.insert(id, names.len());
                names.push(id);
            }
        }
    }
    let mut uf = UnionFind::new(names.len());
    for p in pairs {
        uf.union(index[p.problem_a.as_str()], index[p.problem_b.as_str()]);
    }
    let mut comps: BTreeMap<usize, DupCluster> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let root = uf.find(i);
        comps
            .entry(root)
            .or_insert_with(|| DupCluster {
                members: BTreeSet::new(),
                levels: Vec::new(),
            })
            .members
            .insert(name.to_string());
    }
    for p in pairs {
        let root = uf.find(index[p.problem_a.as_str()]);
        if let Some(c) = comps.get_mut(&root) {
            c.levels.push(p.clone());
        }
    }
    let mut out: Vec<DupCluster> = comps.into_values().collect();
    out.sort_by(|a, b| a.members.first().cmp(&b.members.first()));
    out
}

/// `⌈fraction · n⌉`, ignoring floating-point noise just above an integer.
pub fn test_cluster_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Problem-to-duplicate task from duplicate clusters.
pub fn build_p2dup(
    clusters: &[DupCluster],
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
    distractor_source: Option<&str>,
) -> Result<BuiltTask> {
    if clusters.is_empty() {
        return Err(Error::Empty("no duplicate clusters".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("cluster fraction {fraction} outside (0, 1)")));
    }
    for c in clusters {
        if c.members.len() < 2 {
            return Err(Error::Invalid("cluster with fewer than 2 members".into()));
        }
        if let Some(missing) = c.members.iter().find(|m| !corpus.contains(m)) {
            return Err(Error::Invalid(format!("cluster member {missing:?} not in corpus")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut rng);
    let n_test = test_cluster_count(fraction, clusters.len());
    let mut chosen: Vec<usize> = order[..n_test].to_vec();
    chosen.sort_unstable();

    let statement = |id: &str| corpus.get(id).map(|p| p.statement.clone()).unwrap_or_default();
    let mut queries = BTreeMap::new();
    let mut docs = BTreeMap::new();
    let mut qrels = Vec::new();
    let mut test_problems = BTreeSet::new();
    for &ci in &chosen {
        let members: Vec<&String> = clusters[ci].members.iter().collect();
        let q = members[rng.gen_range(0..members.len())];
        queries.insert(q.clone(), statement(q));
        for m in &members {
            test_problems.insert((*m).clone());
            if *m != q {
                docs.insert((*m).clone(), statement(m));
                qrels.push((q.clone(), (*m).clone(), 1));
            }
        }
    }
    let sources: BTreeSet<&str> = match distractor_source {
        Some(s) => BTreeSet::from([s]),
        None => test_problems
            .iter()
            .filter_map(|id| corpus.get(id))
            .map(|p| p.source.as_str())
            .collect(),
    };
    for p in corpus.problems() {
        if sources.contains(p.source.as_str()) && !test_problems.contains(&p.id) {
            docs.insert(p.id.clone(), p.statement.clone());
        }
    }
    let chosen_set: BTreeSet<usize> = chosen.into_iter().collect();
    let remainder = clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| !chosen_set.contains(i))
        .flat_map(|(_, c)| c.levels.iter().cloned())
        .collect();
    Ok(BuiltTask {
        kind: TaskKind::P2dup,
        queries,
        corpus: docs,
        qrels: Qrels::from_pairs(qrels)?,
        train_remainder: TrainRemainder::DupPairs(remainder),
        test_problems,
        warnings: Vec::new(),
    })
}

/// Simplified-to-full task from a seeded sample of `test_count` pairs.
pub fn build_s2full(
    pairs: &[SimplifiedPair],
    corpus: &Corpus,
    test_count: usize,
    seed: u64,
) -> Result<BuiltTask> {
    if test_count == 0 {
        return Err(Error::Invalid("test_count must be positive".into()));
    }
    if pairs.len() < test_count {
        return Err(Error::Invalid(format!(
            "need {test_count} simplified pairs, have {}",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let (test_idx, rest_idx) = order.split_at(test_count);
    let statement = |id: &str| -> Result<String> {
        corpus
            .get(id)
            .map(|p| p.statement.clone())
            .ok_or_else(|| Error::Invalid(format!("problem {id:?} not in corpus")))
    };
    let mut queries = BTreeMap::new();
    let mut docs = BTreeMap::new();
    let mut qrels = Vec::new();
    let mut test_problems = BTreeSet::new();
    for &i in test_idx {
        let p = &pairs[i];
        queries.insert(p.simplified_id.clone(), statement(&p.simplified_id)?);
        docs.insert(p.full_id.clone(), statement(&p.full_id)?);
        qrels.push((p.simplified_id.clone(), p.full_id.clone(), 1));
        test_problems.insert(p.simplified_id.clone());
        test_problems.insert(p.full_id.clone());
    }
    let mut remainder = Vec::new();
    let mut warnings = Vec::new();
    for &i in rest_idx {
        let p = &pairs[i];
        if test_problems.contains(&p.simplified_id) || test_problems.contains(&p.full_id) {
            warnings.push(format!(
                "training pair ({}, {}) shares a problem with the test split; dropped",
                p.simplified_id, p.full_id
            ));
        } else {
            remainder.push(p.clone());
        }
    }
    Ok(BuiltTask {
        kind: TaskKind::S2full,
        queries,
        corpus: docs,
        qrels: Qrels::from_pairs(qrels)?,
        train_remainder: TrainRemainder::SimplifiedPairs(remainder),
        test_problems,
        warnings,
    })
}

/// Provenance written next to each emitted task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub kind: TaskKind,
    pub seed: u64,
    pub cutoff: Option<String>,
    pub cluster_fraction: Option<f64>,
    pub test_count: Option<usize>,
    pub input_digests: BTreeMap<String, String>,
    pub queries: usize,
    pub corpus: usize,
    pub qrels: usize,
}

#[derive(Serialize, Deserialize)]
struct TextRecord {
    id: String,
    text: String,
}

fn write_records(path: &Path, records: &BTreeMap<String, String>) -> Result<()> {
    let recs: Vec<TextRecord> = records
        .iter()
        .map(|(id, text)| TextRecord {
            id: id.clone(),
            text: text.clone(),
        })
        .collect();
    crate::corpus::write_jsonl(path, &recs)
}

/// Writes `queries.jsonl`, `corpus.jsonl`, `qrels.txt`, and `manifest.json`
/// under `root/<kind>/`. Returns the task directory.
pub fn write_task(task: &BuiltTask, root: &Path, manifest: &TaskManifest) -> Result<PathBuf> {
    let dir = root.join(task.kind.as_str());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_records(&dir.join("queries.jsonl"), &task.queries)?;
    write_records(&dir.join("corpus.jsonl"), &task.corpus)?;
    let qrels_path = dir.join("qrels.txt");
    fs::write(&qrels_path, task.qrels.to_trec()).map_err(|e| Error::io(&qrels_path, e))?;
    let mpath = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&mpath, body + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(dir)
}

/// Reads `(id, text)` records from a JSON-lines file. Accepts `text`,
/// `statement`, or `code` as the text field.
pub fn read_text_records(path: &Path) -> Result<Vec<(String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let field = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_owned);
        let id = field("id").ok_or_else(|| Error::Schema {
            line: i + 1,
            reason: "missing id".into(),
        })?;
        let text = field("text")
            .or_else(|| field("statement"))
            .or_else(|| field("code"))
            .ok_or_else(|| Error::Schema {
                line: i + 1,
                reason: "missing text".into(),
            })?;
        out.push((id, text));
    }
    Ok(out)
}

/// A task read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub kind: Option<TaskKind>,
    pub queries: Vec<(String, String)>,
    pub corpus: Vec<(String, String)>,
    pub qrels: Qrels,
}

pub fn read_task(dir: &Path) -> Result<LoadedTask> {
    let kind = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok());
    Ok(LoadedTask {
        kind,
        queries: read_text_records(&dir.join("queries.jsonl"))?,
        corpus: read_text_records(&dir.join("corpus.jsonl"))?,
        qrels: Qrels::read(&dir.join("qrels.txt"))?,
    })
}
