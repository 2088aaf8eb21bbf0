//! Problem, solution, and pair records plus line-oriented JSON ingestion.
//!
//! Every input file holds one JSON object per line. Malformed lines turn into
//! [`Rejection`]s instead of aborting the load (unless `strict` is set);
//! duplicate ids always abort.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementLanguage {
    En,
    Zh,
    Ja,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemFormat {
    Icpc,
    Oi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicateLevel {
    Exact,
    Near,
    Method,
}

impl std::str::FromStr for DuplicateLevel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "exact" => Ok(DuplicateLevel::Exact),
            "near" => Ok(DuplicateLevel::Near),
            "method" => Ok(DuplicateLevel::Method),
            other => Err(format!("unknown duplicate level {other:?}")),
        }
    }
}

/// Parses `YYYY-MM-DD`, or `YYYY-MM` with the day defaulting to the 1st.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok())
}

pub(crate) mod day_date {
    use super::*;

    pub fn serialize<S: Serializer>(d: &NaiveDate, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&d.format("%Y-%m-%d").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NaiveDate, D::Error> {
        let raw = String::deserialize(d)?;
        parse_date(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid date {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub source: String,
    pub statement: String,
    pub statement_language: StatementLanguage,
    pub format: ProblemFormat,
    #[serde(with = "day_date")]
    pub timestamp: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub id: String,
    pub problem_id: String,
    pub code: String,
    pub language: String,
    #[serde(default = "accepted")]
    pub verdict: Verdict,
}

fn accepted() -> Verdict {
    Verdict::Accepted
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub problem_a: String,
    pub problem_b: String,
    pub level: DuplicateLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimplifiedPair {
    pub simplified_id: String,
    pub full_id: String,
}

/// A line that failed validation. Displays as `LINE <n>: <reason>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LINE {}: {}", self.line, self.reason)
    }
}

/// An immutable, id-indexed set of problems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    problems: Vec<Problem>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, failing on the first repeated id.
    pub fn new(problems: Vec<Problem>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(problems.len());
        for (i, p) in problems.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: p.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { problems, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.by_id.get(id).map(|&i| &self.problems[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

fn validate_problem(p: &Problem) -> std::result::Result<(), String> {
    if p.id.is_empty() {
        return Err("empty id".into());
    }
    if p.statement.trim().is_empty() {
        return Err("empty statement".into());
    }
    Ok(())
}

enum Parsed<T> {
    Blank,
    Ok(T),
    Bad(String),
}

/// Parses every non-blank line of `path` into `T`, in parallel, keeping
/// input order. `check` runs per record after deserialization.
fn parse_lines<T, F>(path: &Path, check: F) -> Result<Vec<(usize, Parsed<T>)>>
where
    T: DeserializeOwned + Send,
    F: Fn(&T) -> std::result::Result<(), String> + Sync,
{
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    Ok(lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let parsed = if line.trim().is_empty() {
                Parsed::Blank
            } else {
                match serde_json::from_str::<T>(line) {
                    Ok(rec) => match check(&rec) {
                        Ok(()) => Parsed::Ok(rec),
                        Err(reason) => Parsed::Bad(reason),
                    },
                    Err(e) => Parsed::Bad(e.to_string()),
                }
            };
            (i + 1, parsed)
        })
        .collect())
}

/// Loads `problems.jsonl`. Duplicate ids are always fatal; other violations
/// become rejections, or abort when `strict` is set.
pub fn ingest_problems(path: &Path, strict: bool) -> Result<(Corpus, Vec<Rejection>)> {
    let parsed = parse_lines::<Problem, _>(path, validate_problem)?;
    let mut problems = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in parsed {
        match rec {
            Parsed::Blank => {}
            Parsed::Ok(p) => {
                if !seen.insert(p.id.clone()) {
                    return Err(Error::DuplicateId { id: p.id, line });
                }
                problems.push(p);
            }
            Parsed::Bad(reason) => {
                if strict {
                    return Err(Error::Schema { line, reason });
                }
                rejections.push(Rejection { line, reason });
            }
        }
    }
    Ok((Corpus::new(problems)?, rejections))
}

/// Loads `solutions.jsonl`, rejecting lines whose `problem_id` is not in `corpus`.
pub fn ingest_solutions(path: &Path, corpus: &Corpus) -> Result<(Vec<Solution>, Vec<Rejection>)> {
    let parsed = parse_lines::<Solution, _>(path, |s| {
        if s.id.is_empty() {
            Err("empty id".into())
        } else if s.code.trim().is_empty() {
            Err("empty code".into())
        } else if !corpus.contains(&s.problem_id) {
            Err(format!("unknown problem_id {:?}", s.problem_id))
        } else {
            Ok(())
        }
    })?;
    collect_unique(parsed, |s: &Solution| s.id.clone())
}

pub fn ingest_dup_pairs(path: &Path, corpus: &Corpus) -> Result<(Vec<DuplicatePair>, Vec<Rejection>)> {
    let parsed = parse_lines::<DuplicatePair, _>(path, |p| {
        check_pair(corpus, &p.problem_a, &p.problem_b)
    })?;
    Ok(collect(parsed))
}

pub fn ingest_simplified_pairs(
    path: &Path,
    corpus: &Corpus,
) -> Result<(Vec<SimplifiedPair>, Vec<Rejection>)> {
    let parsed = parse_lines::<SimplifiedPair, _>(path, |p| {
        check_pair(corpus, &p.simplified_id, &p.full_id)
    })?;
    Ok(collect(parsed))
}

fn check_pair(corpus: &Corpus, a: &str, b: &str) -> std::result::Result<(), String> {
    if a == b {
        return Err(format!("pair references {a:?} twice"));
    }
    for id in [a, b] {
        if !corpus.contains(id) {
            return Err(format!("unknown problem id {id:?}"));
        }
    }
    Ok(())
}

fn collect<T>(parsed: Vec<(usize, Parsed<T>)>) -> (Vec<T>, Vec<Rejection>) {
    let mut out = Vec::new();
    let mut rejections = Vec::new();
    for (line, rec) in parsed {
        match rec {
            Parsed::Blank => {}
            Parsed::Ok(r) => out.push(r),
            Parsed::Bad(reason) => rejections.push(Rejection { line, reason }),
        }
    }
    (out, rejections)
}

fn collect_unique<T>(
    parsed: Vec<(usize, Parsed<T>)>,
    key: impl Fn(&T) -> String,
) -> Result<(Vec<T>, Vec<Rejection>)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut rejections = Vec::new();
    for (line, rec) in parsed {
        match rec {
            Parsed::Blank => {}
            Parsed::Ok(r) => {
                let id = key(&r);
                if !seen.insert(id.clone()) {
                    return Err(Error::DuplicateId { id, line });
                }
                out.push(r);
            }
            Parsed::Bad(reason) => rejections.push(Rejection { line, reason }),
        }
    }
    Ok((out, rejections))
}

/// Writes records as JSON lines, LF-terminated.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-category record counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub problems: usize,
    pub solutions: usize,
    pub by_source: BTreeMap<String, usize>,
    pub by_statement_language: BTreeMap<StatementLanguage, usize>,
    pub by_code_language: BTreeMap<String, usize>,
    pub by_format: BTreeMap<ProblemFormat, usize>,
    pub by_year: BTreeMap<i32, usize>,
}

pub fn corpus_stats(corpus: &Corpus, solutions: &[Solution]) -> CorpusStats {
    let mut s = CorpusStats {
        problems: corpus.len(),
        solutions: solutions.len(),
        ..Default::default()
    };
    for p in corpus.problems() {
        *s.by_source.entry(p.source.clone()).or_default() += 1;
        *s.by_statement_language.entry(p.statement_language).or_default() += 1;
        *s.by_format.entry(p.format).or_default() += 1;
        *s.by_year.entry(p.timestamp.year()).or_default() += 1;
    }
    for sol in solutions {
        *s.by_code_language.entry(sol.language.clone()).or_default() += 1;
    }
    s
}

/// Groups solutions by their problem id, keeping file order within a problem.
pub fn solutions_by_problem(solutions: &[Solution]) -> BTreeMap<&str, Vec<&Solution>> {
    let mut m: BTreeMap<&str, Vec<&Solution>> = BTreeMap::new();
    for s in solutions {
        m.entry(s.problem_id.as_str()).or_default().push(s);
    }
    m
}
