//! Hard-negative mining for triplet fine-tuning.
//!
//! For each `(anchor, positive)` pair the top-k pool neighbours of the anchor
//! (excluding the anchor and its known positives) are sampled one at a time
//! and passed to a [`Verifier`] until one is accepted as non-equivalent.
//!
//! External verifiers speak a line protocol: each request is one JSON object
//! `{"anchor_id","candidate_id","anchor","candidate"}` followed by LF; the
//! reply is one line, `equivalent` or `not_equivalent`.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{stable_hash, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::index::SearchIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedTriplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub negative_score: f64,
    pub verdict: Verdict,
}

/// What a verifier sees for one candidate.
#[derive(Debug, Clone, Copy)]
pub struct VerifyRequest<'a> {
    pub anchor_id: &'a str,
    pub candidate_id: &'a str,
    pub anchor_text: Option<&'a str>,
    pub candidate_text: Option<&'a str>,
    pub cosine: f64,
}

/// Decides whether a candidate is a usable (non-equivalent) negative.
pub trait Verifier: Sync {
    fn verify(&self, req: &VerifyRequest<'_>) -> Result<Verdict>;
}

/// Rejects when cosine ≥ threshold or when the pair is a known duplicate.
pub fn heuristic_verify(cosine: f64, threshold: f64, known_duplicate: bool) -> Verdict {
    if known_duplicate || cosine >= threshold {
        Verdict::Rejected
    } else {
        Verdict::Accepted
    }
}

#[derive(Debug, Clone)]
pub struct HeuristicVerifier {
    pub threshold: f64,
    duplicates: HashSet<(String, String)>,
}

impl HeuristicVerifier {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1]")));
        }
        Ok(Self {
            threshold,
            duplicates: HashSet::new(),
        })
    }

    /// Registers known duplicate pairs; order within a pair does not matter.
    pub fn with_duplicates<I, S>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        for (a, b) in pairs {
            let (a, b) = (a.into(), b.into());
            self.duplicates.insert((b.clone(), a.clone()));
            self.duplicates.insert((a, b));
        }
        self
    }

    pub fn is_duplicate(&self, a: &str, b: &str) -> bool {
        self.duplicates.contains(&(a.to_owned(), b.to_owned()))
    }
}

impl Verifier for HeuristicVerifier {
    fn verify(&self, req: &VerifyRequest<'_>) -> Result<Verdict> {
        Ok(heuristic_verify(
            req.cosine,
            self.threshold,
            self.is_duplicate(req.anchor_id, req.candidate_id),
        ))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    anchor_id: &'a str,
    candidate_id: &'a str,
    anchor: &'a str,
    candidate: &'a str,
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Line-protocol verifier over any reader/writer pair, typically a child process.
pub struct ExternalVerifier {
    channel: Mutex<Channel>,
    child: Option<Child>,
}

impl ExternalVerifier {
    pub fn new<R, W>(reader: R, writer: W) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self {
            channel: Mutex::new(Channel {
                reader: Box::new(reader),
                writer: Box::new(writer),
            }),
            child: None,
        }
    }

    /// Spawns `command` (whitespace-separated program and arguments).
    pub fn spawn(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Invalid("empty verifier command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(Path::new(program), e))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
        let mut v = Self::new(BufReader::new(stdout), stdin);
        v.child = Some(child);
        Ok(v)
    }
}

impl Drop for ExternalVerifier {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a well-behaved verifier exit on its own.
            if let Ok(mut ch) = self.channel.lock() {
                ch.writer = Box::new(std::io::sink());
            }
            let _ = child.wait();
        }
    }
}

impl Verifier for ExternalVerifier {
    fn verify(&self, req: &VerifyRequest<'_>) -> Result<Verdict> {
        let (Some(anchor), Some(candidate)) = (req.anchor_text, req.candidate_text) else {
            return Err(Error::Invalid("external verifier needs texts".into()));
        };
        let line = serde_json::to_string(&WireRequest {
            anchor_id: req.anchor_id,
            candidate_id: req.candidate_id,
            anchor,
            candidate,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut ch = self.channel.lock().map_err(|_| Error::Format("verifier poisoned".into()))?;
        writeln!(ch.writer, "{line}").map_err(Error::Stream)?;
        ch.writer.flush().map_err(Error::Stream)?;
        let mut reply = String::new();
        if ch.reader.read_line(&mut reply).map_err(Error::Stream)? == 0 {
            return Err(Error::Format("verifier closed its output".into()));
        }
        match reply.trim() {
            "equivalent" => Ok(Verdict::Rejected),
            "not_equivalent" => Ok(Verdict::Accepted),
            other => Err(Error::Format(format!("unexpected verifier reply {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { k: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningOutput {
    /// Every verified candidate, rejects included, in pair order.
    pub records: Vec<MinedTriplet>,
    /// One line per pair that ended without an accepted negative.
    pub skipped: Vec<String>,
}

impl MiningOutput {
    pub fn accepted(&self) -> impl Iterator<Item = &MinedTriplet> {
        self.records.iter().filter(|t| t.verdict == Verdict::Accepted)
    }
}

/// Per-anchor RNG seed: global seed XOR a stable hash of the anchor id.
pub fn anchor_seed(seed: u64, anchor: &str) -> u64 {
    seed ^ stable_hash(anchor.as_bytes())
}

/// Mines one verified negative per `(anchor, positive)` pair.
///
/// `anchors` supplies anchor embeddings; `known_positives` maps an anchor to
/// ids that must never be negatives (the pair's own positive is always
/// excluded). `texts`, when given, is forwarded to the verifier.
pub fn mine_negatives(
    index: &SearchIndex,
    anchors: &EmbeddingMatrix,
    pairs: &[(String, String)],
    known_positives: &HashMap<String, HashSet<String>>,
    cfg: MiningConfig,
    verifier: &dyn Verifier,
    texts: Option<&HashMap<String, String>>,
) -> Result<MiningOutput> {
    if index.is_empty() {
        return Err(Error::Empty("candidate pool".into()));
    }
    if cfg.k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let per_pair: Vec<(Vec<MinedTriplet>, Option<String>)> = pairs
        .par_iter()
        .map(|(anchor, positive)| {
            let query = anchors
                .row_by_id(anchor)
                .ok_or_else(|| Error::Invalid(format!("no embedding for anchor {anchor:?}")))?;
            let mut exclude: HashSet<String> = known_positives.get(anchor).cloned().unwrap_or_default();
            exclude.insert(anchor.clone());
            exclude.insert(positive.clone());
            let mut candidates = match index.top_k(query, cfg.k, Some(&exclude)) {
                Ok(hits) => hits,
                Err(Error::Empty(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(anchor_seed(cfg.seed, anchor));
            let mut records = Vec::new();
            let text = |id: &str| texts.and_then(|t| t.get(id)).map(String::as_str);
            while !candidates.is_empty() {
                let hit = candidates.remove(rng.gen_range(0..candidates.len()));
                let verdict = verifier.verify(&VerifyRequest {
                    anchor_id: anchor,
                    candidate_id: &hit.doc_id,
                    anchor_text: text(anchor),
                    candidate_text: text(&hit.doc_id),
                    cosine: hit.score,
                })?;
                records.push(MinedTriplet {
                    anchor: anchor.clone(),
                    positive: positive.clone(),
                    negative: hit.doc_id,
                    negative_score: hit.score,
                    verdict,
                });
                if verdict == Verdict::Accepted {
                    return Ok((records, None));
                }
            }
            let note = format!("anchor {anchor} (positive {positive}): no accepted negative among top-{}", cfg.k);
            Ok((records, Some(note)))
        })
        .collect::<Result<_>>()?;
    let mut out = MiningOutput::default();
    for (records, note) in per_pair {
        out.records.extend(records);
        if let Some(n) = note {
            log::warn!("{n}");
            out.skipped.push(n);
        }
    }
    Ok(out)
}

pub fn write_triplets(path: &Path, records: &[MinedTriplet]) -> Result<()> {
    crate::corpus::write_jsonl(path, records)
}

pub fn read_triplets(path: &Path) -> Result<Vec<MinedTriplet>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&str, [f32; 2])]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            rows.iter().map(|(id, _)| id.to_string()).collect(),
            2,
            rows.iter().flat_map(|(_, v)| *v).collect(),
        )
        .unwrap()
    }

    struct RejectAll;
    impl Verifier for RejectAll {
        fn verify(&self, _: &VerifyRequest<'_>) -> Result<Verdict> {
            Ok(Verdict::Rejected)
        }
    }

    #[test]
    fn heuristic_rules() {
        assert_eq!(heuristic_verify(1.0, 0.95, false), Verdict::Rejected);
        assert_eq!(heuristic_verify(0.0, 0.95, false), Verdict::Accepted);
        assert_eq!(heuristic_verify(0.1, 0.95, true), Verdict::Rejected);
        let v = HeuristicVerifier::new(0.95).unwrap().with_duplicates([("a", "b")]);
        assert!(v.is_duplicate("b", "a"));
        assert!(HeuristicVerifier::new(0.0).is_err());
    }

    #[test]
    fn known_positive_never_sampled() {
        let pool = matrix(&[("pos", [1.0, 0.0]), ("other", [0.6, 0.8]), ("far", [0.0, 1.0])]);
        let anchors = matrix(&[("a", [1.0, 0.0])]);
        let index = SearchIndex::build(&pool).unwrap();
        let v = HeuristicVerifier::new(0.99).unwrap();
        let known = HashMap::from([("a".to_string(), HashSet::from(["pos".to_string()]))]);
        for seed in 0..20 {
            let out = mine_negatives(
                &index,
                &anchors,
                &[("a".into(), "pos".into())],
                &known,
                MiningConfig { k: 10, seed },
                &v,
                None,
            )
            .unwrap();
            assert!(out.records.iter().all(|r| r.negative != "pos"));
            assert_eq!(out.accepted().count(), 1);
        }
    }

    #[test]
    fn exhaustion_skips_anchor() {
        let pool = matrix(&[("x", [1.0, 0.0]), ("y", [0.0, 1.0])]);
        let anchors = matrix(&[("a", [1.0, 0.0])]);
        let index = SearchIndex::build(&pool).unwrap();
        let out = mine_negatives(
            &index,
            &anchors,
            &[("a".into(), "p".into())],
            &HashMap::new(),
            MiningConfig::default(),
            &RejectAll,
            None,
        )
        .unwrap();
        assert_eq!(out.accepted().count(), 0);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.skipped.len(), 1);
    }

    #[test]
    fn external_protocol_round_trip() {
        let replies = std::io::Cursor::new(b"not_equivalent\nequivalent\nmaybe\n".to_vec());
        let v = ExternalVerifier::new(replies, Vec::new());
        let req = VerifyRequest {
            anchor_id: "a",
            candidate_id: "b",
            anchor_text: Some("x"),
            candidate_text: Some("y"),
            cosine: 0.5,
        };
        assert_eq!(v.verify(&req).unwrap(), Verdict::Accepted);
        assert_eq!(v.verify(&req).unwrap(), Verdict::Rejected);
        assert!(v.verify(&req).is_err());
        let no_text = VerifyRequest { anchor_text: None, ..req };
        assert!(v.verify(&no_text).is_err());
    }

    #[test]
    fn external_process() {
        let v = ExternalVerifier::spawn("sed -u s/.*/equivalent/").unwrap();
        let req = VerifyRequest {
            anchor_id: "a",
            candidate_id: "b",
            anchor_text: Some("x"),
            candidate_text: Some("y"),
            cosine: 0.5,
        };
        assert_eq!(v.verify(&req).unwrap(), Verdict::Rejected);
    }
}
