//! Random removal of formatting sections (I/O format, samples, constraints)
//! from problem statements.
//!
//! Sections start at heading lines such as `Input Format`, `## Sample Input 1`,
//! `Constraints:`, `输入格式` or `入力例 1`, and run until the next heading.
//! Text before the first heading and sections under narrative headings
//! (`Note`, `Explanation`, `提示`, ...) are never removed. Statements without
//! recognizable headings pass through unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_io_format: f64,
    pub mask_samples: f64,
    pub mask_constraints: f64,
    pub seed: u64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self::uniform(0.5, 0)
    }
}

impl MaskingPolicy {
    pub fn uniform(p: f64, seed: u64) -> Self {
        Self {
            mask_io_format: p,
            mask_samples: p,
            mask_constraints: p,
            seed,
        }
    }

    pub fn disabled() -> Self {
        Self::uniform(0.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.mask_io_format, self.mask_samples, self.mask_constraints] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("masking probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.mask_io_format == 0.0 && self.mask_samples == 0.0 && self.mask_constraints == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionKind {
    Narrative,
    IoFormat,
    Samples,
    Constraints,
}

/// A detected section: its kind and the half-open line range it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub lines: std::ops::Range<usize>,
}

const IO_HEADINGS: &[&str] = &[
    "input",
    "output",
    "input format",
    "output format",
    "input specification",
    "output specification",
    "input data",
    "output data",
    "input description",
    "output description",
    "input and output",
    "input and output format",
    "input/output",
    "input / output",
    "输入",
    "输出",
    "输入格式",
    "输出格式",
    "输入输出格式",
    "输入描述",
    "输出描述",
    "入力",
    "出力",
];

const CONSTRAINT_HEADINGS: &[&str] = &[
    "constraint",
    "constraints",
    "limits",
    "limitations",
    "data range",
    "data constraints",
    "数据范围",
    "数据范围与提示",
    "数据规模与约定",
    "约束",
    "约束条件",
    "制約",
];

const NARRATIVE_HEADINGS: &[&str] = &[
    "note",
    "notes",
    "hint",
    "hints",
    "explanation",
    "description",
    "statement",
    "problem",
    "problem statement",
    "problem description",
    "legend",
    "background",
    "story",
    "提示",
    "说明",
    "题目描述",
    "题目背景",
    "题意",
    "問題文",
    "問題",
];

const SAMPLE_PREFIXES: &[&str] = &["sample", "example"];
const SAMPLE_CJK: &[&str] = &["样例", "入力例", "出力例", "入出力例"];

fn heading_key(line: &str) -> Option<String> {
    let t = line.trim();
    if t.is_empty() || t.ends_with('.') || t.contains('。') || t.contains(',') {
        return None;
    }
    let stripped = t
        .trim_start_matches(|c: char| matches!(c, '#' | '*' | '【' | '[' | '>' | '-' | '=') || c.is_whitespace())
        .trim_end_matches(|c: char| {
            matches!(c, ':' | '：' | '】' | ']' | '*' | '#' | '-' | '=') || c.is_whitespace()
        });
    let key = stripped
        .to_lowercase()
        .trim_end_matches(|c: char| c.is_ascii_digit() || c.is_whitespace() || c == '#')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if key.is_empty() || key.chars().count() > 40 {
        return None;
    }
    Some(key)
}

/// Classifies a line as a section heading.
pub fn classify_heading(line: &str) -> Option<SectionKind> {
    let key = heading_key(line)?;
    let words = key.split(' ').count();
    if words <= 4
        && (SAMPLE_PREFIXES.iter().any(|p| key.starts_with(p))
            || SAMPLE_CJK.iter().any(|p| key.contains(p)))
    {
        return Some(SectionKind::Samples);
    }
    let is = |set: &[&str]| set.contains(&key.as_str());
    if is(IO_HEADINGS) {
        Some(SectionKind::IoFormat)
    } else if is(CONSTRAINT_HEADINGS) {
        Some(SectionKind::Constraints)
    } else if is(NARRATIVE_HEADINGS) {
        Some(SectionKind::Narrative)
    } else {
        None
    }
}

/// Splits a statement into sections by heading lines. The leading block
/// before the first heading is narrative.
pub fn detect_sections(statement: &str) -> Vec<Section> {
    let lines: Vec<&str> = statement.split_inclusive('\n').collect();
    let mut sections = Vec::new();
    let mut start = 0;
    let mut kind = SectionKind::Narrative;
    for (i, line) in lines.iter().enumerate() {
        if let Some(k) = classify_heading(line) {
            if i > start {
                sections.push(Section { kind, lines: start..i });
            }
            start = i;
            kind = k;
        }
    }
    if lines.len() > start {
        sections.push(Section {
            kind,
            lines: start..lines.len(),
        });
    }
    sections
}

/// Masks `statement` with an RNG derived from `policy.seed`.
pub fn apply_masking(policy: &MaskingPolicy, statement: &str) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    apply_masking_with(policy, statement, &mut rng)
}

/// Masks `statement` drawing from `rng`. Exactly three draws are consumed
/// (one per maskable kind, in a fixed order) whatever the statement holds.
pub fn apply_masking_with<R: Rng>(policy: &MaskingPolicy, statement: &str, rng: &mut R) -> String {
    let drop_io = rng.gen::<f64>() < policy.mask_io_format;
    let drop_samples = rng.gen::<f64>() < policy.mask_samples;
    let drop_constraints = rng.gen::<f64>() < policy.mask_constraints;
    if !(drop_io || drop_samples || drop_constraints) {
        return statement.to_owned();
    }
    let lines: Vec<&str> = statement.split_inclusive('\n').collect();
    let mut out = String::with_capacity(statement.len());
    for s in detect_sections(statement) {
        let dropped = match s.kind {
            SectionKind::Narrative => false,
            SectionKind::IoFormat => drop_io,
            SectionKind::Samples => drop_samples,
            SectionKind::Constraints => drop_constraints,
        };
        if !dropped {
            for l in &lines[s.lines] {
                out.push_str(l);
            }
        }
    }
    out
}
