//! Synthetic fixtures shared by the integration tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use cpkit_core::corpus::{Problem, ProblemFormat, Solution, StatementLanguage, Verdict};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COMMON: &[&str] = &[
    "given", "array", "integers", "find", "the", "number", "of", "pairs", "such", "that", "sum", "is",
    "maximum", "minimum", "query", "each", "output", "answer", "modulo", "tree", "graph", "edges",
    "vertices", "string", "length", "print", "value", "index", "segment", "operation",
];

const CODE: &[&str] = &[
    "int", "long", "for", "while", "if", "else", "return", "vector", "cin", "cout", "auto", "push_back",
    "size", "begin", "end", "sort", "max", "min", "const", "void",
];

/// Long enough that a word's 4-grams are, with overwhelming probability,
/// unique to it.
const RARE_LEN: usize = 12;

fn rare_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from(b'a' + rng.gen_range(0..26u8))).collect()
}

/// `n_problems` problems with `sols_per` accepted solutions each. Every
/// problem owns three random 12-letter words that appear in its statement and in
/// each of its solutions; everything else is drawn from shared vocabularies.
/// Years cycle 2020..=2024, so exactly one problem in five is dated on or
/// after 2024-01-01.
pub fn synthetic_corpus(n_problems: usize, sols_per: usize, seed: u64) -> (Vec<Problem>, Vec<Solution>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(n_problems);
    let mut solutions = Vec::with_capacity(n_problems * sols_per);
    for i in 0..n_problems {
        let rare: Vec<String> = (0..3).map(|_| rare_word(&mut rng, RARE_LEN)).collect();
        let mut statement = String::new();
        for s in 0..4 {
            let filler: Vec<&str> = (0..8).map(|_| *COMMON.choose(&mut rng).unwrap()).collect();
            let _ = write!(statement, "{} {} {}. ", filler.join(" "), rare[s % 3], rare[(s + 1) % 3]);
        }
        let year = 2020 + (i % 5) as i32;
        let month = 1 + (i / 5 % 12) as u32;
        problems.push(Problem {
            id: format!("p{i:04}"),
            source: if i % 2 == 0 { "codeforces" } else { "atcoder" }.into(),
            statement,
            statement_language: StatementLanguage::En,
            format: ProblemFormat::Icpc,
            timestamp: NaiveDate::from_ymd_opt(year, month, 1).unwrap(),
            difficulty: None,
            url: None,
        });
        for j in 0..sols_per {
            let mut code = String::from("#include <bits/stdc++.h>\nusing namespace std;\n");
            for line in 0..6 {
                let toks: Vec<&str> = (0..5).map(|_| *CODE.choose(&mut rng).unwrap()).collect();
                let ident = &rare[(line + j) % 3];
                let _ = writeln!(code, "{} {ident}_{line} = {};", toks.join(" "), rng.gen_range(0..1000));
            }
            solutions.push(Solution {
                id: format!("p{i:04}_s{j}"),
                problem_id: format!("p{i:04}"),
                code,
                language: "cpp".into(),
                verdict: Verdict::Accepted,
            });
        }
    }
    (problems, solutions)
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    cpkit_core::corpus::write_jsonl(path, rows).unwrap();
}
