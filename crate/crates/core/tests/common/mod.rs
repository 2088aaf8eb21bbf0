#![allow(dead_code)]

use chrono::NaiveDate;
use cpkit_core::corpus::{Corpus, Problem, ProblemFormat, Solution, StatementLanguage, Verdict};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &[
    "given", "array", "find", "number", "pairs", "sum", "maximum", "query", "output", "tree", "graph", "string",
];
const CODE: &[&str] = &["int", "for", "while", "return", "vector", "cin", "cout", "auto", "sort", "max"];

pub fn problem(id: &str, statement: &str, date: NaiveDate) -> Problem {
    Problem {
        id: id.into(),
        source: "codeforces".into(),
        statement: statement.into(),
        statement_language: StatementLanguage::En,
        format: ProblemFormat::Icpc,
        timestamp: date,
        difficulty: None,
        url: None,
    }
}

/// Problems whose statements and solutions share three random 12-letter words.
pub fn separable(n: usize, sols_per: usize, seed: u64) -> (Corpus, Vec<Solution>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let date = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    let mut problems = Vec::new();
    let mut solutions = Vec::new();
    for i in 0..n {
        let rare: Vec<String> = (0..3)
            .map(|_| (0..12).map(|_| char::from(b'a' + rng.gen_range(0..26u8))).collect())
            .collect();
        let mut st = String::new();
        for s in 0..4 {
            let f: Vec<&str> = (0..6).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            st.push_str(&format!("{} {} {}. ", f.join(" "), rare[s % 3], rare[(s + 1) % 3]));
        }
        let id = format!("p{i:03}");
        problems.push(problem(&id, &st, date));
        for j in 0..sols_per {
            let mut code = String::new();
            for line in 0..4 {
                let t: Vec<&str> = (0..4).map(|_| *CODE.choose(&mut rng).unwrap()).collect();
                code.push_str(&format!("{} {}_{line};\n", t.join(" "), rare[(line + j) % 3]));
            }
            solutions.push(Solution {
                id: format!("{id}_s{j}"),
                problem_id: id.clone(),
                code,
                language: "cpp".into(),
                verdict: Verdict::Accepted,
            });
        }
    }
    (Corpus::new(problems).unwrap(), solutions)
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}
