mod common;

use std::collections::HashSet;

use cpkit_core::embedder::EmbeddingMatrix;
use cpkit_core::index::SearchIndex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive(m: &EmbeddingMatrix, q: &[f64], k: usize, exclude: &HashSet<String>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = (0..m.len())
        .filter(|&r| !exclude.contains(&m.ids()[r]))
        .map(|r| {
            let s = m.row(r).iter().zip(q).fold(0.0f64, |a, (&x, &y)| a + y * f64::from(x));
            (m.ids()[r].clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn top_k_matches_the_naive_scan(seed in any::<u64>(), n in 1usize..300, dim in 1usize..24, k in 1usize..20, dup in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f32> = Vec::new();
        for r in 0..n {
            if r > 0 && rng.gen_bool(dup) {
                let s = rng.gen_range(0..r);
                let row = v[s * dim..(s + 1) * dim].to_vec();
                v.extend(row);
            } else {
                v.extend((0..dim).map(|_| rng.gen_range(-1.0f32..1.0) + 1e-3));
            }
        }
        let ids: Vec<String> = (0..n).map(|i| format!("{:04}", (i * 7919) % 10007)).collect();
        let m = EmbeddingMatrix::new(ids.clone(), dim, v).unwrap();
        let index = SearchIndex::build(&m).unwrap();
        let exclude: HashSet<String> = ids.iter().filter(|_| rng.gen_bool(0.1)).cloned().collect();
        let q = common::unit(&mut rng, dim);
        let got = match index.top_k(&q, k, Some(&exclude)) {
            Ok(h) => h,
            Err(_) => { prop_assert_eq!(exclude.len(), n); return Ok(()); }
        };
        let want = naive(&m, &q, k, &exclude);
        prop_assert_eq!(got.len(), want.len());
        for (i, (h, (id, s))) in got.iter().zip(&want).enumerate() {
            prop_assert_eq!(&h.doc_id, id);
            prop_assert_eq!(h.score, *s);
            prop_assert_eq!(h.rank, i + 1);
        }
    }
}

#[test]
fn exact_duplicates_tie_break_by_id() {
    let m = EmbeddingMatrix::new(vec!["b".into(), "a".into(), "c".into()], 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let index = SearchIndex::build(&m).unwrap();
    let hits = index.top_k(&[1.0f64, 0.0], 3, None).unwrap();
    let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn wrong_dimension_and_zero_k_are_errors() {
    let m = EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0, 0.0]).unwrap();
    let index = SearchIndex::build(&m).unwrap();
    assert!(index.top_k(&[1.0f64], 1, None).is_err());
    assert!(index.top_k(&[1.0f64, 0.0], 0, None).is_err());
}

#[test]
fn f32_and_f64_queries_agree_on_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<f32> = (0..50 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = EmbeddingMatrix::new((0..50).map(|i| format!("d{i:02}")).collect(), 8, v).unwrap();
    let index = SearchIndex::build(&m).unwrap();
    let q = common::unit(&mut rng, 8);
    let q32: Vec<f32> = q.iter().map(|&x| x as f32).collect();
    let q64: Vec<f64> = q32.iter().map(|&x| f64::from(x)).collect();
    assert_eq!(index.top_k(&q32, 5, None).unwrap(), index.top_k(&q64, 5, None).unwrap());
}
