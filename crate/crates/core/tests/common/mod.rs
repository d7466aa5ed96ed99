#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicdesign::corpus::{Corpus, DocumentMeta, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(p: usize) -> Vocabulary {
    Vocabulary::new((0..p).map(|j| format!("w{j:03}")).collect()).unwrap()
}

/// Corpus from dense count rows; ids `d0, d1, ...`.
pub fn dense_corpus(rows: &[Vec<u32>]) -> Corpus {
    let p = rows[0].len();
    let meta = (0..rows.len()).map(|i| DocumentMeta::new(format!("d{i}"))).collect();
    let sparse = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &x)| x > 0)
                .map(|(j, &x)| (j as u32, x))
                .collect()
        })
        .collect();
    Corpus::from_sparse_rows(vocab(p), meta, sparse).unwrap()
}

/// Random counts with every row nonempty.
pub fn random_counts(rng: &mut ChaCha8Rng, n: usize, p: usize, max: u32) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            let mut r: Vec<u32> = (0..p).map(|_| rng.random_range(0..=max)).collect();
            if r.iter().all(|&x| x == 0) {
                r[rng.random_range(0..p)] = 1;
            }
            r
        })
        .collect()
}

/// Random rows on the simplex.
pub fn simplex_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, k);
    for i in 0..n {
        let v: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = v.iter().sum();
        for c in 0..k {
            m[(i, c)] = v[c] / s;
        }
    }
    m
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
