//! Simulated corpora with known structure, for tests and experiments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};

use crate::corpus::{Corpus, DocumentMeta, Vocabulary};
use crate::error::{invalid, Result};
use crate::forward::probabilities_at;
use crate::mnir::{Cell, CollapsedCounts};

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, m: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = m;
    let mut mass = 1.0;
    for (j, &q) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == probs.len() || mass <= 0.0 {
            out[j] = left;
            break;
        }
        let share = (q / mass).clamp(0.0, 1.0);
        let x = Binomial::new(left, share).expect("valid binomial").sample(rng);
        out[j] = x;
        left -= x;
        mass -= q;
    }
    out
}

/// Symmetric-or-not Dirichlet draw via normalized gammas.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, conc: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = conc
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        // Every gamma underflowed; fall back to the largest concentration.
        let j = (0..conc.len()).max_by(|&a, &b| conc[a].total_cmp(&conc[b])).unwrap_or(0);
        v.iter_mut().for_each(|x| *x = 0.0);
        v[j] = 1.0;
    }
    v
}

/// Settings for [`topic_corpus`].
#[derive(Debug, Clone)]
pub struct TopicCorpusSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Document lengths drawn uniformly from this inclusive range.
    pub length: (u64, u64),
    /// Dirichlet concentration of each document's topic weights.
    pub weight_concentration: f64,
    /// Dirichlet concentration of each topic's token probabilities.
    pub topic_concentration: f64,
    pub seed: u64,
}

impl TopicCorpusSpec {
    pub fn new(n: usize, p: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            k,
            length: (40, 120),
            weight_concentration: 0.3,
            topic_concentration: 0.1,
            seed,
        }
    }
}

/// A simulated corpus and the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// `K x p`.
    pub theta: DMatrix<f64>,
    /// `n x K`.
    pub omega: DMatrix<f64>,
}

fn vocabulary(p: usize) -> Vocabulary {
    Vocabulary::new((0..p).map(|j| format!("t{j:04}")).collect()).expect("distinct tokens")
}

/// Draw `theta_k ~ Dir`, `omega_i ~ Dir`, `x_i ~ MN(omega_i' Theta, m_i)`.
/// Documents that come out empty are redrawn.
pub fn topic_corpus(spec: &TopicCorpusSpec) -> Result<SyntheticCorpus> {
    let theta: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        (0..spec.k)
            .map(|_| dirichlet(&mut rng, &vec![spec.topic_concentration; spec.p]))
            .collect()
    };
    topic_corpus_from(spec, &theta)
}

/// As [`topic_corpus`] with fixed topics.
pub fn topic_corpus_from(spec: &TopicCorpusSpec, theta: &[Vec<f64>]) -> Result<SyntheticCorpus> {
    let (n, p, k) = (spec.n, spec.p, theta.len());
    if n == 0 || p == 0 || k == 0 || spec.length.0 == 0 || spec.length.0 > spec.length.1 {
        return Err(invalid("synthetic corpus needs n, p, K and lengths >= 1"));
    }
    if theta.iter().any(|t| t.len() != p) {
        return Err(invalid("topic length differs from p"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0F_D0C5);
    let mut omega = DMatrix::zeros(n, k);
    let mut rows = Vec::with_capacity(n);
    let mut probs = vec![0.0; p];
    for i in 0..n {
        loop {
            let w = dirichlet(&mut rng, &vec![spec.weight_concentration; k]);
            for (j, pj) in probs.iter_mut().enumerate() {
                *pj = (0..k).map(|t| w[t] * theta[t][j]).sum();
            }
            let m = rng.random_range(spec.length.0..=spec.length.1);
            let x = multinomial(&mut rng, m, &probs);
            let row: Vec<(u32, u32)> = x
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(j, &c)| (j as u32, c as u32))
                .collect();
            if !row.is_empty() {
                for t in 0..k {
                    omega[(i, t)] = w[t];
                }
                rows.push(row);
                break;
            }
        }
    }
    let meta = (0..n).map(|i| DocumentMeta::new(format!("doc{i:05}"))).collect();
    let corpus = Corpus::from_sparse_rows(vocabulary(p), meta, rows)?;
    let theta = DMatrix::from_fn(k, p, |t, j| theta[t][j]);
    Ok(SyntheticCorpus { corpus, theta, omega })
}

/// Ordered labels drawn from a proportional-odds model on the topic weights:
/// `P(y <= c) = sigmoid(gamma_c - beta' omega_i)`.
pub fn sentiment_from_weights(omega: &DMatrix<f64>, beta: &[f64], cutpoints: &[f64], levels: &[f64], seed: u64) -> Vec<f64> {
    assert_eq!(beta.len(), omega.ncols());
    assert_eq!(cutpoints.len() + 1, levels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..omega.nrows())
        .map(|i| {
            let eta: f64 = (0..beta.len()).map(|t| beta[t] * omega[(i, t)]).sum();
            let probs = probabilities_at(cutpoints, eta);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = probs.len() - 1;
            for (l, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    c = l;
                    break;
                }
            }
            levels[c]
        })
        .collect()
}

/// Collapsed cells drawn from the inverse regression with no subjects:
/// `x_y ~ MN(softmax(alpha + y phi), m)`.
pub fn mnir_cells(alpha: &[f64], phi: &[f64], levels: &[f64], m: u64, seed: u64) -> CollapsedCounts {
    let p = alpha.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = levels
        .iter()
        .map(|&y| {
            let eta: Vec<f64> = (0..p).map(|j| alpha[j] + y * phi[j]).collect();
            let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut q: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            let x = multinomial(&mut rng, m, &q);
            Cell::new(None, y, x.iter().map(|&c| c as f64).collect())
        })
        .collect();
    CollapsedCounts::from_cells(vocabulary(p), cells).expect("cell lengths match")
}
