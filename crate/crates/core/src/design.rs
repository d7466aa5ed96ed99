//! Greedy D-optimal ordering of documents in a low-dimensional factor space.
//!
//! With `A_t = Omega_t' Omega_t` for the documents chosen so far, adding a
//! document with factor row `w` multiplies the determinant by
//! `1 + w' A_t^{-1} w`. The greedy rule therefore scores every remaining
//! candidate by that quadratic form, takes the largest, and updates
//! `A^{-1}` by a Sherman-Morrison rank-one step. The marginal variant
//! averages the quadratic form over posterior draws of `w`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Number of rank-one updates between full recomputations of `A^{-1}`.
pub const REFRESH_EVERY: usize = 50;

/// Relative pivot threshold below which a seeded design is singular.
const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorSource {
    Topics,
    Pca,
    Custom,
}

/// Per-document factor coordinates, `n x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    pub values: DMatrix<f64>,
    pub source: FactorSource,
}

impl FactorScores {
    pub fn new(values: DMatrix<f64>, source: FactorSource) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("factor scores must be finite"));
        }
        if source == FactorSource::Topics {
            for (i, row) in values.row_iter().enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-8 || row.iter().any(|&w| w < 0.0) {
                    return Err(invalid(format!("topic weights of row {i} are not on the simplex")));
                }
            }
        }
        Ok(Self { values, source })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }
}

/// Selected documents plus the maintained information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    pub selected: Vec<usize>,
    pub info: DMatrix<f64>,
    pub info_inv: DMatrix<f64>,
    pub log_det: f64,
    updates_since_refresh: usize,
}

impl DesignState {
    /// Build the state for an explicit set of rows; fails if `Omega' Omega`
    /// is singular.
    pub fn from_rows(scores: &FactorScores, selected: Vec<usize>) -> Result<Self> {
        let info = information(scores, &selected);
        let (info_inv, log_det) = invert(&info).ok_or(Error::SingularDesign {
            draws: selected.len(),
        })?;
        Ok(Self {
            selected,
            info,
            info_inv,
            log_det,
            updates_since_refresh: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// `max |A A^{-1} - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let k = self.info.nrows();
        let prod = &self.info * &self.info_inv;
        (prod - DMatrix::<f64>::identity(k, k)).amax()
    }

    /// `log |A|` computed from scratch.
    pub fn direct_log_det(&self) -> Option<f64> {
        linalg::log_det_spd(&self.info)
    }

    fn add(&mut self, index: usize, w: &DVector<f64>) -> f64 {
        let u = &self.info_inv * w;
        let g = w.dot(&u);
        self.info += w * w.transpose();
        self.info_inv -= (&u * u.transpose()) / (1.0 + g);
        self.log_det += g.ln_1p();
        self.selected.push(index);
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_EVERY {
            if let Some((inv, ld)) = invert(&self.info) {
                self.info_inv = inv;
                self.log_det = ld;
            }
            self.updates_since_refresh = 0;
        }
        g
    }
}

fn information(scores: &FactorScores, rows: &[usize]) -> DMatrix<f64> {
    let k = scores.k();
    let mut a = DMatrix::zeros(k, k);
    for &i in rows {
        let w = scores.row(i);
        a += &w * w.transpose();
    }
    a
}

fn invert(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = nalgebra::Cholesky::new(a.clone())?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < SINGULAR_RCOND {
        return None;
    }
    let log_det = linalg::log_det_from_cholesky(&chol);
    Some((chol.inverse(), log_det))
}

/// Seeded permutation of `0..n`. The design seed and the random baseline
/// share it, so both start from the same documents.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedReport {
    /// Documents drawn beyond the first `K` to reach a nonsingular design.
    pub extra_draws: usize,
}

/// Simple random sample of `k` documents, extended one random document at a
/// time until `Omega' Omega` is nonsingular.
pub fn seed_design(scores: &FactorScores, k: usize, seed: u64) -> Result<(DesignState, SeedReport)> {
    let n = scores.n();
    if k != scores.k() {
        return Err(invalid(format!(
            "seed size {k} does not match factor dimension {}",
            scores.k()
        )));
    }
    if n < k {
        return Err(invalid(format!("{n} documents cannot seed a {k}-dimensional design")));
    }
    let order = seeded_permutation(n, seed);
    for size in k..=n {
        if let Ok(state) = DesignState::from_rows(scores, order[..size].to_vec()) {
            return Ok((
                state,
                SeedReport {
                    extra_draws: size - k,
                },
            ));
        }
    }
    Err(Error::SingularDesign { draws: n })
}

/// Candidate scoring rule.
#[derive(Debug, Clone, Copy)]
pub enum Variant<'a> {
    /// Score each document at its point estimate.
    Map,
    /// Average the score over `B x K` posterior draws per document.
    Marginal(&'a [DMatrix<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankStep {
    pub index: usize,
    /// Selection criterion of the chosen document.
    pub gain: f64,
    /// `log |A|` after adding it.
    pub log_det: f64,
}

/// Seeds followed by greedily chosen documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub seeds: Vec<usize>,
    pub seed_log_det: f64,
    pub steps: Vec<RankStep>,
    pub state: DesignState,
}

impl Ranking {
    /// Full selection order, seeds first.
    pub fn order(&self) -> Vec<usize> {
        self.state.selected.clone()
    }
}

fn quad_form(a_inv: &DMatrix<f64>, w: &[f64]) -> f64 {
    let k = w.len();
    let mut s = 0.0;
    for r in 0..k {
        let mut row = 0.0;
        for c in 0..k {
            row += a_inv[(r, c)] * w[c];
        }
        s += w[r] * row;
    }
    s
}

fn candidate_gain(scores: &FactorScores, variant: &Variant<'_>, a_inv: &DMatrix<f64>, i: usize) -> f64 {
    match variant {
        Variant::Map => {
            let w: Vec<f64> = scores.values.row(i).iter().copied().collect();
            quad_form(a_inv, &w)
        }
        Variant::Marginal(draws) => {
            let d = &draws[i];
            let b = d.nrows();
            let mut w = vec![0.0; d.ncols()];
            let mut total = 0.0;
            for r in 0..b {
                for (c, slot) in w.iter_mut().enumerate() {
                    *slot = d[(r, c)];
                }
                total += quad_form(a_inv, &w);
            }
            total / b as f64
        }
    }
}

/// Extend `state` greedily until it holds `t_max` documents or the pool is
/// exhausted. Ties go to the lowest document index.
pub fn greedy_rank(
    scores: &FactorScores,
    mut state: DesignState,
    t_max: usize,
    variant: Variant<'_>,
) -> Result<Ranking> {
    let n = scores.n();
    if t_max < state.len() {
        return Err(invalid(format!(
            "t_max = {t_max} is smaller than the current design of {}",
            state.len()
        )));
    }
    if let Variant::Marginal(draws) = &variant {
        if draws.len() != n {
            return Err(invalid(format!("{} draw sets for {n} documents", draws.len())));
        }
        if let Some(i) = draws.iter().position(|d| d.nrows() == 0 || d.ncols() != scores.k()) {
            return Err(invalid(format!("draw set for document {i} is empty or misshaped")));
        }
    }
    let mut taken = vec![false; n];
    for &i in &state.selected {
        taken[i] = true;
    }
    let seeds = state.selected.clone();
    let seed_log_det = state.log_det;
    let mut steps = Vec::new();
    let target = t_max.min(n);
    while state.len() < target {
        let a_inv = &state.info_inv;
        let best = (0..n)
            .into_par_iter()
            .filter(|&i| !taken[i])
            .map(|i| (i, candidate_gain(scores, &variant, a_inv, i)))
            .try_fold(
                || None::<(usize, f64)>,
                |best, (i, g)| {
                    if !g.is_finite() {
                        return Err(Error::NonFiniteGain(i));
                    }
                    Ok(Some(pick(best, (i, g))))
                },
            )
            .try_reduce(
                || None,
                |a, b| {
                    Ok(match (a, b) {
                        (Some(x), Some(y)) => Some(pick(Some(x), y)),
                        (x, None) => x,
                        (None, y) => y,
                    })
                },
            )?;
        let Some((index, gain)) = best else { break };
        taken[index] = true;
        state.add(index, &scores.row(index));
        steps.push(RankStep {
            index,
            gain,
            log_det: state.log_det,
        });
    }
    Ok(Ranking {
        seeds,
        seed_log_det,
        steps,
        state,
    })
}

fn pick(best: Option<(usize, f64)>, cand: (usize, f64)) -> (usize, f64) {
    match best {
        None => cand,
        Some(b) => {
            if cand.1 > b.1 || (cand.1 == b.1 && cand.0 < b.0) {
                cand
            } else {
                b
            }
        }
    }
}

/// Leading principal components of the centered token-frequency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponents {
    /// `p x K`, unit columns.
    pub loadings: DMatrix<f64>,
    /// `n x K`.
    pub scores: DMatrix<f64>,
    /// Variance captured by each retained component.
    pub variances: Vec<f64>,
    /// Sum of all column variances.
    pub total_variance: f64,
}

fn centered_frequencies(corpus: &Corpus) -> DMatrix<f64> {
    let n = corpus.n_docs();
    let p = corpus.n_terms();
    let mut f = DMatrix::zeros(n, p);
    for i in 0..n {
        let m = corpus.total(i) as f64;
        for (j, x) in corpus.row(i).iter() {
            f[(i, j)] = f64::from(x) / m;
        }
    }
    for j in 0..p {
        let mean = f.column(j).mean();
        f.column_mut(j).add_scalar_mut(-mean);
    }
    f
}

/// First `k` principal components of the row frequencies `x_i / m_i`.
///
/// Each component's sign is fixed so that its largest-magnitude loading is
/// positive.
pub fn principal_components(corpus: &Corpus, k: usize) -> Result<PrincipalComponents> {
    let n = corpus.n_docs();
    let p = corpus.n_terms();
    if k == 0 {
        return Err(invalid("number of components must be at least 1"));
    }
    if n <= k {
        return Err(invalid(format!("need more than {k} documents, have {n}")));
    }
    let fc = centered_frequencies(corpus);
    let denom = (n - 1) as f64;

    // Eigen-decompose whichever of F'F and FF' is smaller.
    let gram_route = n < p;
    let sym = if gram_route {
        &fc * fc.transpose()
    } else {
        fc.transpose() * &fc
    };
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let total_variance = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / denom;
    let threshold = 1e-10 * top.max(f64::MIN_POSITIVE);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > threshold && top > 0.0)
        .count();
    if rank < k {
        return Err(Error::RankDeficient {
            achievable: rank,
            requested: k,
        });
    }

    let mut loadings = DMatrix::zeros(p, k);
    let mut variances = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mu = eig.eigenvalues[idx];
        let vec = eig.eigenvectors.column(idx);
        let v: DVector<f64> = if gram_route {
            (fc.transpose() * vec) / mu.sqrt()
        } else {
            vec.into_owned()
        };
        let v = v.normalize();
        let lead = v.iamax();
        let v = if v[lead] < 0.0 { -v } else { v };
        loadings.set_column(c, &v);
        variances.push(mu / denom);
    }
    let scores = &fc * &loadings;
    Ok(PrincipalComponents {
        loadings,
        scores,
        variances,
        total_variance,
    })
}

/// Principal-component scores as design factors.
pub fn pca_scores(corpus: &Corpus, k: usize) -> Result<FactorScores> {
    let pc = principal_components(corpus, k)?;
    FactorScores::new(pc.scores, FactorSource::Pca)
}
