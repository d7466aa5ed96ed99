//! Multinomial topic factorization fit by joint MAP estimation.
//!
//! Each document's counts are modelled as
//! `x_i ~ MN(omega_i1 theta_1 + ... + omega_iK theta_K, m_i)` with
//! independent Dirichlet priors on every `omega_i` and `theta_k`. The
//! posterior is maximized in the natural (softmax) parametrization, which is
//! the same as ordinary MAP estimation with every Dirichlet concentration
//! raised by one. With the standard Dirichlet density `prod w^(a - 1)` that
//! makes the objective
//!
//! ```text
//! L = sum_ij x_ij log(sum_k omega_ik theta_kj)
//!     + a_omega sum_ik log omega_ik + a_theta sum_kj log theta_kj
//! ```
//!
//! which is maximized by MAP-EM: responsibilities `r_ijk ∝ omega_ik theta_kj`,
//! then closed-form updates `theta_kj ∝ sum_i x_ij r_ijk + a_theta` and
//! `omega_ik ∝ sum_j x_ij r_ijk + a_omega`. Every iteration is monotone in `L`.
//!
//! The conditional posterior of a document's natural weights
//! `lambda_i = (log omega_i2/omega_i1, ..., log omega_iK/omega_i1)` is
//! approximated by `N(lambda_hat_i, H_i^{-1})` with
//! `H_i = (m_i + K a_omega) (diag(w) - w w')` on the free coordinates. The
//! same block-diagonal curvature, with per-topic blocks
//! `(N_k + p a_theta)(diag(theta_k) - theta_k theta_k')`, gives a Laplace
//! estimate of `log p(X | K)` for choosing the number of topics.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, JITTER};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const CHUNK: usize = 256;

/// Dirichlet concentrations for document weights and topics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicPrior {
    pub omega_concentration: f64,
    pub theta_concentration: f64,
}

impl TopicPrior {
    /// `1/K` for weights and `1/(K p)` for topics.
    pub fn for_dims(k: usize, p: usize) -> Self {
        Self {
            omega_concentration: 1.0 / k as f64,
            theta_concentration: 1.0 / (k * p) as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega_concentration > 0.0 && self.theta_concentration > 0.0) {
            return Err(invalid("topic prior concentrations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicFitOptions {
    /// Stop when the relative change of the log posterior drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TopicFitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicFitReport {
    /// Number of parameter updates performed.
    pub iterations: usize,
    pub relative_change: f64,
    pub converged: bool,
    /// Log posterior evaluated before every update and at the returned
    /// estimate.
    pub objective_path: Vec<f64>,
}

/// A fitted `K`-topic factorization of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    /// `K x p`, rows on the simplex.
    pub theta: DMatrix<f64>,
    /// `n x K`, rows on the simplex.
    pub omega: DMatrix<f64>,
    /// `n x (K-1)` natural parameters, first category as reference.
    pub lambda: DMatrix<f64>,
    pub prior: TopicPrior,
    pub doc_ids: Vec<String>,
    /// Document lengths `m_i`.
    pub totals: Vec<f64>,
    pub log_posterior: f64,
    pub report: TopicFitReport,
}

struct Params {
    /// `p x K`, row `j` holds `theta_{.j}`.
    theta_t: Vec<f64>,
    /// `n x K` row-major.
    omega: Vec<f64>,
}

struct Estep {
    log_post: f64,
    /// Expected topic counts per document, `n x K`.
    doc_topic: Vec<f64>,
    /// Expected token counts per topic, `p x K`.
    topic_token: Vec<f64>,
}

fn e_step(corpus: &Corpus, k: usize, params: &Params, prior: &TopicPrior) -> Estep {
    let p = corpus.n_terms();
    let n = corpus.n_docs();
    let chunks: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|docs| {
            let mut ll = 0.0;
            let mut doc_topic = vec![0.0; docs.len() * k];
            let mut topic_token = vec![0.0; p * k];
            let mut scratch = vec![0.0; k];
            for (local, &i) in docs.iter().enumerate() {
                let w = &params.omega[i * k..(i + 1) * k];
                let dt = &mut doc_topic[local * k..(local + 1) * k];
                for (j, x) in corpus.row(i).iter() {
                    let th = &params.theta_t[j * k..(j + 1) * k];
                    let mut mix = 0.0;
                    for h in 0..k {
                        scratch[h] = w[h] * th[h];
                        mix += scratch[h];
                    }
                    let x = f64::from(x);
                    ll += x * mix.max(PROB_FLOOR).ln();
                    if mix > 0.0 {
                        let scale = x / mix;
                        let tt = &mut topic_token[j * k..(j + 1) * k];
                        for h in 0..k {
                            let r = scratch[h] * scale;
                            dt[h] += r;
                            tt[h] += r;
                        }
                    }
                }
            }
            (ll, doc_topic, topic_token)
        })
        .collect();

    let mut ll = 0.0;
    let mut doc_topic = Vec::with_capacity(n * k);
    let mut topic_token = vec![0.0; p * k];
    for (c_ll, c_dt, c_tt) in chunks {
        ll += c_ll;
        doc_topic.extend(c_dt);
        for (a, b) in topic_token.iter_mut().zip(c_tt) {
            *a += b;
        }
    }
    let log_prior_omega: f64 = params.omega.iter().map(|w| w.max(PROB_FLOOR).ln()).sum();
    let log_prior_theta: f64 = params.theta_t.iter().map(|t| t.max(PROB_FLOOR).ln()).sum();
    Estep {
        log_post: ll
            + prior.omega_concentration * log_prior_omega
            + prior.theta_concentration * log_prior_theta,
        doc_topic,
        topic_token,
    }
}

fn m_step(corpus: &Corpus, k: usize, e: &Estep, prior: &TopicPrior, params: &mut Params) {
    let p = corpus.n_terms();
    let a_w = prior.omega_concentration;
    let a_t = prior.theta_concentration;
    for (i, w) in params.omega.chunks_mut(k).enumerate() {
        let dt = &e.doc_topic[i * k..(i + 1) * k];
        let denom = corpus.total(i) as f64 + k as f64 * a_w;
        for h in 0..k {
            w[h] = (dt[h] + a_w) / denom;
        }
    }
    let mut topic_mass = vec![0.0; k];
    for j in 0..p {
        for h in 0..k {
            topic_mass[h] += e.topic_token[j * k + h];
        }
    }
    for j in 0..p {
        for h in 0..k {
            params.theta_t[j * k + h] =
                (e.topic_token[j * k + h] + a_t) / (topic_mass[h] + p as f64 * a_t);
        }
    }
}

fn initial_params(corpus: &Corpus, k: usize, seed: u64) -> Params {
    let n = corpus.n_docs();
    let p = corpus.n_terms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grand = corpus.grand_total() as f64;
    let global: Vec<f64> = corpus.column_totals().iter().map(|&c| c as f64 / grand).collect();
    let seeds = sample(&mut rng, n, k).into_vec();
    let mut theta_t = vec![0.0; p * k];
    for (h, &doc) in seeds.iter().enumerate() {
        // Half the seed document's frequencies, half the corpus-wide shares.
        let f = corpus.frequencies(doc);
        for j in 0..p {
            theta_t[j * k + h] = 0.5 * f[j] + 0.5 * global[j];
        }
    }
    Params {
        theta_t,
        omega: vec![1.0 / k as f64; n * k],
    }
}

/// Joint MAP fit of a `K`-topic model.
pub fn fit_topics(
    corpus: &Corpus,
    k: usize,
    prior: &TopicPrior,
    options: &TopicFitOptions,
) -> Result<TopicModel> {
    prior.validate()?;
    let n = corpus.n_docs();
    let p = corpus.n_terms();
    if k == 0 {
        return Err(invalid("number of topics must be at least 1"));
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if k > n {
        return Err(invalid(format!("K = {k} exceeds the {n} documents")));
    }

    let mut params = initial_params(corpus, k, options.seed);
    let mut path: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut relative_change = f64::INFINITY;
    let mut converged = false;
    loop {
        let e = e_step(corpus, k, &params, prior);
        if !e.log_post.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: iterations,
            });
        }
        if let Some(&prev) = path.last() {
            relative_change = (e.log_post - prev).abs() / e.log_post.abs().max(1.0);
        }
        path.push(e.log_post);
        if relative_change < options.tol {
            converged = true;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        m_step(corpus, k, &e, prior, &mut params);
        iterations += 1;
    }

    // Order topics by total usage sum_i omega_ik m_i, largest first.
    let mut usage = vec![0.0; k];
    for i in 0..n {
        let m = corpus.total(i) as f64;
        for h in 0..k {
            usage[h] += params.omega[i * k + h] * m;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| usage[b].total_cmp(&usage[a]).then(a.cmp(&b)));

    let theta = DMatrix::from_fn(k, p, |h, j| params.theta_t[j * k + order[h]]);
    let omega = DMatrix::from_fn(n, k, |i, h| params.omega[i * k + order[h]]);
    let lambda = natural_weights(&omega);
    Ok(TopicModel {
        k,
        theta,
        omega,
        lambda,
        prior: *prior,
        doc_ids: corpus.metas().iter().map(|m| m.id.clone()).collect(),
        totals: corpus.totals().iter().map(|&m| m as f64).collect(),
        log_posterior: *path.last().expect("at least one evaluation"),
        report: TopicFitReport {
            iterations,
            relative_change,
            converged,
            objective_path: path,
        },
    })
}

/// `lambda_{i,k-1} = log(omega_ik / omega_i1)` for `k = 2..K`.
pub fn natural_weights(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let k = omega.ncols();
    DMatrix::from_fn(omega.nrows(), k.saturating_sub(1), |i, h| {
        omega[(i, h + 1)].max(PROB_FLOOR).ln() - omega[(i, 0)].max(PROB_FLOOR).ln()
    })
}

impl TopicModel {
    pub fn n_docs(&self) -> usize {
        self.omega.nrows()
    }

    pub fn weights(&self, doc: usize) -> Vec<f64> {
        self.omega.row(doc).iter().copied().collect()
    }

    /// Dense copy of `omega` as the factor coordinates used for design.
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        self.omega.clone()
    }
}

/// Laplace estimate of `log p(X | K)` and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMarginal {
    pub value: f64,
    /// Log joint posterior at the estimate, including normalizing constants.
    pub log_joint: f64,
    /// Free parameters: `n (K-1) + K (p-1)`.
    pub dim: usize,
    /// Number of Hessian blocks that needed diagonal jitter.
    pub jittered_blocks: usize,
}

fn log_multinomial_coefficients(corpus: &Corpus) -> f64 {
    (0..corpus.n_docs())
        .map(|i| {
            let m = corpus.total(i) as f64;
            ln_gamma(m + 1.0)
                - corpus
                    .row(i)
                    .iter()
                    .map(|(_, x)| ln_gamma(f64::from(x) + 1.0))
                    .sum::<f64>()
        })
        .sum()
}

fn block_log_det(probs: &[f64], scale: f64, jittered: &mut usize) -> f64 {
    let boundary = probs.iter().any(|&w| w <= PROB_FLOOR);
    match linalg::softmax_curvature_log_det(probs, scale, 0.0) {
        Some(v) if !boundary && v.is_finite() => v,
        _ => {
            *jittered += 1;
            let clamped: Vec<f64> = probs.iter().map(|w| w.max(PROB_FLOOR)).collect();
            linalg::softmax_curvature_log_det(&clamped, scale, JITTER)
                .unwrap_or_else(|| (probs.len() - 1) as f64 * JITTER.ln())
        }
    }
}

/// Laplace approximation to the marginal likelihood of `corpus` under the
/// fitted `model`, using block-diagonal curvature.
pub fn log_marginal(model: &TopicModel, corpus: &Corpus) -> Result<LogMarginal> {
    let n = corpus.n_docs();
    let p = corpus.n_terms();
    let k = model.k;
    if model.n_docs() != n || model.theta.ncols() != p {
        return Err(invalid("topic model was not fit on this corpus"));
    }
    let prior = &model.prior;
    let params = Params {
        theta_t: (0..p * k).map(|idx| model.theta[(idx % k, idx / k)]).collect(),
        omega: (0..n * k).map(|idx| model.omega[(idx / k, idx % k)]).collect(),
    };
    let e = e_step(corpus, k, &params, prior);

    let (a_w, a_t) = (prior.omega_concentration, prior.theta_concentration);
    let kf = k as f64;
    let pf = p as f64;
    let norm_omega = n as f64 * (ln_gamma(kf * a_w) - kf * ln_gamma(a_w));
    let norm_theta = kf * (ln_gamma(pf * a_t) - pf * ln_gamma(a_t));
    let log_joint = e.log_post + log_multinomial_coefficients(corpus) + norm_omega + norm_theta;

    let mut jittered = 0;
    let mut log_det = 0.0;
    if k > 1 {
        for i in 0..n {
            let w = &params.omega[i * k..(i + 1) * k];
            let scale = corpus.total(i) as f64 + kf * a_w;
            log_det += block_log_det(w, scale, &mut jittered);
        }
    }
    if p > 1 {
        for h in 0..k {
            let theta: Vec<f64> = model.theta.row(h).iter().copied().collect();
            let mass: f64 = (0..p).map(|j| e.topic_token[j * k + h]).sum();
            log_det += block_log_det(&theta, mass + pf * a_t, &mut jittered);
        }
    }
    let dim = n * (k - 1) + k * (p - 1);
    let value = log_joint + 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    Ok(LogMarginal {
        value,
        log_joint,
        dim,
        jittered_blocks: jittered,
    })
}

/// Result of fitting a grid of topic counts.
#[derive(Debug, Clone)]
pub struct KSelection {
    pub best_k: usize,
    pub candidates: Vec<(usize, LogMarginal)>,
    pub model: TopicModel,
}

/// Fit every `K` in `grid` with the default prior and keep the one with the
/// largest Laplace marginal likelihood. Ties go to the smaller `K`.
pub fn select_k(corpus: &Corpus, grid: &[usize], options: &TopicFitOptions) -> Result<KSelection> {
    if grid.is_empty() {
        return Err(invalid("empty K grid"));
    }
    let mut best: Option<(usize, f64, TopicModel)> = None;
    let mut candidates = Vec::with_capacity(grid.len());
    for &k in grid {
        let prior = TopicPrior::for_dims(k, corpus.n_terms());
        let model = fit_topics(corpus, k, &prior, options)?;
        let lm = log_marginal(&model, corpus)?;
        candidates.push((k, lm));
        let better = match &best {
            None => true,
            Some((bk, bv, _)) => lm.value > *bv || (lm.value == *bv && k < *bk),
        };
        if better {
            best = Some((k, lm.value, model));
        }
    }
    let (best_k, _, model) = best.expect("grid nonempty");
    Ok(KSelection {
        best_k,
        candidates,
        model,
    })
}

/// Conditional posterior of one document's topic weights given `Theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPosterior {
    pub doc_id: String,
    /// `lambda_hat_i`, length `K-1`.
    pub mean: DVector<f64>,
    /// `H_i`, `(K-1) x (K-1)`.
    pub precision: DMatrix<f64>,
    /// Draws of `omega_i`, each of length `K`.
    pub samples: Vec<Vec<f64>>,
    pub jittered: bool,
}

/// `(m + prior_mass) (diag(w) - w w')` on the free coordinates, where
/// `prior_mass = K a_omega` for the model's prior.
pub fn weight_precision(omega: &[f64], total: f64, prior_mass: f64) -> DMatrix<f64> {
    linalg::softmax_curvature(omega, total + prior_mass)
}

/// Draw `b` samples of a document's topic weights from the Laplace
/// approximation `N(lambda_hat_i, H_i^{-1})` mapped back to the simplex.
pub fn sample_weights(model: &TopicModel, doc: usize, b: usize, seed: u64) -> Result<WeightPosterior> {
    if b == 0 {
        return Err(invalid("number of posterior draws must be at least 1"));
    }
    if doc >= model.n_docs() {
        return Err(invalid(format!("document index {doc} out of range")));
    }
    let k = model.k;
    let omega = model.weights(doc);
    let mean = DVector::from_iterator(k - 1, model.lambda.row(doc).iter().copied());
    let precision = weight_precision(
        &omega,
        model.totals[doc],
        k as f64 * model.prior.omega_concentration,
    );
    if k == 1 {
        return Ok(WeightPosterior {
            doc_id: model.doc_ids[doc].clone(),
            mean,
            precision,
            samples: vec![vec![1.0]; b],
            jittered: false,
        });
    }
    let (chol, jittered) = linalg::cholesky_with_jitter(&precision).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("weight precision of document {doc}"))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..b)
        .map(|_| {
            let z = DVector::from_fn(k - 1, |_, _| StandardNormal.sample(&mut rng));
            let lam = &mean + linalg::solve_upper_transpose(&chol, &z);
            linalg::softmax_with_zero(lam.as_slice())
        })
        .collect();
    Ok(WeightPosterior {
        doc_id: model.doc_ids[doc].clone(),
        mean,
        precision,
        samples,
        jittered,
    })
}

/// `b` posterior draws for every document, as one `b x K` matrix each.
/// Document `i` uses a stream derived from `(seed, i)`, so the result does
/// not depend on thread scheduling.
pub fn posterior_draws(model: &TopicModel, b: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    (0..model.n_docs())
        .into_par_iter()
        .map(|i| {
            let post = sample_weights(model, i, b, stream_seed(seed, i as u64))?;
            Ok(DMatrix::from_fn(b, model.k, |r, c| post.samples[r][c]))
        })
        .collect()
}

/// Independent child seed for stream `stream` of `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `lift_kj = theta_kj / (total count of token j / total tokens)`.
pub fn topic_lift(model: &TopicModel, corpus: &Corpus) -> Result<DMatrix<f64>> {
    if model.theta.ncols() != corpus.n_terms() {
        return Err(invalid("topic model and corpus vocabularies differ in size"));
    }
    let grand = corpus.grand_total() as f64;
    let share: Vec<f64> = corpus.column_totals().iter().map(|&c| c as f64 / grand).collect();
    Ok(DMatrix::from_fn(model.k, corpus.n_terms(), |h, j| {
        model.theta[(h, j)] / share[j]
    }))
}
