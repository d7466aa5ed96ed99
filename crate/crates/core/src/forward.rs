//! Proportional-odds regression of ordered sentiment on SR scores.
//!
//! ```text
//! P(y <= c) = 1 / (1 + exp(beta_0 z_0 + beta_s z_s - gamma_c))
//! ```
//!
//! Cutpoints are unpenalized and parametrized as `(gamma_1, log gaps)` so
//! that every iterate stays strictly increasing; each coefficient carries an
//! independent Student-t prior. Two levels give binary logistic regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::mnir::{SRScores, SentimentScale};

/// Student-t prior on each forward coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPrior {
    pub df: f64,
    pub scale: f64,
    pub center: f64,
}

impl Default for TPrior {
    fn default() -> Self {
        Self {
            df: 7.0,
            scale: 2.5,
            center: 0.0,
        }
    }
}

impl TPrior {
    /// Log density up to a constant.
    pub fn log_density(&self, b: f64) -> f64 {
        let u = (b - self.center) / self.scale;
        -0.5 * (self.df + 1.0) * (u * u / self.df).ln_1p()
    }

    pub fn gradient(&self, b: f64) -> f64 {
        let d = b - self.center;
        let v = self.df * self.scale * self.scale;
        -(self.df + 1.0) * d / (v + d * d)
    }

    pub fn curvature(&self, b: f64) -> f64 {
        let d = b - self.center;
        let v = self.df * self.scale * self.scale;
        -(self.df + 1.0) * (v - d * d) / ((v + d * d) * (v + d * d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub prior: TPrior,
    /// Stop once the max-norm of the gradient falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            prior: TPrior::default(),
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub log_likelihood: f64,
    pub log_posterior: f64,
}

/// Fitted cutpoints and coefficients over the levels seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    /// Sentiment codes the model predicts over, ascending.
    pub levels: Vec<f64>,
    /// One per level but the top, strictly increasing.
    pub cutpoints: Vec<f64>,
    pub beta0: f64,
    pub subjects: Vec<String>,
    pub beta_s: Vec<f64>,
    pub prior: TPrior,
    pub report: Option<ForwardReport>,
}

/// Predicted class and its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub index: usize,
    pub level: f64,
    /// Nats.
    pub entropy: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ForwardModel {
    /// Assemble a model from known parameters.
    pub fn from_parts(levels: Vec<f64>, cutpoints: Vec<f64>, beta0: f64, subjects: Vec<String>, beta_s: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || cutpoints.len() + 1 != levels.len() {
            return Err(invalid("need one cutpoint per level but the top"));
        }
        if cutpoints.windows(2).any(|w| !(w[0] < w[1])) || cutpoints.iter().any(|g| !g.is_finite()) {
            return Err(invalid("cutpoints must be finite and strictly increasing"));
        }
        if subjects.len() != beta_s.len() {
            return Err(invalid("one subject coefficient per subject"));
        }
        Ok(Self {
            levels,
            cutpoints,
            beta0,
            subjects,
            beta_s,
            prior: TPrior::default(),
            report: None,
        })
    }

    /// `beta' z` for one document; subjects without a coefficient add nothing.
    pub fn linear_predictor(&self, z0: f64, zs: f64, subject: Option<&str>) -> f64 {
        let mut eta = self.beta0 * z0;
        if let Some(s) = subject.and_then(|s| self.subjects.iter().position(|x| x == s)) {
            eta += self.beta_s[s] * zs;
        }
        eta
    }

    /// Level probabilities for one document.
    pub fn probabilities(&self, z0: f64, zs: f64, subject: Option<&str>) -> Vec<f64> {
        probabilities_at(&self.cutpoints, self.linear_predictor(z0, zs, subject))
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Differences of adjacent cumulative logits at linear predictor `eta`.
pub fn probabilities_at(cutpoints: &[f64], eta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(cutpoints.len() + 1);
    let mut prev = 0.0;
    for &g in cutpoints {
        let c = sigmoid(g - eta);
        out.push((c - prev).max(0.0));
        prev = c;
    }
    out.push((1.0 - prev).max(0.0));
    out
}

/// Probabilities for every document, in score order.
pub fn predict_probs(model: &ForwardModel, scores: &SRScores) -> Vec<Vec<f64>> {
    (0..scores.len())
        .into_par_iter()
        .map(|i| model.probabilities(scores.z0[i], scores.zs[i], scores.subjects[i].as_deref()))
        .collect()
}

/// `-sum p log p` in nats, with `0 log 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Most probable level; ties go to the level nearest the middle of the scale.
pub fn classify_probs(levels: &[f64], probs: &[f64]) -> Classification {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = (probs.len() as f64 - 1.0) / 2.0;
    let index = (0..probs.len())
        .filter(|&c| probs[c] >= max - 1e-12)
        .min_by(|&a, &b| {
            let da = (a as f64 - mid).abs();
            let db = (b as f64 - mid).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0);
    Classification {
        index,
        level: levels[index],
        entropy: entropy(probs),
    }
}

pub fn classify(model: &ForwardModel, scores: &SRScores) -> Vec<Classification> {
    predict_probs(model, scores)
        .iter()
        .map(|p| classify_probs(&model.levels, p))
        .collect()
}

/// Log-likelihood of level indices `y` given cutpoints and coefficients over
/// feature rows `x`.
pub fn po_log_likelihood(cutpoints: &[f64], beta: &[f64], x: &[Vec<f64>], y: &[usize]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &c)| obs_terms(cutpoints, dot(beta, row), c).log_p)
        .sum()
}

/// Analytic gradient of [`po_log_likelihood`]: `(d/d gamma, d/d beta)`.
pub fn po_gradient(cutpoints: &[f64], beta: &[f64], x: &[Vec<f64>], y: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut gg = vec![0.0; cutpoints.len()];
    let mut gb = vec![0.0; beta.len()];
    for (row, &c) in x.iter().zip(y) {
        let t = obs_terms(cutpoints, dot(beta, row), c);
        if let Some(u) = t.upper {
            gg[u] += t.d_upper;
        }
        if let Some(l) = t.lower {
            gg[l] += t.d_lower;
        }
        for (g, v) in gb.iter_mut().zip(row) {
            *g += t.d_eta * v;
        }
    }
    (gg, gb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-observation log-probability with first and second derivatives in the
/// upper cutpoint, lower cutpoint and linear predictor.
struct ObsTerms {
    log_p: f64,
    upper: Option<usize>,
    lower: Option<usize>,
    d_upper: f64,
    d_lower: f64,
    d_eta: f64,
    h_uu: f64,
    h_ll: f64,
    h_ul: f64,
    h_ee: f64,
    h_ue: f64,
    h_le: f64,
}

fn obs_terms(cutpoints: &[f64], eta: f64, c: usize) -> ObsTerms {
    let top = cutpoints.len();
    let upper = (c < top).then_some(c);
    let lower = (c > 0).then(|| c - 1);
    // F, f = F(1-F), f' = f(1-2F) at each bound; zero at infinite bounds.
    let at = |g: Option<usize>| -> (f64, f64, f64, f64) {
        match g {
            Some(k) => {
                let a = cutpoints[k] - eta;
                let big = sigmoid(a);
                let f = big * (1.0 - big);
                (a, big, f, f * (1.0 - 2.0 * big))
            }
            None => (0.0, 0.0, 0.0, 0.0),
        }
    };
    let (a, _, fa, fpa) = at(upper);
    let (b, _, fb, fpb) = at(lower);
    // P computed without cancellation.
    let log_p = match (upper, lower) {
        (Some(_), None) => -ln1p_exp_neg_pos(a),
        (None, Some(_)) => -ln1p_exp_neg_pos(-b),
        (Some(_), Some(_)) => -ln1p_exp_neg_pos(a) - ln1p_exp_neg_pos(-b) + (-(b - a).exp_m1()).ln(),
        (None, None) => 0.0,
    };
    let p = log_p.exp().max(f64::MIN_POSITIVE);
    let ra = fa / p;
    let rb = fb / p;
    ObsTerms {
        log_p,
        upper,
        lower,
        d_upper: ra,
        d_lower: -rb,
        d_eta: -(ra - rb),
        h_uu: fpa / p - ra * ra,
        h_ll: -fpb / p - rb * rb,
        h_ul: ra * rb,
        h_ee: (fpa - fpb) / p - (ra - rb) * (ra - rb),
        h_ue: -fpa / p + ra * (ra - rb),
        h_le: fpb / p - rb * (ra - rb),
    }
}

/// `log(1 + exp(-x))`, stable for either sign, so that `log sigmoid(x)` is its
/// negative.
fn ln1p_exp_neg_pos(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Feature rows `[z0, zs * onehot(subject)]`.
fn design_rows(scores: &SRScores, subjects: &[String]) -> Vec<Vec<f64>> {
    (0..scores.len())
        .map(|i| {
            let mut row = vec![0.0; 1 + subjects.len()];
            row[0] = scores.z0[i];
            if let Some(s) = scores.subjects[i]
                .as_deref()
                .and_then(|s| subjects.iter().position(|x| x == s))
            {
                row[1 + s] = scores.zs[i];
            }
            row
        })
        .collect()
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    prior: TPrior,
    n_cut: usize,
}

impl Problem<'_> {
    fn cutpoints(&self, u: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.n_cut);
        g.push(u[0]);
        for l in 1..self.n_cut {
            let prev = g[l - 1];
            g.push(prev + u[l].exp());
        }
        g
    }

    fn log_posterior(&self, u: &[f64]) -> (f64, f64) {
        let g = self.cutpoints(u);
        let beta = &u[self.n_cut..];
        let ll = po_log_likelihood(&g, beta, self.x, self.y);
        let lp: f64 = beta.iter().map(|&b| self.prior.log_density(b)).sum();
        (ll + lp, ll)
    }

    /// Gradient and Hessian of the log posterior in the unconstrained
    /// parameters `(gamma_1, log gaps, beta)`.
    fn derivatives(&self, u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nc = self.n_cut;
        let d = u.len() - nc;
        let dim = nc + d;
        let g = self.cutpoints(u);
        let beta = &u[nc..];
        // Derivatives in (gamma, beta) first.
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for (row, &c) in self.x.iter().zip(self.y) {
            let t = obs_terms(&g, dot(beta, row), c);
            if let Some(a) = t.upper {
                grad[a] += t.d_upper;
                hess[(a, a)] += t.h_uu;
            }
            if let Some(b) = t.lower {
                grad[b] += t.d_lower;
                hess[(b, b)] += t.h_ll;
            }
            if let (Some(a), Some(b)) = (t.upper, t.lower) {
                hess[(a, b)] += t.h_ul;
                hess[(b, a)] += t.h_ul;
            }
            for (j, &xj) in row.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                grad[nc + j] += t.d_eta * xj;
                if let Some(a) = t.upper {
                    hess[(a, nc + j)] += t.h_ue * xj;
                    hess[(nc + j, a)] += t.h_ue * xj;
                }
                if let Some(b) = t.lower {
                    hess[(b, nc + j)] += t.h_le * xj;
                    hess[(nc + j, b)] += t.h_le * xj;
                }
                for (k, &xk) in row.iter().enumerate() {
                    hess[(nc + j, nc + k)] += t.h_ee * xj * xk;
                }
            }
        }
        for (j, &b) in beta.iter().enumerate() {
            grad[nc + j] += self.prior.gradient(b);
            hess[(nc + j, nc + j)] += self.prior.curvature(b);
        }
        // Chain rule to (gamma_1, log gaps): gamma_c = u_0 + sum_{l<=c, l>=1} exp(u_l).
        let mut jac = DMatrix::identity(dim, dim);
        for c in 0..nc {
            for l in 1..nc {
                jac[(c, l)] = if l <= c { u[l].exp() } else { 0.0 };
            }
        }
        let grad_u = jac.transpose() * &grad;
        let mut hess_u = jac.transpose() * &hess * &jac;
        for l in 1..nc {
            let tail: f64 = (l..nc).map(|c| grad[c]).sum();
            hess_u[(l, l)] += tail * u[l].exp();
        }
        (grad_u, hess_u)
    }
}

/// MAP fit of the proportional-odds model by damped Newton iterations.
pub fn fit_forward(scores: &SRScores, labels: &[f64], scale: &SentimentScale, options: &ForwardOptions) -> Result<ForwardModel> {
    if labels.len() != scores.len() {
        return Err(invalid("labels and scores differ in length"));
    }
    let mut codes = Vec::with_capacity(labels.len());
    for &y in labels {
        codes.push(scale.check(y)?);
    }
    let mut present: Vec<usize> = codes.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::TooFewLevels(present.len()));
    }
    let y: Vec<usize> = codes
        .iter()
        .map(|c| present.binary_search(c).expect("present level"))
        .collect();
    let levels: Vec<f64> = present.iter().map(|&c| scale.levels()[c]).collect();

    let mut subjects: Vec<String> = scores.subjects.iter().flatten().cloned().collect();
    subjects.sort();
    subjects.dedup();
    let x = design_rows(scores, &subjects);
    let n_cut = levels.len() - 1;
    let problem = Problem {
        x: &x,
        y: &y,
        prior: options.prior,
        n_cut,
    };

    // Start at the empirical cumulative logits with beta = 0.
    let n = y.len() as f64;
    let mut cum = 0.0;
    let mut gamma = Vec::with_capacity(n_cut);
    for c in 0..n_cut {
        cum += y.iter().filter(|&&v| v == c).count() as f64;
        let f = cum / n;
        gamma.push((f / (1.0 - f)).ln());
    }
    let mut u = vec![0.0; n_cut + 1 + subjects.len()];
    u[0] = gamma[0];
    for l in 1..n_cut {
        u[l] = (gamma[l] - gamma[l - 1]).ln();
    }
    for v in u.iter_mut().skip(n_cut) {
        *v = options.prior.center;
    }

    let (mut obj, _) = problem.log_posterior(&u);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    while iterations < options.max_iter {
        let (grad, hess) = problem.derivatives(&u);
        grad_norm = grad.amax();
        if grad_norm < options.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // Levenberg-style damping until the negated Hessian is positive definite.
        let neg = -hess;
        let dim = u.len();
        let mut mu = 0.0;
        let step = loop {
            let m = &neg + DMatrix::<f64>::identity(dim, dim) * mu;
            if let Some((chol, _)) = cholesky_with_jitter(&m) {
                let s = chol.solve(&grad);
                if s.iter().all(|v| v.is_finite()) {
                    break Some(s);
                }
            }
            mu = if mu == 0.0 { 1e-6 * neg.diagonal().amax().max(1.0) } else { mu * 10.0 };
            if mu > 1e12 {
                break None;
            }
        };
        let Some(step) = step else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (val, _) = problem.log_posterior(&cand);
            if val.is_finite() && val >= obj {
                u = cand;
                obj = val;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let (grad, _) = problem.derivatives(&u);
            grad_norm = grad.amax();
            converged = grad_norm < options.tol;
            break;
        }
    }
    if !obj.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: iterations });
    }
    let (log_posterior, log_likelihood) = problem.log_posterior(&u);
    let cutpoints = problem.cutpoints(&u);
    Ok(ForwardModel {
        levels,
        cutpoints,
        beta0: u[n_cut],
        beta_s: u[n_cut + 1..].to_vec(),
        subjects,
        prior: options.prior,
        report: Some(ForwardReport {
            iterations,
            gradient_norm: grad_norm,
            converged,
            log_likelihood,
            log_posterior,
        }),
    })
}
