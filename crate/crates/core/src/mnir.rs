//! Multinomial inverse regression of token counts on ordered sentiment.
//!
//! Documents are collapsed into `(subject, sentiment)` cells. Cell counts
//! follow `x_sy ~ MN(q_sy, m_sy)` with
//!
//! ```text
//! q_syj ∝ exp(eta_syj),  eta_syj = alpha_0j + alpha_sj + y (phi_0j + phi_sj)
//! ```
//!
//! where the subject terms vanish for the generic stratum. Loadings `phi`
//! carry a concave log penalty `lambda log(1 + |phi| / tau)` (or plain L1),
//! intercepts a tiny ridge, and the penalized likelihood is minimized by
//! cyclic coordinate descent. Each coordinate step minimizes a quadratic
//! model plus the exact penalty in closed form; the step is accepted only if
//! the true objective decreases, otherwise the curvature is doubled and the
//! step retried.
//!
//! The loadings project a document onto sufficient-reduction scores
//! `z_0 = phi_0' f` and `z_s = phi_s' f`, with `f = x / m` its token
//! frequencies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{invalid, Error, Result};

/// Ordered numeric sentiment codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentScale {
    levels: Vec<f64>,
}

impl Default for SentimentScale {
    fn default() -> Self {
        Self {
            levels: vec![-1.0, 0.0, 1.0],
        }
    }
}

impl SentimentScale {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(invalid("a sentiment scale needs at least two levels"));
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sentiment levels must be finite and strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// Two-level scale `{0, 1}` for binary responses.
    pub fn binary() -> Self {
        Self {
            levels: vec![0.0, 1.0],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, y: f64) -> Option<usize> {
        self.levels.iter().position(|&l| l == y)
    }

    pub fn check(&self, y: f64) -> Result<usize> {
        self.index_of(y).ok_or(Error::OffScale(y))
    }
}

/// Summed counts of every document sharing a `(subject, sentiment)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `None` is the generic stratum.
    pub subject: Option<String>,
    pub level: f64,
    pub counts: Vec<f64>,
    pub total: f64,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedCounts {
    pub vocab: Vocabulary,
    pub cells: Vec<Cell>,
    /// Rows skipped for lacking a label.
    pub excluded_unlabeled: usize,
}

impl CollapsedCounts {
    /// Build directly from cells (e.g. simulated data).
    pub fn from_cells(vocab: Vocabulary, cells: Vec<Cell>) -> Result<Self> {
        for c in &cells {
            if c.counts.len() != vocab.len() {
                return Err(invalid("cell length differs from vocabulary size"));
            }
        }
        Ok(Self {
            vocab,
            cells,
            excluded_unlabeled: 0,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    /// Distinct non-generic subjects, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.cells.iter().filter_map(|c| c.subject.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn distinct_levels(&self) -> usize {
        let mut l: Vec<f64> = self.cells.iter().map(|c| c.level).collect();
        l.sort_by(f64::total_cmp);
        l.dedup();
        l.len()
    }
}

impl Cell {
    pub fn new(subject: Option<String>, level: f64, counts: Vec<f64>) -> Self {
        let total = counts.iter().sum();
        Self {
            subject,
            level,
            counts,
            total,
            documents: 0,
        }
    }
}

/// Sum the counts of labeled rows per sentiment level, and per subject when
/// `with_subjects` is set (untagged rows form the generic stratum).
pub fn collapse_counts(corpus: &Corpus, scale: &SentimentScale, with_subjects: bool) -> Result<CollapsedCounts> {
    let p = corpus.n_terms();
    let mut cells: BTreeMap<(Option<String>, usize), Cell> = BTreeMap::new();
    let mut excluded = 0;
    for i in 0..corpus.n_docs() {
        let Some(y) = corpus.label(i) else {
            excluded += 1;
            continue;
        };
        let level = scale.check(y)?;
        let subject = if with_subjects {
            corpus.subject(i).map(str::to_owned)
        } else {
            None
        };
        let cell = cells.entry((subject.clone(), level)).or_insert_with(|| Cell {
            subject,
            level: y,
            counts: vec![0.0; p],
            total: 0.0,
            documents: 0,
        });
        for (j, x) in corpus.row(i).iter() {
            cell.counts[j] += f64::from(x);
        }
        cell.total += corpus.total(i) as f64;
        cell.documents += 1;
    }
    if cells.is_empty() {
        return Err(Error::NoLabeledRows);
    }
    Ok(CollapsedCounts {
        vocab: corpus.vocab().clone(),
        cells: cells.into_values().collect(),
        excluded_unlabeled: excluded,
    })
}

/// Penalty on each loading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    /// `lambda * log(1 + |phi| / tau)`; slope `lambda / tau` at zero.
    GammaLasso { lambda: f64, tau: f64 },
    /// `rate * |phi|`, the `tau -> infinity` limit with `lambda / tau = rate`.
    L1 { rate: f64 },
}

impl Penalty {
    pub fn value(&self, b: f64) -> f64 {
        match *self {
            Penalty::GammaLasso { lambda, tau } => lambda * (b.abs() / tau).ln_1p(),
            Penalty::L1 { rate } => rate * b.abs(),
        }
    }

    pub fn slope_at_zero(&self) -> f64 {
        match *self {
            Penalty::GammaLasso { lambda, tau } => lambda / tau,
            Penalty::L1 { rate } => rate,
        }
    }

    /// Derivative at `b != 0`.
    pub fn derivative(&self, b: f64) -> f64 {
        match *self {
            Penalty::GammaLasso { lambda, tau } => b.signum() * lambda / (tau + b.abs()),
            Penalty::L1 { rate } => b.signum() * rate,
        }
    }

    /// `argmin_b h/2 (b - c)^2 + penalty(b)`.
    pub fn minimize_quadratic(&self, h: f64, c: f64) -> f64 {
        if c == 0.0 {
            return 0.0;
        }
        let a = c.abs();
        let b = match *self {
            Penalty::L1 { rate } => (a - rate / h).max(0.0),
            Penalty::GammaLasso { lambda, tau } => {
                let objective = |b: f64| 0.5 * h * (b - a) * (b - a) + lambda * (b / tau).ln_1p();
                let mut best = 0.0;
                let mut best_val = objective(0.0);
                let disc = (a + tau) * (a + tau) - 4.0 * lambda / h;
                if disc >= 0.0 {
                    let r = disc.sqrt();
                    for root in [0.5 * (a - tau + r), 0.5 * (a - tau - r)] {
                        if root > 0.0 {
                            let v = objective(root);
                            if v < best_val {
                                best = root;
                                best_val = v;
                            }
                        }
                    }
                }
                best
            }
        };
        c.signum() * b
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Penalty::GammaLasso { lambda, tau } => lambda >= 0.0 && tau > 0.0,
            Penalty::L1 { rate } => rate >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("penalty parameters must be nonnegative with tau > 0"))
        }
    }
}

/// Penalty plus solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub penalty: Penalty,
    /// Ridge weight on intercepts; pins the per-cell softmax location.
    pub intercept_ridge: f64,
    /// Fit subject blocks; when false they are held at zero.
    pub interactions: bool,
    /// Relative objective change that ends the sweeps.
    pub tol: f64,
    pub max_sweeps: usize,
    /// When set, sweeps instead continue until the largest KKT residual is
    /// at most this value.
    pub kkt_tol: Option<f64>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            penalty: Penalty::GammaLasso {
                lambda: 1.0,
                tau: 0.5,
            },
            intercept_ridge: 1e-6,
            interactions: true,
            tol: 1e-7,
            max_sweeps: 10_000,
            kkt_tol: None,
        }
    }
}

/// Intercepts and loadings; subject blocks aligned with `subjects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnirParams {
    pub alpha0: Vec<f64>,
    pub phi0: Vec<f64>,
    pub subjects: Vec<String>,
    pub alpha_s: Vec<Vec<f64>>,
    pub phi_s: Vec<Vec<f64>>,
}

impl MnirParams {
    pub fn zeros(p: usize, subjects: Vec<String>) -> Self {
        let s = subjects.len();
        Self {
            alpha0: vec![0.0; p],
            phi0: vec![0.0; p],
            subjects,
            alpha_s: vec![vec![0.0; p]; s],
            phi_s: vec![vec![0.0; p]; s],
        }
    }

    pub fn n_terms(&self) -> usize {
        self.alpha0.len()
    }

    pub fn subject_index(&self, subject: Option<&str>) -> Option<usize> {
        let s = subject?;
        self.subjects.iter().position(|x| x == s)
    }

    fn eta(&self, subject: Option<usize>, y: f64, j: usize) -> f64 {
        let mut e = self.alpha0[j] + y * self.phi0[j];
        if let Some(s) = subject {
            e += self.alpha_s[s][j] + y * self.phi_s[s][j];
        }
        e
    }

    /// Cell probabilities `q` for a subject (or generic) and sentiment.
    pub fn probabilities(&self, subject: Option<&str>, y: f64) -> Vec<f64> {
        let s = self.subject_index(subject);
        let eta: Vec<f64> = (0..self.n_terms()).map(|j| self.eta(s, y, j)).collect();
        softmax(&eta)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

fn cell_subjects(cells: &CollapsedCounts, params: &MnirParams) -> Vec<Option<usize>> {
    cells
        .cells
        .iter()
        .map(|c| params.subject_index(c.subject.as_deref()))
        .collect()
}

/// `sum_c [m_c log sum_l exp(eta_cl) - sum_j x_cj eta_cj]`, the negative
/// multinomial log-likelihood without its combinatorial constant.
pub fn negative_log_likelihood(cells: &CollapsedCounts, params: &MnirParams) -> f64 {
    let subj = cell_subjects(cells, params);
    let p = params.n_terms();
    cells
        .cells
        .iter()
        .zip(&subj)
        .map(|(c, &s)| {
            let eta: Vec<f64> = (0..p).map(|j| params.eta(s, c.level, j)).collect();
            c.total * log_sum_exp(&eta) - c.counts.iter().zip(&eta).map(|(x, e)| x * e).sum::<f64>()
        })
        .sum()
}

/// Gradient of [`negative_log_likelihood`] in every parameter.
pub fn gradient(cells: &CollapsedCounts, params: &MnirParams) -> MnirParams {
    let subj = cell_subjects(cells, params);
    let p = params.n_terms();
    let mut g = MnirParams::zeros(p, params.subjects.clone());
    for (c, &s) in cells.cells.iter().zip(&subj) {
        let eta: Vec<f64> = (0..p).map(|j| params.eta(s, c.level, j)).collect();
        let q = softmax(&eta);
        for j in 0..p {
            let r = c.total * q[j] - c.counts[j];
            g.alpha0[j] += r;
            g.phi0[j] += c.level * r;
            if let Some(s) = s {
                g.alpha_s[s][j] += r;
                g.phi_s[s][j] += c.level * r;
            }
        }
    }
    g
}

/// Negative log-likelihood plus intercept ridge and loading penalties.
pub fn penalized_objective(cells: &CollapsedCounts, params: &MnirParams, config: &PenaltyConfig) -> f64 {
    let ridge: f64 = params
        .alpha0
        .iter()
        .chain(params.alpha_s.iter().flatten())
        .map(|a| a * a)
        .sum::<f64>()
        * config.intercept_ridge;
    let pen: f64 = params
        .phi0
        .iter()
        .chain(params.phi_s.iter().flatten())
        .map(|&b| config.penalty.value(b))
        .sum();
    negative_log_likelihood(cells, params) + ridge + pen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnirReport {
    /// Penalized objective at the start and after every sweep.
    pub objective_path: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub nonzero_main: usize,
    pub nonzero_subject: Vec<usize>,
}

/// A fitted inverse regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnirModel {
    pub vocab: Vocabulary,
    pub params: MnirParams,
    pub config: PenaltyConfig,
    pub report: MnirReport,
}

impl MnirModel {
    pub fn probabilities(&self, subject: Option<&str>, y: f64) -> Vec<f64> {
        self.params.probabilities(subject, y)
    }

    pub fn subject_loadings(&self, subject: &str) -> Option<&[f64]> {
        let s = self.params.subject_index(Some(subject))?;
        Some(&self.params.phi_s[s])
    }

    /// Count of exactly nonzero subject-specific loadings (0 for a subject
    /// the model has no block for).
    pub fn nonzero_subject_loadings(&self, subject: &str) -> usize {
        self.subject_loadings(subject)
            .map(|phi| phi.iter().filter(|&&b| b != 0.0).count())
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy)]
enum Block {
    Alpha0,
    Phi0,
    AlphaS(usize),
    PhiS(usize),
}

struct Solver<'a> {
    cells: &'a CollapsedCounts,
    config: &'a PenaltyConfig,
    subj: Vec<Option<usize>>,
    params: MnirParams,
    eta: Vec<Vec<f64>>,
    lse: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(cells: &'a CollapsedCounts, config: &'a PenaltyConfig, params: MnirParams) -> Self {
        let subj = cell_subjects(cells, &params);
        let p = params.n_terms();
        let eta: Vec<Vec<f64>> = cells
            .cells
            .iter()
            .zip(&subj)
            .map(|(c, &s)| (0..p).map(|j| params.eta(s, c.level, j)).collect())
            .collect();
        let lse = eta.iter().map(|e| log_sum_exp(e)).collect();
        Self {
            cells,
            config,
            subj,
            params,
            eta,
            lse,
        }
    }

    fn refresh(&mut self) {
        for (c, e) in self.eta.iter().enumerate() {
            self.lse[c] = log_sum_exp(e);
        }
    }

    fn objective(&self) -> f64 {
        let nll: f64 = self
            .cells
            .cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.total * self.lse[c]
                    - cell.counts.iter().zip(&self.eta[c]).map(|(x, e)| x * e).sum::<f64>()
            })
            .sum();
        let ridge: f64 = self
            .params
            .alpha0
            .iter()
            .chain(self.params.alpha_s.iter().flatten())
            .map(|a| a * a)
            .sum::<f64>()
            * self.config.intercept_ridge;
        let pen: f64 = self
            .params
            .phi0
            .iter()
            .chain(self.params.phi_s.iter().flatten())
            .map(|&b| self.config.penalty.value(b))
            .sum();
        nll + ridge + pen
    }

    /// Weight of this block's coordinate in each cell's linear predictor.
    fn weight(&self, block: Block, c: usize) -> f64 {
        let level = self.cells.cells[c].level;
        match block {
            Block::Alpha0 => 1.0,
            Block::Phi0 => level,
            Block::AlphaS(s) => {
                if self.subj[c] == Some(s) {
                    1.0
                } else {
                    0.0
                }
            }
            Block::PhiS(s) => {
                if self.subj[c] == Some(s) {
                    level
                } else {
                    0.0
                }
            }
        }
    }

    fn value(&self, block: Block, j: usize) -> f64 {
        match block {
            Block::Alpha0 => self.params.alpha0[j],
            Block::Phi0 => self.params.phi0[j],
            Block::AlphaS(s) => self.params.alpha_s[s][j],
            Block::PhiS(s) => self.params.phi_s[s][j],
        }
    }

    fn set(&mut self, block: Block, j: usize, v: f64) {
        match block {
            Block::Alpha0 => self.params.alpha0[j] = v,
            Block::Phi0 => self.params.phi0[j] = v,
            Block::AlphaS(s) => self.params.alpha_s[s][j] = v,
            Block::PhiS(s) => self.params.phi_s[s][j] = v,
        }
    }

    fn penalized(block: Block) -> bool {
        matches!(block, Block::Phi0 | Block::PhiS(_))
    }

    /// Gradient and curvature of the smooth part in one coordinate.
    fn derivatives(&self, block: Block, j: usize) -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for (c, cell) in self.cells.cells.iter().enumerate() {
            let w = self.weight(block, c);
            if w == 0.0 {
                continue;
            }
            let q = (self.eta[c][j] - self.lse[c]).exp();
            g += w * (cell.total * q - cell.counts[j]);
            h += w * w * cell.total * q * (1.0 - q);
        }
        if !Self::penalized(block) {
            let b = self.value(block, j);
            g += 2.0 * self.config.intercept_ridge * b;
            h += 2.0 * self.config.intercept_ridge;
        }
        (g, h)
    }

    /// Exact change in the penalized objective from moving coordinate by `d`.
    fn delta_objective(&self, block: Block, j: usize, d: f64) -> f64 {
        let mut delta = 0.0;
        for (c, cell) in self.cells.cells.iter().enumerate() {
            let w = self.weight(block, c);
            if w == 0.0 {
                continue;
            }
            let q = (self.eta[c][j] - self.lse[c]).exp();
            delta += cell.total * (q * (w * d).exp_m1()).ln_1p() - cell.counts[j] * w * d;
        }
        let b = self.value(block, j);
        if Self::penalized(block) {
            delta += self.config.penalty.value(b + d) - self.config.penalty.value(b);
        } else {
            delta += self.config.intercept_ridge * ((b + d) * (b + d) - b * b);
        }
        delta
    }

    fn apply(&mut self, block: Block, j: usize, d: f64) {
        for c in 0..self.cells.cells.len() {
            let w = self.weight(block, c);
            if w == 0.0 {
                continue;
            }
            let q = (self.eta[c][j] - self.lse[c]).exp();
            self.lse[c] += (q * (w * d).exp_m1()).ln_1p();
            self.eta[c][j] += w * d;
        }
        let b = self.value(block, j);
        self.set(block, j, b + d);
    }

    fn update(&mut self, block: Block, j: usize) {
        let (g, h0) = self.derivatives(block, j);
        if !(h0 > 0.0) || !g.is_finite() {
            return;
        }
        let b = self.value(block, j);
        let mut h = h0;
        for _ in 0..60 {
            let target = if Self::penalized(block) {
                self.config.penalty.minimize_quadratic(h, b - g / h)
            } else {
                b - g / h
            };
            let d = target - b;
            if d == 0.0 {
                return;
            }
            let change = self.delta_objective(block, j, d);
            if change <= 0.0 {
                self.apply(block, j, d);
                // Land exactly on zero rather than on b + (0 - b).
                if target == 0.0 {
                    self.set(block, j, 0.0);
                }
                return;
            }
            h *= 2.0;
        }
    }

    fn blocks(&self) -> Vec<Block> {
        let mut blocks = vec![Block::Alpha0, Block::Phi0];
        for s in 0..self.params.subjects.len() {
            blocks.push(Block::AlphaS(s));
            blocks.push(Block::PhiS(s));
        }
        blocks
    }

    fn sweep(&mut self) {
        let p = self.params.n_terms();
        let blocks = self.blocks();
        // Main effects over all tokens, then each subject block.
        for pair in blocks.chunks(2) {
            for j in 0..p {
                for &block in pair {
                    self.update(block, j);
                }
            }
        }
        if !self.params.subjects.is_empty() {
            for j in 0..p {
                self.update_valley(j);
            }
        }
        for block in blocks {
            if !Self::penalized(block) {
                self.shift(block);
            }
        }
        self.refresh();
    }

    /// The likelihood is unchanged when an intercept block moves by a
    /// constant, so centre it where the ridge is smallest.
    fn shift(&mut self, block: Block) {
        let p = self.params.n_terms();
        let offset = -(0..p).map(|j| self.value(block, j)).sum::<f64>() / p as f64;
        if offset == 0.0 || !offset.is_finite() {
            return;
        }
        for j in 0..p {
            let b = self.value(block, j);
            self.set(block, j, b + offset);
        }
        for c in 0..self.cells.cells.len() {
            let w = self.weight(block, c);
            if w != 0.0 {
                self.eta[c].iter_mut().for_each(|e| *e += w * offset);
            }
        }
    }

    /// Moves `alpha0[j]` by `d` and every `alpha_s[.][j]` by `-d`, which only
    /// touches generic cells. Without it a token absent from the generic
    /// cells crawls along a ridge-limited valley.
    fn update_valley(&mut self, j: usize) {
        let r = self.config.intercept_ridge;
        let n_subj = self.params.subjects.len() as f64;
        let generic: Vec<usize> = (0..self.cells.cells.len()).filter(|&c| self.subj[c].is_none()).collect();
        let a0 = self.params.alpha0[j];
        let sum_s: f64 = self.params.alpha_s.iter().map(|a| a[j]).sum();
        let mut g = 2.0 * r * (a0 - sum_s);
        let mut h0 = 2.0 * r * (1.0 + n_subj);
        for &c in &generic {
            let cell = &self.cells.cells[c];
            let q = (self.eta[c][j] - self.lse[c]).exp();
            g += cell.total * q - cell.counts[j];
            h0 += cell.total * q * (1.0 - q);
        }
        if !(h0 > 0.0) || !g.is_finite() {
            return;
        }
        let mut h = h0;
        for _ in 0..60 {
            let d = -g / h;
            if d == 0.0 {
                return;
            }
            let mut change = r * ((a0 + d) * (a0 + d) - a0 * a0);
            for a in &self.params.alpha_s {
                change += r * ((a[j] - d) * (a[j] - d) - a[j] * a[j]);
            }
            for &c in &generic {
                let cell = &self.cells.cells[c];
                let q = (self.eta[c][j] - self.lse[c]).exp();
                change += cell.total * (q * d.exp_m1()).ln_1p() - cell.counts[j] * d;
            }
            if change <= 0.0 {
                for &c in &generic {
                    let q = (self.eta[c][j] - self.lse[c]).exp();
                    self.lse[c] += (q * d.exp_m1()).ln_1p();
                    self.eta[c][j] += d;
                }
                self.params.alpha0[j] += d;
                for a in &mut self.params.alpha_s {
                    a[j] -= d;
                }
                return;
            }
            h *= 2.0;
        }
    }

    fn kkt_residual(&self) -> f64 {
        let p = self.params.n_terms();
        let slope = self.config.penalty.slope_at_zero();
        let mut worst: f64 = 0.0;
        for block in self.blocks() {
            for j in 0..p {
                let (g, _) = self.derivatives(block, j);
                let b = self.value(block, j);
                let r = if !Self::penalized(block) {
                    g.abs()
                } else if b == 0.0 {
                    (g.abs() - slope).max(0.0)
                } else {
                    (g + self.config.penalty.derivative(b)).abs()
                };
                worst = worst.max(r);
            }
        }
        worst
    }
}

/// Penalized MAP fit of the inverse regression by coordinate descent.
pub fn fit_mnir(cells: &CollapsedCounts, config: &PenaltyConfig) -> Result<MnirModel> {
    config.penalty.validate()?;
    let p = cells.n_terms();
    if p == 0 {
        return Err(invalid("empty vocabulary"));
    }
    let levels = cells.distinct_levels();
    if levels < 2 {
        return Err(Error::TooFewLevels(levels));
    }
    let subjects = if config.interactions {
        cells.subjects()
    } else {
        Vec::new()
    };
    let mut params = MnirParams::zeros(p, subjects);
    let mut pooled = vec![0.0; p];
    for c in &cells.cells {
        for (a, x) in pooled.iter_mut().zip(&c.counts) {
            *a += x;
        }
    }
    let grand: f64 = pooled.iter().sum();
    let eps = 1e-3;
    for (a, x) in params.alpha0.iter_mut().zip(&pooled) {
        *a = ((x + eps) / (grand + eps * p as f64)).ln();
    }

    let mut solver = Solver::new(cells, config, params);
    let mut path = vec![solver.objective()];
    let mut converged = false;
    let mut sweeps = 0;
    let mut kkt = f64::NAN;
    while sweeps < config.max_sweeps {
        solver.sweep();
        sweeps += 1;
        let obj = solver.objective();
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: sweeps });
        }
        let prev = *path.last().unwrap();
        path.push(obj);
        let done = match config.kkt_tol {
            Some(t) => {
                kkt = solver.kkt_residual();
                kkt <= t
            }
            None => (prev - obj).abs() / obj.abs().max(1.0) < config.tol,
        };
        if done {
            converged = true;
            break;
        }
    }
    if config.kkt_tol.is_none() {
        kkt = solver.kkt_residual();
    }
    let params = solver.params;
    let nonzero_main = params.phi0.iter().filter(|&&b| b != 0.0).count();
    let nonzero_subject = params
        .phi_s
        .iter()
        .map(|phi| phi.iter().filter(|&&b| b != 0.0).count())
        .collect();
    Ok(MnirModel {
        vocab: cells.vocab.clone(),
        params,
        config: *config,
        report: MnirReport {
            objective_path: path,
            sweeps,
            converged,
            kkt_residual: kkt,
            nonzero_main,
            nonzero_subject,
        },
    })
}

/// Per-document sufficient-reduction scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SRScores {
    pub doc_ids: Vec<String>,
    pub subjects: Vec<Option<String>>,
    pub z0: Vec<f64>,
    /// Zero for documents whose subject has no fitted block.
    pub zs: Vec<f64>,
}

impl SRScores {
    pub fn len(&self) -> usize {
        self.z0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z0.is_empty()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> SRScores {
        SRScores {
            doc_ids: indices.iter().map(|&i| self.doc_ids[i].clone()).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            z0: indices.iter().map(|&i| self.z0[i]).collect(),
            zs: indices.iter().map(|&i| self.zs[i]).collect(),
        }
    }
}

pub fn check_vocabulary(model: &Vocabulary, corpus: &Vocabulary) -> Result<()> {
    let n = model.len().max(corpus.len());
    for idx in 0..n {
        let a = model.tokens().get(idx);
        let b = corpus.tokens().get(idx);
        if a != b {
            return Err(Error::VocabularyMismatch {
                index: idx,
                expected: a.cloned().unwrap_or_else(|| "<none>".into()),
                found: b.cloned().unwrap_or_else(|| "<none>".into()),
            });
        }
    }
    Ok(())
}

/// Project every document of `corpus` onto the fitted loadings.
pub fn sr_scores(model: &MnirModel, corpus: &Corpus) -> Result<SRScores> {
    check_vocabulary(&model.vocab, corpus.vocab())?;
    let params = &model.params;
    let scored: Vec<(f64, f64)> = (0..corpus.n_docs())
        .into_par_iter()
        .map(|i| {
            let m = corpus.total(i) as f64;
            let s = params.subject_index(corpus.subject(i));
            let mut z0 = 0.0;
            let mut zs = 0.0;
            for (j, x) in corpus.row(i).iter() {
                let f = f64::from(x) / m;
                z0 += params.phi0[j] * f;
                if let Some(s) = s {
                    zs += params.phi_s[s][j] * f;
                }
            }
            (z0, zs)
        })
        .collect();
    Ok(SRScores {
        doc_ids: corpus.metas().iter().map(|m| m.id.clone()).collect(),
        subjects: corpus.metas().iter().map(|m| m.subject.clone()).collect(),
        z0: scored.iter().map(|s| s.0).collect(),
        zs: scored.iter().map(|s| s.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentMeta;

    fn vocab(p: usize) -> Vocabulary {
        Vocabulary::new((0..p).map(|j| format!("w{j}")).collect()).unwrap()
    }

    fn labeled(rows: Vec<(Vec<(u32, u32)>, Option<f64>, Option<&str>)>, p: usize) -> Corpus {
        let meta = rows
            .iter()
            .enumerate()
            .map(|(i, (_, y, s))| DocumentMeta {
                id: format!("d{i}"),
                subject: s.map(str::to_owned),
                label: *y,
                text: String::new(),
            })
            .collect();
        Corpus::from_sparse_rows(vocab(p), meta, rows.into_iter().map(|r| r.0).collect()).unwrap()
    }

    #[test]
    fn scale_validation() {
        assert!(SentimentScale::new(vec![0.0]).is_err());
        assert!(SentimentScale::new(vec![1.0, 0.0]).is_err());
        assert!(SentimentScale::new(vec![-2.0, 0.5, 3.0]).is_ok());
    }

    #[test]
    fn collapse_sums_by_level() {
        let c = labeled(
            vec![
                (vec![(0, 1)], Some(1.0), None),
                (vec![(1, 1)], Some(1.0), None),
                (vec![(1, 2)], None, None),
            ],
            2,
        );
        let cc = collapse_counts(&c, &SentimentScale::default(), false).unwrap();
        assert_eq!(cc.cells.len(), 1);
        assert_eq!(cc.cells[0].counts, vec![1.0, 1.0]);
        assert_eq!(cc.cells[0].total, 2.0);
        assert_eq!(cc.excluded_unlabeled, 1);
    }

    #[test]
    fn collapse_seventeen_cells() {
        let mut rows = Vec::new();
        for s in ["a", "b", "c", "d", "e"] {
            for y in [-1.0, 0.0, 1.0] {
                rows.push((vec![(0, 1)], Some(y), Some(s)));
            }
        }
        rows.push((vec![(1, 1)], Some(-1.0), None));
        rows.push((vec![(1, 1)], Some(1.0), None));
        let c = labeled(rows, 2);
        let cc = collapse_counts(&c, &SentimentScale::default(), true).unwrap();
        assert_eq!(cc.cells.len(), 17);
        assert_eq!(cc.subjects().len(), 5);
    }

    #[test]
    fn collapse_singleton_cells_equal_documents() {
        let c = labeled(
            vec![(vec![(0, 3), (2, 1)], Some(-1.0), None), (vec![(1, 2)], Some(1.0), None)],
            3,
        );
        let cc = collapse_counts(&c, &SentimentScale::default(), false).unwrap();
        assert_eq!(cc.cells[0].counts, vec![3.0, 0.0, 1.0]);
        assert_eq!(cc.cells[1].counts, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn collapse_errors() {
        let c = labeled(vec![(vec![(0, 1)], None, None)], 1);
        assert!(matches!(
            collapse_counts(&c, &SentimentScale::default(), false),
            Err(Error::NoLabeledRows)
        ));
        let c = labeled(vec![(vec![(0, 1)], Some(7.0), None)], 1);
        assert!(matches!(
            collapse_counts(&c, &SentimentScale::default(), false),
            Err(Error::OffScale(_))
        ));
    }

    #[test]
    fn gamma_lasso_prox_is_global_minimum() {
        let pen = Penalty::GammaLasso { lambda: 2.0, tau: 0.3 };
        for &h in &[0.5, 3.0, 40.0] {
            for i in -40..=40 {
                let c = i as f64 * 0.25;
                let b = pen.minimize_quadratic(h, c);
                let f = |x: f64| 0.5 * h * (x - c) * (x - c) + pen.value(x);
                let grid_best = (-4000..=4000)
                    .map(|k| k as f64 * 0.0025)
                    .map(f)
                    .fold(f64::INFINITY, f64::min);
                assert!(f(b) <= grid_best + 1e-9, "h={h} c={c} b={b}");
            }
        }
    }

    #[test]
    fn l1_prox_soft_thresholds() {
        let pen = Penalty::L1 { rate: 2.0 };
        assert_eq!(pen.minimize_quadratic(1.0, 1.5), 0.0);
        assert_eq!(pen.minimize_quadratic(1.0, 3.0), 1.0);
        assert_eq!(pen.minimize_quadratic(2.0, -3.0), -2.0);
    }

    #[test]
    fn identical_cells_give_zero_loadings() {
        let counts = vec![30.0, 10.0, 5.0, 55.0];
        let cells = CollapsedCounts::from_cells(
            vocab(4),
            vec![
                Cell::new(None, -1.0, counts.clone()),
                Cell::new(None, 1.0, counts.clone()),
            ],
        )
        .unwrap();
        let m = fit_mnir(&cells, &PenaltyConfig::default()).unwrap();
        assert!(m.params.phi0.iter().all(|&b| b == 0.0));
        let pooled: Vec<f64> = counts.iter().map(|x| x / 100.0).collect();
        for y in [-1.0, 1.0] {
            let q = m.probabilities(None, y);
            for (a, b) in q.iter().zip(&pooled) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn needs_two_levels() {
        let cells = CollapsedCounts::from_cells(vocab(2), vec![Cell::new(None, 1.0, vec![1.0, 2.0])]).unwrap();
        assert!(matches!(fit_mnir(&cells, &PenaltyConfig::default()), Err(Error::TooFewLevels(1))));
    }

    #[test]
    fn sr_score_by_hand() {
        let mut params = MnirParams::zeros(3, vec![]);
        params.phi0 = vec![1.0, -1.0, 0.0];
        let model = MnirModel {
            vocab: vocab(3),
            params,
            config: PenaltyConfig::default(),
            report: MnirReport {
                objective_path: vec![],
                sweeps: 0,
                converged: true,
                kkt_residual: 0.0,
                nonzero_main: 2,
                nonzero_subject: vec![],
            },
        };
        let c = labeled(
            vec![
                (vec![(0, 2), (1, 1), (2, 1)], None, None),
                (vec![(0, 20), (1, 10), (2, 10)], None, Some("x")),
            ],
            3,
        );
        let z = sr_scores(&model, &c).unwrap();
        assert!((z.z0[0] - 0.25).abs() < 1e-15);
        assert!((z.z0[1] - 0.25).abs() < 1e-15);
        assert_eq!(z.zs, vec![0.0, 0.0]);
    }

    #[test]
    fn vocabulary_mismatch_reports_first_token() {
        let a = vocab(3);
        let b = Vocabulary::new(vec!["w0".into(), "zz".into(), "w2".into()]).unwrap();
        match check_vocabulary(&a, &b) {
            Err(Error::VocabularyMismatch { index, expected, found }) => {
                assert_eq!((index, expected.as_str(), found.as_str()), (1, "w1", "zz"));
            }
            other => panic!("{other:?}"),
        }
    }
}
