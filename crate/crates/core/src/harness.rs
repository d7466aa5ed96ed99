//! Design-strategy experiments: repeated-design learning curves and
//! sequential learning metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::design::{greedy_rank, pca_scores, seed_design, seeded_permutation, FactorScores, FactorSource, Variant};
use crate::error::{invalid, Error, Result};
use crate::forward::{classify, fit_forward, ForwardOptions};
use crate::mnir::{collapse_counts, fit_mnir, sr_scores, PenaltyConfig, SentimentScale};
use crate::plot::{line_chart, Series};
use crate::topics::{fit_topics, posterior_draws, stream_seed, TopicFitOptions, TopicModel, TopicPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Map,
    Marginal,
    Pca,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Map, Strategy::Marginal, Strategy::Pca, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Map => "map",
            Strategy::Marginal => "marginal",
            Strategy::Pca => "pca",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| invalid(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMetric {
    /// Fraction of documents whose predicted level differs from the truth.
    Misclassification,
    /// Mean `|y_hat - y|` over numeric codes.
    MeanAbsoluteError,
}

impl ErrorMetric {
    pub fn evaluate(self, predicted: &[f64], truth: &[f64]) -> f64 {
        let n = truth.len() as f64;
        match self {
            ErrorMetric::Misclassification => predicted.iter().zip(truth).filter(|(a, b)| a != b).count() as f64 / n,
            ErrorMetric::MeanAbsoluteError => predicted.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        }
    }
}

impl FromStr for ErrorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misclass" | "misclassification" => Ok(ErrorMetric::Misclassification),
            "mae" => Ok(ErrorMetric::MeanAbsoluteError),
            _ => Err(invalid(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub strategies: Vec<Strategy>,
    /// Design sizes, seed documents included.
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub metric: ErrorMetric,
    /// Topic count, also the number of principal components.
    pub k: usize,
    /// Posterior draws per document for the marginal strategy.
    pub samples: usize,
    /// Run the whole pipeline separately within each listed subject.
    pub strata: Option<Vec<String>>,
    pub scale: SentimentScale,
    pub penalty: PenaltyConfig,
    pub forward: ForwardOptions,
    pub topics: TopicFitOptions,
}

impl ExperimentPlan {
    pub fn new(strategies: Vec<Strategy>, sizes: Vec<usize>, repetitions: usize, k: usize) -> Self {
        Self {
            strategies,
            sizes,
            repetitions,
            seed: 0,
            metric: ErrorMetric::Misclassification,
            k,
            samples: 50,
            strata: None,
            scale: SentimentScale::default(),
            penalty: PenaltyConfig {
                interactions: false,
                ..PenaltyConfig::default()
            },
            forward: ForwardOptions::default(),
            topics: TopicFitOptions::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(invalid("no strategies"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if self.k == 0 || self.samples == 0 {
            return Err(invalid("K and the sample count must be positive"));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sizes must be nonempty and strictly increasing"));
        }
        if self.sizes[0] < self.k {
            return Err(invalid(format!("smallest size {} is below K = {}", self.sizes[0], self.k)));
        }
        let max = *self.sizes.last().unwrap();
        if max > n {
            return Err(invalid(format!("size {max} exceeds the {n} documents")));
        }
        Ok(())
    }
}

/// Error of one strategy at one size over all repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub stratum: Option<String>,
    pub strategy: Strategy,
    pub size: usize,
    pub mean: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn get(&self, stratum: Option<&str>, strategy: Strategy, size: usize) -> Option<&CurvePoint> {
        self.points
            .iter()
            .find(|p| p.stratum.as_deref() == stratum && p.strategy == strategy && p.size == size)
    }

    /// Long format: one row per repetition.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["stratum", "strategy", "size", "repetition", "error", "mean"])?;
        for p in &self.points {
            for (r, v) in p.values.iter().enumerate() {
                w.write_record([
                    p.stratum.clone().unwrap_or_default(),
                    p.strategy.to_string(),
                    p.size.to_string(),
                    r.to_string(),
                    v.to_string(),
                    p.mean.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean error against size, one line per (stratum, strategy).
    pub fn to_svg(&self, y_label: &str) -> String {
        let mut series: Vec<Series> = Vec::new();
        for p in &self.points {
            let name = match &p.stratum {
                Some(s) => format!("{s}/{}", p.strategy),
                None => p.strategy.to_string(),
            };
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((p.size as f64, p.mean)),
                None => series.push(Series {
                    name,
                    points: vec![(p.size as f64, p.mean)],
                }),
            }
        }
        line_chart(&series, "design size", y_label)
    }
}

fn labels_of(corpus: &Corpus) -> Result<Vec<f64>> {
    (0..corpus.n_docs())
        .map(|i| {
            corpus
                .label(i)
                .ok_or_else(|| invalid(format!("document {:?} has no label", corpus.id(i))))
        })
        .collect()
}

/// Fit MNIR and the forward regression on `train` rows and return the
/// predicted level of every document. With a single observed level the
/// prediction is that level everywhere.
pub fn predict_from_subset(
    corpus: &Corpus,
    train: &[usize],
    scale: &SentimentScale,
    penalty: &PenaltyConfig,
    forward: &ForwardOptions,
) -> Result<Vec<f64>> {
    let sub = corpus.subset(train);
    let labels: Vec<f64> = labels_of(&sub)?;
    let mut distinct = labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        let only = *distinct.first().ok_or(Error::NoLabeledRows)?;
        return Ok(vec![only; corpus.n_docs()]);
    }
    let cells = collapse_counts(&sub, scale, penalty.interactions)?;
    let mnir = fit_mnir(&cells, penalty)?;
    let scores = sr_scores(&mnir, corpus)?;
    let fwd = fit_forward(&scores.subset(train), &labels, scale, forward)?;
    Ok(classify(&fwd, &scores).iter().map(|c| c.level).collect())
}

struct Factors {
    topics: Option<(TopicModel, FactorScores)>,
    pca: Option<FactorScores>,
}

fn strategy_order(
    strategy: Strategy,
    factors: &Factors,
    n: usize,
    k: usize,
    max: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let greedy = |scores: &FactorScores, variant: Variant<'_>| -> Result<Vec<usize>> {
        let (state, _) = seed_design(scores, k, seed)?;
        let target = max.max(state.len());
        Ok(greedy_rank(scores, state, target, variant)?.order())
    };
    match strategy {
        Strategy::Random => Ok(seeded_permutation(n, seed)[..max].to_vec()),
        Strategy::Map => {
            let (_, scores) = factors.topics.as_ref().expect("topics fitted");
            greedy(scores, Variant::Map)
        }
        Strategy::Marginal => {
            let (model, scores) = factors.topics.as_ref().expect("topics fitted");
            let draws = posterior_draws(model, samples, stream_seed(seed, 1))?;
            greedy(scores, Variant::Marginal(&draws))
        }
        Strategy::Pca => greedy(factors.pca.as_ref().expect("pca fitted"), Variant::Map),
    }
}

fn run_stratum(corpus: &Corpus, plan: &ExperimentPlan, stratum: Option<String>) -> Result<Vec<CurvePoint>> {
    let n = corpus.n_docs();
    plan.validate(n)?;
    let truth = labels_of(corpus)?;
    let needs_topics = plan
        .strategies
        .iter()
        .any(|s| matches!(s, Strategy::Map | Strategy::Marginal));
    let topics = if needs_topics {
        let model = fit_topics(
            corpus,
            plan.k,
            &TopicPrior::for_dims(plan.k, corpus.n_terms()),
            &TopicFitOptions {
                seed: plan.seed,
                ..plan.topics
            },
        )?;
        let scores = FactorScores::new(model.omega.clone(), FactorSource::Topics)?;
        Some((model, scores))
    } else {
        None
    };
    let pca = if plan.strategies.contains(&Strategy::Pca) {
        Some(pca_scores(corpus, plan.k)?)
    } else {
        None
    };
    let factors = Factors { topics, pca };
    let max = *plan.sizes.last().unwrap();

    // errors[rep][strategy][size]
    let errors: Vec<Vec<Vec<f64>>> = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = stream_seed(plan.seed, r as u64);
            plan.strategies
                .iter()
                .map(|&st| {
                    let order = strategy_order(st, &factors, n, plan.k, max, plan.samples, seed)?;
                    plan.sizes
                        .iter()
                        .map(|&size| {
                            let pred = predict_from_subset(corpus, &order[..size], &plan.scale, &plan.penalty, &plan.forward)?;
                            Ok(plan.metric.evaluate(&pred, &truth))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for (s, &strategy) in plan.strategies.iter().enumerate() {
        for (z, &size) in plan.sizes.iter().enumerate() {
            let values: Vec<f64> = errors.iter().map(|rep| rep[s][z]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            points.push(CurvePoint {
                stratum: stratum.clone(),
                strategy,
                size,
                mean,
                values,
            });
        }
    }
    Ok(points)
}

/// Repeated-design learning curves. Every document must carry its true
/// label; errors are measured over the whole corpus (or stratum).
pub fn run_design_experiment(corpus: &Corpus, plan: &ExperimentPlan) -> Result<LearningCurve> {
    let points = match &plan.strata {
        None => run_stratum(corpus, plan, None)?,
        Some(subjects) => {
            let mut all = Vec::new();
            for s in subjects {
                let rows = corpus.subject_rows(s);
                if rows.is_empty() {
                    return Err(invalid(format!("no documents for subject {s:?}")));
                }
                all.extend(run_stratum(&corpus.subset(&rows), plan, Some(s.clone()))?);
            }
            all
        }
    };
    Ok(LearningCurve { points })
}

#[derive(Debug, Clone)]
pub struct LearningOptions {
    pub scale: SentimentScale,
    pub penalty: PenaltyConfig,
    pub forward: ForwardOptions,
}

impl Default for LearningOptions {
    fn default() -> Self {
        Self {
            scale: SentimentScale::default(),
            penalty: PenaltyConfig::default(),
            forward: ForwardOptions::default(),
        }
    }
}

/// Learning metrics after the first `size` documents of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub size: usize,
    /// Labeled documents used, including generic rows.
    pub labeled: usize,
    pub nonzero_subject: usize,
    pub mean_entropy: f64,
    /// Too few sentiment levels to fit; metrics are NaN.
    pub skipped: bool,
}

/// Refit the interaction model on each prefix of `sequence` (pool row
/// indices in design order) plus every labeled generic (subject-free) pool
/// row, and report the subject's nonzero loadings and the mean entropy of
/// predictions over the subject's pool rows. Unlabeled rows in a prefix are
/// passed over.
pub fn learning_metrics(
    pool: &Corpus,
    sequence: &[usize],
    subject: &str,
    sizes: &[usize],
    options: &LearningOptions,
) -> Result<Vec<LearningPoint>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sizes must be strictly increasing"));
    }
    if let Some(&s) = sizes.last() {
        if s > sequence.len() {
            return Err(invalid(format!("size {s} exceeds the {} ranked documents", sequence.len())));
        }
    }
    let targets = pool.subject_rows(subject);
    if targets.is_empty() {
        return Err(invalid(format!("no pool documents for subject {subject:?}")));
    }
    let generic: Vec<usize> = (0..pool.n_docs())
        .filter(|&i| pool.subject(i).is_none() && pool.label(i).is_some())
        .collect();
    let penalty = PenaltyConfig {
        interactions: true,
        ..options.penalty
    };
    sizes
        .iter()
        .map(|&size| {
            let mut in_prefix = vec![false; pool.n_docs()];
            for &i in &sequence[..size] {
                in_prefix[i] = true;
            }
            let mut train: Vec<usize> = sequence[..size]
                .iter()
                .copied()
                .filter(|&i| pool.label(i).is_some())
                .collect();
            train.extend(generic.iter().copied().filter(|&i| !in_prefix[i]));
            let labels: Vec<f64> = train.iter().map(|&i| pool.label(i).unwrap()).collect();
            let mut distinct = labels.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < 2 {
                return Ok(LearningPoint {
                    size,
                    labeled: train.len(),
                    nonzero_subject: 0,
                    mean_entropy: f64::NAN,
                    skipped: true,
                });
            }
            let sub = pool.subset(&train);
            let cells = collapse_counts(&sub, &options.scale, true)?;
            let mnir = fit_mnir(&cells, &penalty)?;
            let scores = sr_scores(&mnir, pool)?;
            let fwd = fit_forward(&scores.subset(&train), &labels, &options.scale, &options.forward)?;
            let target_scores = scores.subset(&targets);
            let cls = classify(&fwd, &target_scores);
            let mean_entropy = cls.iter().map(|c| c.entropy).sum::<f64>() / cls.len() as f64;
            Ok(LearningPoint {
                size,
                labeled: train.len(),
                nonzero_subject: mnir.nonzero_subject_loadings(subject),
                mean_entropy,
                skipped: false,
            })
        })
        .collect()
}

pub fn write_learning_csv(points: &[LearningPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
