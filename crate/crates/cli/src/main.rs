use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use topicdesign::corpus::{build_corpus, Corpus, TokenizerConfig};
use topicdesign::design::{greedy_rank, pca_scores, seed_design, seeded_permutation, FactorScores, FactorSource, Variant};
use topicdesign::forward::{fit_forward, predict_probs, ForwardModel, ForwardOptions};
use topicdesign::harness::{
    learning_metrics, run_design_experiment, write_learning_csv, ErrorMetric, ExperimentPlan, LearningOptions, Strategy,
};
use topicdesign::io;
use topicdesign::mnir::{collapse_counts, fit_mnir, sr_scores, MnirModel, Penalty, PenaltyConfig, SentimentScale};
use topicdesign::topics::{fit_topics, posterior_draws, select_k, stream_seed, TopicFitOptions, TopicModel, TopicPrior};
use topicdesign_service::{tag_default_subject, AppState, Board, BoardConfig, Policy};

const TOPICS: &str = "topics";
const MNIR: &str = "mnir";
const FORWARD: &str = "forward";

#[derive(Parser)]
#[command(name = "topicdesign", version, about = "Topic-factor document design and sentiment prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a JSONL file of documents into a count corpus.
    BuildCorpus(BuildCorpus),
    /// Read a (doc_id, token, count) CSV into a corpus.
    ImportCounts(ImportCounts),
    /// Fit a topic model, optionally choosing K from a grid.
    FitTopics(FitTopics),
    /// Rank documents for labeling.
    Rank(Rank),
    /// Fit the inverse regression on a labeled corpus.
    FitMnir(FitMnir),
    /// Sufficient-reduction scores for every document of a corpus.
    SrScores(SrScores),
    /// Fit the ordinal forward model on scores and labels.
    FitForward(FitForward),
    /// Class probabilities, class and entropy per document.
    Predict(Predict),
    /// Learning curves of design strategies on a labeled corpus.
    Experiment(Experiment),
    /// Sequential learning metrics along a ranking.
    Learning(Learning),
    /// Serve the labeling queue over HTTP.
    Serve(Serve),
}

#[derive(Args)]
struct BuildCorpus {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Tokens kept whatever their document count.
    #[arg(long)]
    keep: Option<PathBuf>,
    /// Reuse the vocabulary of an existing corpus.
    #[arg(long)]
    vocab_from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportCounts {
    #[arg(long)]
    input: PathBuf,
    /// Optional labels CSV (doc_id, label).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitTopics {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, conflicts_with = "k_grid")]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit only the documents of this subject.
    #[arg(long)]
    subject: Option<String>,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankVariant {
    Map,
    Marginal,
    Pca,
    Random,
}

#[derive(Args)]
struct Rank {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Needed for `pca`; for `random` it can replace the model.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    t_max: usize,
    #[arg(long, value_enum, default_value_t = RankVariant::Map)]
    variant: RankVariant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Posterior draws per document for `marginal`.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Components for `pca`; defaults to the model's K.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScaleArg {
    /// Ordered sentiment levels.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,0,1")]
    scale: Vec<f64>,
}

impl ScaleArg {
    fn scale(&self) -> Result<SentimentScale> {
        Ok(SentimentScale::new(self.scale.clone())?)
    }
}

#[derive(Args)]
struct FitMnir {
    #[arg(long)]
    corpus: PathBuf,
    /// Labels CSV overriding those stored in the corpus.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    interactions: bool,
    /// `lambda=..,tau=..` (gamma lasso) or `l1=..`.
    #[arg(long, default_value = "lambda=1,tau=0.5")]
    penalty: String,
    #[command(flatten)]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SrScores {
    #[arg(long)]
    mnir: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitForward {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    fwd: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Experiment {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "map,random")]
    strategies: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value = "misclass")]
    metric: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Run separately within each listed subject.
    #[arg(long, value_delimiter = ',')]
    strata: Option<Vec<String>>,
    /// Fit subject interactions in the inverse regression.
    #[arg(long)]
    interactions: bool,
    #[command(flatten)]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG chart of the mean curves.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct Learning {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    subject: String,
    /// Explicit prefix sizes; otherwise every `step` ranked documents.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    step: usize,
    #[command(flatten)]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Serve {
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "agree-of-two")]
    policy: String,
    #[arg(long, default_value_t = 10)]
    lease_minutes: u64,
    /// Queue for documents without a subject.
    #[arg(long, default_value = topicdesign_service::DEFAULT_SUBJECT)]
    default_subject: String,
    #[command(flatten)]
    scale: ScaleArg,
}

fn parse_penalty(spec: &str) -> Result<Penalty> {
    let mut fields = BTreeMap::new();
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').with_context(|| format!("penalty field {part:?} is not key=value"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("penalty value {v:?}"))?;
        fields.insert(k.trim().to_ascii_lowercase(), v);
    }
    if let Some(&rate) = fields.get("l1") {
        return Ok(Penalty::L1 { rate });
    }
    match (fields.get("lambda"), fields.get("tau")) {
        (Some(&lambda), Some(&tau)) => Ok(Penalty::GammaLasso { lambda, tau }),
        _ => bail!("penalty needs lambda=..,tau=.. or l1=.."),
    }
}

fn load_with_labels(path: &Path, labels: Option<&Path>) -> Result<Corpus> {
    let corpus = io::load_corpus(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match labels {
        Some(l) => io::apply_labels(corpus, &io::read_labels(l)?)?,
        None => corpus,
    })
}

fn build(args: BuildCorpus) -> Result<()> {
    let docs = io::read_jsonl(&args.input)?;
    let mut config = TokenizerConfig::default().with_min_doc_count(args.min_count);
    if let Some(p) = &args.stopwords {
        config = config.with_stopwords(io::read_word_list(p)?);
    }
    if let Some(p) = &args.keep {
        config = config.with_keep_list(io::read_word_list(p)?);
    }
    let vocab = match &args.vocab_from {
        Some(p) => Some(io::load_corpus(p)?.vocab().clone()),
        None => None,
    };
    let (corpus, report) = build_corpus(&docs, &config, vocab.as_ref())?;
    io::save_corpus(&corpus, &args.out)?;
    eprintln!(
        "{} documents, {} terms, {} dropped as empty",
        corpus.n_docs(),
        corpus.n_terms(),
        report.dropped.len()
    );
    Ok(())
}

fn import(args: ImportCounts) -> Result<()> {
    let corpus = io::import_counts(&args.input)?;
    let corpus = match &args.labels {
        Some(l) => io::apply_labels(corpus, &io::read_labels(l)?)?,
        None => corpus,
    };
    io::save_corpus(&corpus, &args.out)?;
    eprintln!("{} documents, {} terms", corpus.n_docs(), corpus.n_terms());
    Ok(())
}

fn topics(args: FitTopics) -> Result<()> {
    let mut corpus = io::load_corpus(&args.corpus)?;
    if let Some(s) = &args.subject {
        let rows = corpus.subject_rows(s);
        if rows.is_empty() {
            bail!("no documents with subject {s:?}");
        }
        corpus = corpus.subset(&rows);
    }
    let options = TopicFitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
    };
    let model = match (args.k, args.k_grid) {
        (Some(k), None) => fit_topics(&corpus, k, &TopicPrior::for_dims(k, corpus.n_terms()), &options)?,
        (None, Some(grid)) => {
            let sel = select_k(&corpus, &grid, &options)?;
            for (k, lm) in &sel.candidates {
                eprintln!("K = {k}: log marginal {:.3}", lm.value);
            }
            eprintln!("selected K = {}", sel.best_k);
            sel.model
        }
        _ => bail!("give exactly one of --k or --k-grid"),
    };
    eprintln!(
        "{} iterations, converged: {}, log posterior {:.4}",
        model.report.iterations, model.report.converged, model.log_posterior
    );
    io::save_model(&model, TOPICS, &args.out)?;
    Ok(())
}

fn rank(args: Rank) -> Result<()> {
    let model: Option<TopicModel> = match &args.model {
        Some(p) => Some(io::load_model(TOPICS, p)?),
        None => None,
    };
    let corpus = match &args.corpus {
        Some(p) => Some(io::load_corpus(p)?),
        None => None,
    };
    let need_model = || model.as_ref().context("this variant needs --model");
    let rows = match args.variant {
        RankVariant::Map | RankVariant::Marginal => {
            let m = need_model()?;
            let scores = FactorScores::new(m.factor_matrix(), FactorSource::Topics)?;
            let (state, report) = seed_design(&scores, m.k, args.seed)?;
            if report.extra_draws > 0 {
                eprintln!("seeding needed {} extra draws", report.extra_draws);
            }
            let ranking = if let RankVariant::Marginal = args.variant {
                let draws = posterior_draws(m, args.samples, stream_seed(args.seed, 1))?;
                greedy_rank(&scores, state, args.t_max, Variant::Marginal(&draws))?
            } else {
                greedy_rank(&scores, state, args.t_max, Variant::Map)?
            };
            io::ranking_rows(&ranking, &m.doc_ids)
        }
        RankVariant::Pca => {
            let c = corpus.as_ref().context("the pca variant needs --corpus")?;
            let k = args.k.or(model.as_ref().map(|m| m.k)).context("give --k or --model")?;
            let scores = pca_scores(c, k)?;
            let (state, _) = seed_design(&scores, k, args.seed)?;
            let ranking = greedy_rank(&scores, state, args.t_max, Variant::Map)?;
            io::ranking_rows(&ranking, &c.ids())
        }
        RankVariant::Random => {
            let ids = match (&model, &corpus) {
                (Some(m), _) => m.doc_ids.clone(),
                (None, Some(c)) => c.ids(),
                _ => bail!("the random variant needs --model or --corpus"),
            };
            let mut order = seeded_permutation(ids.len(), args.seed);
            order.truncate(args.t_max);
            io::order_rows(&order, &ids)
        }
    };
    io::write_ranking(&rows, &args.out)?;
    eprintln!("{} documents ranked", rows.len());
    Ok(())
}

fn mnir(args: FitMnir) -> Result<()> {
    let corpus = load_with_labels(&args.corpus, args.labels.as_deref())?;
    let scale = args.scale.scale()?;
    let config = PenaltyConfig {
        penalty: parse_penalty(&args.penalty)?,
        interactions: args.interactions,
        ..PenaltyConfig::default()
    };
    let cells = collapse_counts(&corpus, &scale, args.interactions)?;
    if cells.excluded_unlabeled > 0 {
        eprintln!("{} unlabeled documents left out", cells.excluded_unlabeled);
    }
    let model = fit_mnir(&cells, &config)?;
    eprintln!(
        "{} sweeps, converged: {}, {} nonzero main loadings",
        model.report.sweeps, model.report.converged, model.report.nonzero_main
    );
    io::save_model(&model, MNIR, &args.out)?;
    Ok(())
}

fn scores(args: SrScores) -> Result<()> {
    let model: MnirModel = io::load_model(MNIR, &args.mnir)?;
    let corpus = io::load_corpus(&args.corpus)?;
    io::write_scores(&sr_scores(&model, &corpus)?, &args.out)?;
    Ok(())
}

fn forward(args: FitForward) -> Result<()> {
    let scores = io::read_scores(&args.scores)?;
    let labels = io::read_labels(&args.labels)?;
    let (rows, y): (Vec<usize>, Vec<f64>) = scores
        .doc_ids
        .iter()
        .enumerate()
        .filter_map(|(i, d)| labels.get(d).map(|&l| (i, l)))
        .unzip();
    if rows.is_empty() {
        bail!("no scored document has a label");
    }
    let model = fit_forward(&scores.subset(&rows), &y, &args.scale.scale()?, &ForwardOptions::default())?;
    if let Some(r) = &model.report {
        eprintln!("{} Newton steps, converged: {}", r.iterations, r.converged);
    }
    io::save_model(&model, FORWARD, &args.out)?;
    Ok(())
}

fn predict(args: Predict) -> Result<()> {
    let model: ForwardModel = io::load_model(FORWARD, &args.fwd)?;
    let scores = io::read_scores(&args.scores)?;
    let probs = predict_probs(&model, &scores);
    io::write_predictions(&model, &scores, &probs, &args.out)?;
    Ok(())
}

fn experiment(args: Experiment) -> Result<()> {
    let corpus = load_with_labels(&args.corpus, args.labels.as_deref())?;
    let strategies = args
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy>())
        .collect::<topicdesign::Result<Vec<_>>>()?;
    let mut plan = ExperimentPlan::new(strategies, args.sizes, args.reps, args.k);
    plan.metric = args.metric.parse::<ErrorMetric>()?;
    plan.seed = args.seed;
    plan.samples = args.samples;
    plan.strata = args.strata;
    plan.scale = args.scale.scale()?;
    plan.penalty.interactions = args.interactions;
    let curve = run_design_experiment(&corpus, &plan)?;
    curve.write_csv(&args.out)?;
    for p in &curve.points {
        eprintln!(
            "{:<10} {:<8} {:>6} {:.4}",
            p.stratum.as_deref().unwrap_or("-"),
            p.strategy,
            p.size,
            p.mean
        );
    }
    if let Some(path) = &args.plot {
        std::fs::write(path, curve.to_svg("mean error"))?;
    }
    Ok(())
}

fn learning(args: Learning) -> Result<()> {
    let pool = load_with_labels(&args.pool, Some(&args.labels))?;
    let ranking = io::read_ranking(&args.ranking)?;
    let ids = pool.id_index();
    let sequence = ranking
        .iter()
        .map(|r| ids.get(r.doc_id.as_str()).copied().with_context(|| format!("ranked document {:?} not in the pool", r.doc_id)))
        .collect::<Result<Vec<usize>>>()?;
    let sizes = match args.sizes {
        Some(s) => s,
        None => {
            if args.step == 0 {
                bail!("--step must be positive");
            }
            (1..=sequence.len() / args.step).map(|m| m * args.step).collect()
        }
    };
    let options = LearningOptions {
        scale: args.scale.scale()?,
        ..LearningOptions::default()
    };
    let points = learning_metrics(&pool, &sequence, &args.subject, &sizes, &options)?;
    for p in points.iter().filter(|p| p.skipped) {
        eprintln!("size {}: fewer than two sentiment levels, skipped", p.size);
    }
    write_learning_csv(&points, &args.out)?;
    Ok(())
}

fn serve(args: Serve) -> Result<()> {
    let pool = tag_default_subject(io::load_corpus(&args.corpus)?, &args.default_subject)?;
    let ranking = io::read_ranking(&args.ranking)?;
    let config = BoardConfig {
        policy: args.policy.parse::<Policy>().map_err(anyhow::Error::msg)?,
        lease_ms: args.lease_minutes * 60_000,
        scale: args.scale.scale()?,
    };
    let board = Board::from_ranking(&ranking, &pool, &args.default_subject, config)?;
    let subjects = board.subjects();
    let options = LearningOptions {
        scale: board.config().scale.clone(),
        ..LearningOptions::default()
    };
    let state = AppState::persistent(board, pool, options, topicdesign_service::system_clock(), &args.store)?;
    let addr = SocketAddr::new(args.host, args.port);
    eprintln!("serving queues {} on http://{addr}", subjects.join(", "));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(topicdesign_service::serve(Arc::new(state), addr))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BuildCorpus(a) => build(a),
        Command::ImportCounts(a) => import(a),
        Command::FitTopics(a) => topics(a),
        Command::Rank(a) => rank(a),
        Command::FitMnir(a) => mnir(a),
        Command::SrScores(a) => scores(a),
        Command::FitForward(a) => forward(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
        Command::Learning(a) => learning(a),
        Command::Serve(a) => serve(a),
    }
}
