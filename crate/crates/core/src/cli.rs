//! The `moodmap` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{LinRegModel, LogRegOvaModel, OptimizerOptions};
use crate::classify::{softmax, BinaryTaskSpec, EmotionClassifier};
use crate::cluster::{linkage_complete, voronoi_grid, voronoi_line};
use crate::corpus::synth::{LatentWorld, PlantedPairs, ReviewDomain, SuperTopicLayout};
use crate::corpus::{load_corpus, Corpus, CorpusKind};
use crate::error::{Error, Result};
use crate::eval::{rating_learning_curve, run_experiment, ExperimentConfig, Method, RatingCurveConfig, Tuning};
use crate::features::{Featurizer, Normalize, SparseVector, Tokenizer, Vocabulary};
use crate::gaussian::{CovarianceSpec, DistanceKind, GaussianClassModel, Pooling, Structure};
use crate::linalg::RidgeSolver;
use crate::manifold::{ManifoldConfig, ManifoldModel};
use crate::model_file::{Metadata, ModelFile, Payload};
use crate::sentiment::SentimentModel;

#[derive(Debug, Parser)]
#[command(
    name = "moodmap",
    version,
    about = "Emotion manifolds for text: fit, classify, cluster, export",
    args_override_self = true
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with default flag values: top-level keys for global flags,
    /// one table per subcommand. Command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Build a vocabulary and write sparse feature vectors.
    Featurize(FeaturizeArgs),
    /// Fit the emotion manifold (centroids, MDS, regression).
    FitManifold(FitManifoldArgs),
    /// Fit an emotion classifier (manifold Gaussians or the logistic baseline).
    FitClassifier(FitClassifierArgs),
    /// Predict emotions for documents.
    Predict(PredictArgs),
    /// Export the pairwise emotion distance matrix.
    Distances(DistancesArgs),
    /// Complete-linkage dendrogram from a distance matrix.
    Cluster(ClusterArgs),
    /// Likelihood tessellation of two manifold axes.
    Voronoi(VoronoiArgs),
    /// Fit the rating model on top of a manifold.
    FitSentiment(FitSentimentArgs),
    /// Predict ratings for documents.
    PredictRating(PredictArgs),
    /// Export embedded class centroids.
    ExportCentroids(ExportCentroidsArgs),
    /// Export per-rating mean positions on two axes.
    ExportCurve(ExportCurveArgs),
    /// Words with the most extreme regression weights on an axis.
    TopWords(TopWordsArgs),
    /// Repeated-split evaluation against the baselines.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Emotion,
    Rating,
}

impl From<KindArg> for CorpusKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Emotion => CorpusKind::Emotion,
            KindArg::Rating => CorpusKind::Rating,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    /// Emotions on a circle in a planted 2-D word space.
    Latent,
    /// Classes grouped into super-topics sharing words.
    Topics,
    /// Pairs of near-identical classes.
    Pairs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus JSONL output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::Emotion)]
    kind: KindArg,
    #[arg(long, value_enum, default_value_t = LayoutArg::Latent)]
    layout: LayoutArg,
    /// Number of emotion classes (latent and topics layouts; pairs uses 2 per pair).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Total number of documents.
    #[arg(long, default_value_t = 300)]
    docs: usize,
    #[arg(long, default_value_t = 30)]
    doc_length: usize,
    /// Emotional vocabulary size of the latent layout.
    #[arg(long, default_value_t = 144)]
    words: usize,
    /// Seed of the latent word space; defaults to --seed so emotion and
    /// rating corpora generated with the same seed share one world.
    #[arg(long)]
    world_seed: Option<u64>,
    /// Super-topics (topics layout).
    #[arg(long, default_value_t = 4)]
    topics: usize,
    /// Share of a class's words drawn from its super-topic (topics layout).
    #[arg(long, default_value_t = 0.8)]
    shared: f64,
    /// Words per super-topic block (topics layout).
    #[arg(long, default_value_t = 40)]
    topic_words: usize,
    /// Words private to each class (topics layout).
    #[arg(long, default_value_t = 20)]
    class_words: usize,
    /// Uniform background words (topics layout).
    #[arg(long, default_value_t = 100)]
    background_words: usize,
    /// Share of tokens drawn from the background (topics layout).
    #[arg(long, default_value_t = 0.3)]
    background: f64,
}

#[derive(Debug, Args, Clone)]
struct FeatureArgs {
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value = "l1")]
    normalize: Normalize,
    /// 2 adds adjacent token pairs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    ngram: u8,
    /// Comma-separated negator words (the clitic n't is always one).
    #[arg(long, value_delimiter = ',')]
    negators: Option<Vec<String>>,
}

impl FeatureArgs {
    fn tokenizer(&self) -> Tokenizer {
        let mut t = Tokenizer::default();
        if let Some(n) = &self.negators {
            t.negators = n.clone();
        }
        t.ngram = self.ngram as usize;
        t
    }

    fn fit(&self, corpus: &Corpus) -> Result<Featurizer> {
        Featurizer::fit(corpus, self.tokenizer(), self.min_count, self.normalize)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Primal,
    Dual,
    Cg,
}

#[derive(Debug, Args, Clone)]
struct ManifoldArgs {
    /// Manifold dimension; defaults to (number of classes - 1).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
}

impl ManifoldArgs {
    fn config(&self) -> ManifoldConfig {
        ManifoldConfig {
            dim: self.dim,
            ridge: self.ridge,
            solver: match self.solver {
                SolverArg::Auto => RidgeSolver::Auto,
                SolverArg::Primal => RidgeSolver::Primal,
                SolverArg::Dual => RidgeSolver::Dual,
                SolverArg::Cg => RidgeSolver::ConjugateGradient,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StructureArg {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Pooled,
    PerClass,
}

#[derive(Debug, Args, Clone)]
struct CovArgs {
    #[arg(long, value_enum, default_value_t = StructureArg::Full)]
    structure: StructureArg,
    #[arg(long, value_enum, default_value_t = PoolingArg::Pooled)]
    pooling: PoolingArg,
    /// Shrinkage weight toward the spherical target, in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Diagonal ridge; defaults to 1e-6 * trace / l.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Use trace / l instead of the trace as the spherical target scale.
    #[arg(long)]
    normalize_trace: bool,
}

impl CovArgs {
    fn spec(&self) -> CovarianceSpec {
        let structure = match self.structure {
            StructureArg::Diagonal => Structure::Diagonal,
            StructureArg::Full => Structure::Full,
        };
        let pooling = match self.pooling {
            PoolingArg::Pooled => Pooling::Pooled,
            PoolingArg::PerClass => Pooling::PerClass,
        };
        CovarianceSpec {
            structure,
            pooling,
            lambda: self.lambda,
            epsilon: self.epsilon,
            normalize_trace: self.normalize_trace,
        }
    }
}

#[derive(Debug, Args, Clone)]
struct TaskArgs {
    /// Labels mapped to "pos" (binary task).
    #[arg(long, value_delimiter = ',', requires = "negative")]
    positive: Option<Vec<String>>,
    /// Labels mapped to "neg" (binary task).
    #[arg(long, value_delimiter = ',', requires = "positive")]
    negative: Option<Vec<String>>,
    #[arg(long, default_value = "binary")]
    task_name: String,
    /// Keep the manifold fit on all emotion labels for the binary task.
    #[arg(long)]
    reuse_manifold: bool,
}

impl TaskArgs {
    fn spec(&self) -> Result<Option<BinaryTaskSpec>> {
        match (&self.positive, &self.negative) {
            (Some(p), Some(n)) => Ok(Some(BinaryTaskSpec::new(&self.task_name, p.clone(), n.clone())?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Emotion)]
    kind: KindArg,
    /// Feature JSONL output.
    #[arg(long)]
    out: PathBuf,
    /// Reuse the vocabulary of a model file instead of building one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the vocabulary as JSON [[term, frequency], ...].
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Debug, Args)]
struct FitManifoldArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    manifold: ManifoldArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierMethod {
    Gaussian,
    Logreg,
}

#[derive(Debug, Args)]
struct FitClassifierArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Manifold (or classifier) model to build on; fit from --input otherwise.
    #[arg(long)]
    manifold: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClassifierMethod::Gaussian)]
    method: ClassifierMethod,
    /// Logistic regularization (logreg method).
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    manifold_args: ManifoldArgs,
    #[command(flatten)]
    cov: CovArgs,
    #[command(flatten)]
    task: TaskArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL of documents ({"id", "text"}) or feature records from `featurize`.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    Bhattacharyya,
    HellingerSq,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = DistanceArg::Bhattacharyya)]
    kind: DistanceArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Distance CSV written by `distances`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    distances: Option<PathBuf>,
    /// Classifier model; Bhattacharyya distances are computed from it.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Newick output; standard output when omitted.
    #[arg(long)]
    newick: Option<PathBuf>,
    /// Number of clusters for the assignment CSV.
    #[arg(long, requires = "assignments")]
    k: Option<usize>,
    #[arg(long, requires = "k")]
    assignments: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VoronoiArgs {
    #[arg(long)]
    model: PathBuf,
    /// One axis for a line, two for a grid.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    axes: Vec<usize>,
    /// min,max per axis; derived from the class means when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bounds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SentimentMethod {
    Manifold,
    Linreg,
}

#[derive(Debug, Args)]
struct FitSentimentArgs {
    /// Manifold or classifier model providing the frozen projection.
    #[arg(long, required_if_eq("method", "manifold"))]
    model: Option<PathBuf>,
    /// Rating corpus JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SentimentMethod::Manifold)]
    method: SentimentMethod,
    /// Ridge strength of the linreg baseline.
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    #[command(flatten)]
    cov: CovArgs,
    /// Featurization of the linreg baseline.
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Debug, Args)]
struct ExportCentroidsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportCurveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    axes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TopWordsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    axis: usize,
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Emotion corpus JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Rating corpus; switches to the rating learning-curve protocol.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// JSON report output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "lda-diag,lda-full,qda-diag,qda-full,logreg")]
    methods: Vec<Method>,
    /// Use the fixed --lambda, --ridge and --reg instead of validation search.
    #[arg(long)]
    no_tuning: bool,
    /// Logistic regularization, or ridge strength of the rating baseline.
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    /// Training-set sizes for the rating curve.
    #[arg(long, value_delimiter = ',', default_value = "50,100,500,2000")]
    train_sizes: Vec<usize>,
    /// Held-out documents per draw for the rating curve.
    #[arg(long, default_value_t = 1000)]
    test_size: usize,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    manifold: ManifoldArgs,
    #[command(flatten)]
    cov: CovArgs,
    #[command(flatten)]
    task: TaskArgs,
}

/// Sparse features of one document, as written by `featurize`.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rating: Option<i64>,
    fingerprint: String,
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct InputRecord {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    fingerprint: Option<String>,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    indices: Option<Vec<usize>>,
    #[serde(default)]
    values: Option<Vec<f64>>,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(ParseFailure::Domain(e)) => {
            report(&e);
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            report(&e);
            1
        }
    }
}

fn is_broken_pipe(e: &Error) -> bool {
    let kind = match e {
        Error::Io(e) => Some(e.kind()),
        Error::Json(e) => e.io_error_kind(),
        Error::Csv(e) => match e.kind() {
            csv::ErrorKind::Io(e) => Some(e.kind()),
            _ => None,
        },
        _ => None,
    };
    kind == Some(io::ErrorKind::BrokenPipe)
}

fn report(e: &Error) {
    let msg = e.to_string().replace('\n', " ");
    let prefix = format!("{}: ", e.kind().replace('_', " "));
    eprintln!("error: {}: {}", e.kind(), msg.strip_prefix(&prefix).unwrap_or(&msg));
}

enum ParseFailure {
    Clap(clap::Error),
    Domain(Error),
}

fn parse(args: &[OsString]) -> std::result::Result<Cli, ParseFailure> {
    let Some(path) = config_path(args) else {
        return Cli::try_parse_from(args).map_err(ParseFailure::Clap);
    };
    let merged = merge_config(args, &path).map_err(ParseFailure::Domain)?;
    Cli::try_parse_from(&merged).map_err(ParseFailure::Clap)
}

/// Value of `--config`, found before clap runs so that required flags may
/// come from the file.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--threads", "--config"];

/// Position of the subcommand token in `args`.
fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if GLOBAL_VALUE_FLAGS.contains(&a.as_ref()) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn toml_to_flags(table: &toml::Table, skip_tables: bool) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> Result<String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                other => Err(Error::InvalidArgument(format!("config key {key:?}: unsupported value {other}"))),
            }
        };
        match value {
            toml::Value::Table(_) if skip_tables => {}
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v)?.into());
            }
        }
    }
    Ok(out)
}

/// Inserts config-file flags ahead of the user's own so the latter win.
fn merge_config(args: &[OsString], path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("config {}: {}", path.display(), e.message())))?;
    let idx = subcommand_index(args).ok_or_else(|| Error::InvalidArgument("missing subcommand".into()))?;
    let sub = args[idx].to_string_lossy().to_string();
    let mut merged = vec![args[0].clone(), args[idx].clone()];
    let globals: toml::Table = table
        .iter()
        .filter(|(k, v)| !v.is_table() && *k != "config")
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    merged.extend(toml_to_flags(&globals, true)?);
    if let Some(section) = table.get(&sub) {
        let section = section
            .as_table()
            .ok_or_else(|| Error::InvalidArgument(format!("config section {sub:?} must be a table")))?;
        merged.extend(toml_to_flags(section, false)?);
    }
    merged.extend(args[1..idx].iter().cloned());
    merged.extend(args[idx + 1..].iter().cloned());
    Ok(merged)
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists (e.g. repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(&a, seed),
        Command::Featurize(a) => featurize(&a),
        Command::FitManifold(a) => fit_manifold(&a, seed),
        Command::FitClassifier(a) => fit_classifier(&a, seed),
        Command::Predict(a) => predict(&a),
        Command::Distances(a) => distances(&a),
        Command::Cluster(a) => cluster(&a),
        Command::Voronoi(a) => voronoi(&a),
        Command::FitSentiment(a) => fit_sentiment(&a, seed),
        Command::PredictRating(a) => predict_rating(&a),
        Command::ExportCentroids(a) => export_centroids(&a),
        Command::ExportCurve(a) => export_curve(&a),
        Command::TopWords(a) => top_words(&a),
        Command::Eval(a) => eval(&a, seed),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(output(path)?))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    if a.docs == 0 || a.doc_length == 0 {
        return Err(Error::InvalidArgument("--docs and --doc-length must be positive".into()));
    }
    let doc_seed = seed ^ 0x005e_ed0f_d0c5;
    let world_seed = a.world_seed.unwrap_or(seed);
    let corpus = match (a.kind, a.layout) {
        (KindArg::Rating, _) => {
            let world = LatentWorld::new(a.classes.max(2), a.words, world_seed);
            let domain = ReviewDomain::default();
            let per_level = a.docs.div_ceil(domain.levels.len());
            world.rating_corpus(&domain, per_level, a.doc_length, doc_seed)?
        }
        (KindArg::Emotion, LayoutArg::Latent) => {
            if a.classes < 2 {
                return Err(Error::InvalidArgument("--classes must be at least 2".into()));
            }
            let world = LatentWorld::new(a.classes, a.words, world_seed);
            world.emotion_corpus(a.docs.div_ceil(a.classes), a.doc_length, doc_seed)?
        }
        (KindArg::Emotion, LayoutArg::Topics) => {
            if a.topics == 0 || a.classes < a.topics || !a.classes.is_multiple_of(a.topics) {
                return Err(Error::InvalidArgument("--classes must be a positive multiple of --topics".into()));
            }
            let layout = SuperTopicLayout {
                topics: a.topics,
                classes_per_topic: a.classes / a.topics,
                shared_fraction: a.shared,
                topic_words: a.topic_words,
                class_words: a.class_words,
                background_words: a.background_words,
                background_fraction: a.background,
            };
            let (vocab, specs) = layout.build(a.docs.div_ceil(a.classes));
            crate::corpus::synth::generate_synthetic(&vocab, &specs, a.doc_length, doc_seed)?
        }
        (KindArg::Emotion, LayoutArg::Pairs) => {
            let pairs = (a.classes / 2).max(1);
            let layout = PlantedPairs {
                pairs,
                pair_words: 20,
                private_words: 5,
                twin_fraction: 0.1,
                shared_words: 50,
                shared_fraction: 0.3,
            };
            let (vocab, specs) = layout.build(a.docs.div_ceil(2 * pairs));
            crate::corpus::synth::generate_synthetic(&vocab, &specs, a.doc_length, doc_seed)?
        }
    };
    match &a.out {
        Some(p) => corpus.save(p),
        None => {
            let mut out = output(None)?;
            corpus.write_jsonl(&mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let corpus = load_corpus(&a.input, a.kind.into())?;
    let featurizer = match &a.model {
        Some(p) => ModelFile::load(p)?.featurizer().clone(),
        None => a.features.fit(&corpus)?,
    };
    let fingerprint = featurizer.fingerprint();
    let vectors = featurizer.vectorize_all::<f64>(&corpus);
    let mut out = output(Some(&a.out))?;
    for (d, v) in corpus.docs().iter().zip(vectors) {
        let rec = FeatureRecord {
            id: d.id.clone(),
            label: d.label.clone(),
            rating: d.rating,
            fingerprint: fingerprint.clone(),
            dim: v.dim(),
            indices: v.indices().to_vec(),
            values: v.values().to_vec(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    if let Some(p) = &a.vocab_out {
        let mut w = output(Some(p))?;
        serde_json::to_writer(&mut w, &featurizer.vocabulary)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn fit_manifold(a: &FitManifoldArgs, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.input, CorpusKind::Emotion)?;
    let featurizer = a.features.fit(&corpus)?;
    let ds = featurizer.dataset::<f64>(&corpus)?;
    let m = ManifoldModel::fit(&ds, featurizer.dim(), &featurizer.fingerprint(), &a.manifold.config())?;
    ModelFile::manifold(&featurizer, &m, Metadata::new("fit-manifold", Some(seed))).save(&a.out)
}

fn fit_classifier(a: &FitClassifierArgs, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.input, CorpusKind::Emotion)?;
    let task = a.task.spec()?;
    let task_corpus = match &task {
        Some(spec) => crate::classify::make_binary_task(&corpus, spec)?,
        None => corpus.clone(),
    };
    let meta = Metadata::new("fit-classifier", Some(seed));
    if let ClassifierMethod::Logreg = a.method {
        let featurizer = a.features.fit(&task_corpus)?;
        let ds = featurizer.dataset::<f64>(&task_corpus)?;
        let m = LogRegOvaModel::fit(&ds, featurizer.dim(), a.reg, &featurizer.fingerprint(), &OptimizerOptions::default())?;
        return ModelFile::logreg(&featurizer, &m, meta).save(&a.out);
    }
    let spec = a.cov.spec();
    let reuse = task.is_some() && a.task.reuse_manifold;
    let (featurizer, manifold) = match &a.manifold {
        Some(p) => {
            let file = ModelFile::load(p)?;
            (file.featurizer().clone(), file.manifold_model()?)
        }
        None => {
            let source = if reuse { &corpus } else { &task_corpus };
            let featurizer = a.features.fit(source)?;
            let ds = featurizer.dataset::<f64>(source)?;
            let m = ManifoldModel::fit(&ds, featurizer.dim(), &featurizer.fingerprint(), &a.manifold_args.config())?;
            (featurizer, m)
        }
    };
    let ds = featurizer.dataset::<f64>(&task_corpus)?;
    let clf = if ds.classes == manifold.labels {
        EmotionClassifier::fit_gaussians(manifold, &ds, &spec)?
    } else if reuse || a.manifold.is_some() {
        EmotionClassifier::fit_on_reused_manifold(manifold, &ds, &spec)?
    } else {
        return Err(Error::InvalidArgument("corpus labels differ from the manifold's".into()));
    };
    if clf.reuses_manifold() {
        log::info!("gaussians fit on a manifold trained with {} labels", clf.manifold.labels.len());
    }
    ModelFile::classifier(&featurizer, &clf, meta).save(&a.out)
}

/// Reads documents or feature records, vectorizing text with `featurizer`.
fn read_inputs(path: &Path, featurizer: &Featurizer) -> Result<Vec<(String, SparseVector<f64>)>> {
    let reader = BufReader::new(File::open(path)?);
    let fingerprint = featurizer.fingerprint();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let rec: InputRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let v = match (rec.indices, rec.values, rec.text) {
            (Some(indices), Some(values), _) => {
                let fp = rec.fingerprint.unwrap_or_default();
                if fp != fingerprint {
                    return Err(Error::FingerprintMismatch {
                        model: fingerprint,
                        input: fp,
                    });
                }
                if indices.len() != values.len() {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "indices and values differ in length".into(),
                    });
                }
                SparseVector::from_pairs(rec.dim.unwrap_or(featurizer.dim()), indices.into_iter().zip(values).collect())?
                    .with_dim(featurizer.dim())?
            }
            (_, _, Some(text)) => featurizer.vectorize(&text),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "record needs \"text\" or \"indices\"/\"values\"".into(),
                })
            }
        };
        out.push((rec.id, v));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    label: &'a str,
    scores: serde_json::Map<String, serde_json::Value>,
}

fn score_map(labels: &[String], probs: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    labels
        .iter()
        .zip(probs)
        .map(|(l, p)| (l.clone(), serde_json::Value::from(*p)))
        .collect()
}

fn predict(a: &PredictArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let inputs = read_inputs(&a.input, file.featurizer())?;
    let mut out = output(a.out.as_deref())?;
    match &file.payload {
        Payload::EmotionClassifier { .. } => {
            let clf = file.classifier_model()?;
            for (id, x) in &inputs {
                let scores = clf.predict_scores(x)?;
                let y = crate::classify::argmax(&scores);
                let p = Prediction {
                    id,
                    label: &clf.labels()[y],
                    scores: score_map(clf.labels(), &softmax(&scores)),
                };
                serde_json::to_writer(&mut out, &p)?;
                out.write_all(b"\n")?;
            }
        }
        Payload::LogregOva { .. } => {
            let m = file.logreg_model()?;
            for (id, x) in &inputs {
                let scores = m.scores(x)?;
                let y = crate::classify::argmax(&scores);
                let p = Prediction {
                    id,
                    label: &m.labels[y],
                    scores: score_map(&m.labels, &softmax(&scores)),
                };
                serde_json::to_writer(&mut out, &p)?;
                out.write_all(b"\n")?;
            }
        }
        other => {
            return Err(Error::ModelFile(format!(
                "predict needs an emotion-classifier or logreg-ova model, found {}",
                other.model_type()
            )))
        }
    }
    out.flush()?;
    Ok(())
}

fn write_distance_csv(labels: &[String], d: &DMatrix<f64>, path: Option<&Path>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, l) in labels.iter().enumerate() {
        let mut row = vec![l.clone()];
        row.extend((0..labels.len()).map(|j| d[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_distance_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let n = labels.len();
    let mut d = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if i >= n || rec.len() != n + 1 || rec[0] != labels[i] {
            return Err(Error::Parse {
                line,
                message: "distance rows must follow the header's label order".into(),
            });
        }
        for j in 0..n {
            d[(i, j)] = rec[j + 1].trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            line: rows + 1,
            message: format!("expected {n} rows, found {rows}"),
        });
    }
    Ok((labels, d))
}

fn class_gaussians(file: &ModelFile) -> Result<GaussianClassModel<f64>> {
    match &file.payload {
        Payload::EmotionClassifier { .. } => Ok(file.classifier_model()?.gaussians),
        Payload::Sentiment { .. } => Ok(file.sentiment_model()?.gaussians),
        other => Err(Error::ModelFile(format!(
            "expected a model with class Gaussians, found {}",
            other.model_type()
        ))),
    }
}

fn distances(a: &DistancesArgs) -> Result<()> {
    let g = class_gaussians(&ModelFile::load(&a.model)?)?;
    let kind = match a.kind {
        DistanceArg::Bhattacharyya => DistanceKind::Bhattacharyya,
        DistanceArg::HellingerSq => DistanceKind::HellingerSq,
    };
    write_distance_csv(&g.labels, &g.distance_matrix(kind)?, a.out.as_deref())
}

fn cluster(a: &ClusterArgs) -> Result<()> {
    let (labels, d) = match (&a.distances, &a.model) {
        (Some(p), _) => read_distance_csv(p)?,
        (None, Some(m)) => {
            let g = class_gaussians(&ModelFile::load(m)?)?;
            let d = g.distance_matrix(DistanceKind::Bhattacharyya)?;
            (g.labels, d)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let tree = linkage_complete(&labels, &d)?;
    let mut out = output(a.newick.as_deref())?;
    writeln!(out, "{}", tree.to_newick())?;
    out.flush()?;
    if let (Some(k), Some(path)) = (a.k, &a.assignments) {
        let ids = tree.cut(k)?;
        let mut w = csv_writer(Some(path))?;
        w.write_record(["label", "cluster"])?;
        for (l, c) in labels.iter().zip(ids) {
            w.write_record([l.clone(), c.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn default_bounds(g: &GaussianClassModel<f64>, axis: usize) -> (f64, f64) {
    let means = g.means();
    let lo = means.iter().map(|m| m[axis]).fold(f64::INFINITY, f64::min);
    let hi = means.iter().map(|m| m[axis]).fold(f64::NEG_INFINITY, f64::max);
    let sd = g.covariances().iter().map(|c| c[(axis, axis)].sqrt()).fold(0.0, f64::max);
    let pad = (3.0 * sd).max(0.5 * (hi - lo)).max(1e-6);
    (lo - pad, hi + pad)
}

fn voronoi(a: &VoronoiArgs) -> Result<()> {
    let g = class_gaussians(&ModelFile::load(&a.model)?)?;
    let bound = |k: usize| -> Result<(f64, f64)> {
        match &a.bounds {
            Some(b) if b.len() == 2 * a.axes.len() => Ok((b[2 * k], b[2 * k + 1])),
            Some(_) => Err(Error::InvalidArgument("--bounds needs min,max for every axis".into())),
            None => {
                let axis = a.axes[k];
                if axis >= g.dim() {
                    return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
                }
                Ok(default_bounds(&g, axis))
            }
        }
    };
    let mut w = csv_writer(a.out.as_deref())?;
    match a.axes.as_slice() {
        [axis] => {
            let line = voronoi_line(&g, *axis, bound(0)?, a.resolution)?;
            w.write_record(["x", "label"])?;
            for (x, y) in line {
                w.write_record([x.to_string(), g.labels[y].clone()])?;
            }
        }
        [i, j] => {
            let grid = voronoi_grid(&g, (*i, *j), [bound(0)?, bound(1)?], a.resolution)?;
            w.write_record(["x", "y", "label"])?;
            for row in 0..grid.resolution {
                for col in 0..grid.resolution {
                    let (x, y) = grid.cell_center(col, row);
                    w.write_record([x.to_string(), y.to_string(), g.labels[grid.label_at(col, row)].clone()])?;
                }
            }
        }
        _ => return Err(Error::InvalidArgument("--axes takes one or two axes".into())),
    }
    w.flush()?;
    Ok(())
}

fn fit_sentiment(a: &FitSentimentArgs, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.input, CorpusKind::Rating)?;
    let meta = Metadata::new("fit-sentiment", Some(seed));
    match a.method {
        SentimentMethod::Manifold => {
            let path = a.model.as_ref().expect("clap requires --model");
            let file = ModelFile::load(path)?;
            let manifold = file.manifold_model()?;
            let featurizer = file.featurizer().clone();
            let ds = featurizer.rating_dataset::<f64>(&corpus)?;
            let m = SentimentModel::fit(&ds, &manifold, &a.cov.spec())?;
            ModelFile::sentiment(&featurizer, &m, meta).save(&a.out)
        }
        SentimentMethod::Linreg => {
            let featurizer = a.features.fit(&corpus)?;
            let ds = featurizer.rating_dataset::<f64>(&corpus)?;
            let m = LinRegModel::fit(&ds, featurizer.dim(), a.reg, &featurizer.fingerprint())?;
            ModelFile::linreg(&featurizer, &m, meta).save(&a.out)
        }
    }
}

type RatingPredictor = Box<dyn Fn(&SparseVector<f64>) -> Result<i64>>;

#[derive(Serialize)]
struct RatingPrediction<'a> {
    id: &'a str,
    rating: i64,
}

fn predict_rating(a: &PredictArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let inputs = read_inputs(&a.input, file.featurizer())?;
    let predict: RatingPredictor = match &file.payload {
        Payload::Sentiment { .. } => {
            let m = file.sentiment_model()?;
            Box::new(move |x| m.predict_rating(x))
        }
        Payload::Linreg { .. } => {
            let m = file.linreg_model()?;
            Box::new(move |x| m.predict_level(x))
        }
        other => {
            return Err(Error::ModelFile(format!(
                "predict-rating needs a sentiment or linreg model, found {}",
                other.model_type()
            )))
        }
    };
    let mut out = output(a.out.as_deref())?;
    for (id, x) in &inputs {
        serde_json::to_writer(&mut out, &RatingPrediction { id, rating: predict(x)? })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn export_centroids(a: &ExportCentroidsArgs) -> Result<()> {
    let m = ModelFile::load(&a.model)?.manifold_model()?;
    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=m.dim()).map(|k| format!("z{k}")));
    w.write_record(&header)?;
    for (i, l) in m.labels.iter().enumerate() {
        let mut row = vec![l.clone()];
        row.extend((0..m.dim()).map(|k| m.mu[(i, k)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn export_curve(a: &ExportCurveArgs) -> Result<()> {
    let m = ModelFile::load(&a.model)?.sentiment_model()?;
    let [i, j] = a.axes.as_slice() else {
        return Err(Error::InvalidArgument("--axes takes exactly two axes".into()));
    };
    let curve = m.rating_curve((*i, *j))?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["rating".to_string(), format!("z{}", i + 1), format!("z{}", j + 1)])?;
    for (r, x, y) in curve {
        w.write_record([r.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn top_words(a: &TopWordsArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let m = file.manifold_model()?;
    let vocab: &Vocabulary = &file.featurizer().vocabulary;
    let (neg, pos) = m.axis_top_words(vocab, a.axis, a.k)?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["side", "rank", "term", "coefficient"])?;
    for (side, list) in [("negative", neg), ("positive", pos)] {
        for (rank, (term, c)) in list.into_iter().enumerate() {
            w.write_record([side.to_string(), (rank + 1).to_string(), term, c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let emotions = load_corpus(&a.input, CorpusKind::Emotion)?;
    if let Some(path) = &a.ratings {
        let ratings = load_corpus(path, CorpusKind::Rating)?;
        let config = RatingCurveConfig {
            seed,
            repeats: a.trials,
            train_sizes: a.train_sizes.clone(),
            test_size: a.test_size,
            min_count: a.features.min_count,
            normalize: a.features.normalize,
            tokenizer: a.features.tokenizer(),
            manifold: a.manifold.config(),
            covariance: a.cov.spec(),
            baseline_ridge: a.reg,
        };
        let curve = rating_learning_curve(&emotions, &ratings, &config)?;
        let mut stdout = io::stdout().lock();
        writeln!(stdout, "{:>10} {:>12} {:>12}", "train", "manifold-L1", "ridge-L1")?;
        for p in &curve {
            writeln!(stdout, "{:>10} {:>12.4} {:>12.4}", p.train_size, p.mean_manifold_l1, p.mean_baseline_l1)?;
        }
        if let Some(out) = &a.out {
            let mut s = serde_json::to_string_pretty(&curve)?;
            s.push('\n');
            std::fs::write(out, s)?;
        }
        return Ok(());
    }
    let tuning = if a.no_tuning { None } else { Some(Tuning::default()) };
    let config = ExperimentConfig {
        seed,
        trials: a.trials,
        train_fraction: a.train_fraction,
        alpha: a.alpha,
        methods: a.methods.clone(),
        min_count: a.features.min_count,
        normalize: a.features.normalize,
        tokenizer: a.features.tokenizer(),
        manifold: a.manifold.config(),
        lambda: a.cov.lambda,
        reg: a.reg,
        tuning,
        task: a.task.spec()?,
        reuse_manifold: a.task.reuse_manifold,
        optimizer: OptimizerOptions::default(),
    };
    let report = run_experiment(&emotions, &config)?;
    print!("{}", report.table());
    if let Some(out) = &a.out {
        let mut s = serde_json::to_string_pretty(&report)?;
        s.push('\n');
        std::fs::write(out, s)?;
    }
    Ok(())
}
