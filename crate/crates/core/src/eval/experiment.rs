//! Repeated random-split experiments comparing the manifold classifiers with
//! the bag-of-words baselines.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{paired_t_test, TTest};
use super::{l1_error, metrics, ConfusionMatrix};
use crate::baselines::{LinRegModel, LogRegOvaModel, OptimizerOptions};
use crate::classify::{make_binary_task, BinaryTaskSpec, EmotionClassifier};
use crate::corpus::{split, split_by_count, Corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{Dataset, Featurizer, Normalize, Tokenizer};
use crate::gaussian::{CovarianceSpec, Pooling, Structure};
use crate::manifold::{ManifoldConfig, ManifoldModel};
use crate::sentiment::SentimentModel;

const TUNING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LdaDiag,
    LdaFull,
    QdaDiag,
    QdaFull,
    Logreg,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::LdaDiag,
        Method::LdaFull,
        Method::QdaDiag,
        Method::QdaFull,
        Method::Logreg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LdaDiag => "lda-diag",
            Method::LdaFull => "lda-full",
            Method::QdaDiag => "qda-diag",
            Method::QdaFull => "qda-full",
            Method::Logreg => "logreg",
        }
    }

    /// Covariance model for the manifold methods; `None` for the baseline.
    pub fn covariance(self, lambda: f64) -> Option<CovarianceSpec> {
        let (structure, pooling) = match self {
            Method::LdaDiag => (Structure::Diagonal, Pooling::Pooled),
            Method::LdaFull => (Structure::Full, Pooling::Pooled),
            Method::QdaDiag => (Structure::Diagonal, Pooling::PerClass),
            Method::QdaFull => (Structure::Full, Pooling::PerClass),
            Method::Logreg => return None,
        };
        Some(CovarianceSpec::new(structure, pooling).with_lambda(lambda))
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Hyperparameter grids searched on a validation split carved from each
/// trial's training half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tuning {
    pub validation_fraction: f64,
    pub lambda_grid: Vec<f64>,
    pub ridge_grid: Vec<f64>,
    pub reg_grid: Vec<f64>,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            validation_fraction: 0.3,
            lambda_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            ridge_grid: vec![1e-3],
            reg_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub train_fraction: f64,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub min_count: u64,
    pub normalize: Normalize,
    pub tokenizer: Tokenizer,
    pub manifold: ManifoldConfig,
    /// Shrinkage weight when not tuned.
    pub lambda: f64,
    /// Logistic regularization when not tuned.
    pub reg: f64,
    pub tuning: Option<Tuning>,
    pub task: Option<BinaryTaskSpec>,
    /// For binary tasks, fit the manifold on all emotion labels of the
    /// training half instead of on the two task classes.
    pub reuse_manifold: bool,
    pub optimizer: OptimizerOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            trials: 10,
            train_fraction: 0.5,
            alpha: 0.05,
            methods: Method::ALL.to_vec(),
            min_count: 1,
            normalize: Normalize::L1,
            tokenizer: Tokenizer::default(),
            manifold: ManifoldConfig::default(),
            lambda: 0.1,
            reg: 1e-3,
            tuning: Some(Tuning::default()),
            task: None,
            reuse_manifold: false,
            optimizer: OptimizerOptions::default(),
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InvalidArgument("at least two trials are needed for significance tests".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if let Some(t) = &self.tuning {
            if t.lambda_grid.is_empty() || t.ridge_grid.is_empty() || t.reg_grid.is_empty() {
                return Err(Error::InvalidArgument("tuning grids must be non-empty".into()));
            }
        }
        Ok(())
    }

    /// Per-trial seeds, all derived from `seed`.
    pub fn trial_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.trials).map(|_| rng.next_u64()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Selected shrinkage (manifold methods).
    pub lambda: Option<f64>,
    /// Selected manifold ridge (manifold methods).
    pub ridge: Option<f64>,
    /// Selected logistic regularization (baseline).
    pub reg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub results: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_macro_f1: f64,
    pub sd_macro_f1: f64,
    /// Paired tests against the logistic baseline (absent for the baseline
    /// itself or when it was not run).
    pub vs_logreg_accuracy: Option<TTest>,
    pub vs_logreg_macro_f1: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub task: String,
    pub manifold: String,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<MethodSummary>,
}

impl TrialReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Plain-text table; `*` marks a significant difference from logreg.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "task: {} ({} trials, manifold {})",
            self.task,
            self.trials.len(),
            self.manifold
        );
        let _ = writeln!(out, "{:<10} {:>16} {:>16} {:>9} {:>9}", "method", "macro-F1", "accuracy", "p(F1)", "p(acc)");
        for s in &self.summary {
            let mark = |t: &Option<TTest>| match t {
                Some(t) if t.significant => "*",
                _ => " ",
            };
            let p = |t: &Option<TTest>| t.map_or("-".to_string(), |t| format!("{:.4}", t.p));
            let _ = writeln!(
                out,
                "{:<10} {:>7.4}±{:.4}{} {:>7.4}±{:.4}{} {:>9} {:>9}",
                s.method.name(),
                s.mean_macro_f1,
                s.sd_macro_f1,
                mark(&s.vs_logreg_macro_f1),
                s.mean_accuracy,
                s.sd_accuracy,
                mark(&s.vs_logreg_accuracy),
                p(&s.vs_logreg_macro_f1),
                p(&s.vs_logreg_accuracy),
            );
        }
        out
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

struct Scored {
    accuracy: f64,
    macro_f1: f64,
}

fn score(classes: &[String], preds: &[usize], truths: &[usize]) -> Result<Scored> {
    let m = metrics(&ConfusionMatrix::from_indices(classes, preds, truths)?)?;
    Ok(Scored {
        accuracy: m.accuracy,
        macro_f1: m.macro_f1_truth,
    })
}

/// Training data for one fit: the manifold's dataset (possibly the full
/// emotion inventory) and the classifier's dataset.
struct FitData<'a> {
    manifold: &'a Dataset<f64>,
    task: &'a Dataset<f64>,
    reuse: bool,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    featurizer: &'a Featurizer,
}

impl Context<'_> {
    fn manifold(&self, data: &FitData, ridge: f64) -> Result<ManifoldModel<f64>> {
        let cfg = ManifoldConfig {
            ridge,
            ..self.config.manifold
        };
        ManifoldModel::fit(data.manifold, self.featurizer.dim(), &self.featurizer.fingerprint(), &cfg)
    }

    fn classifier(&self, m: &ManifoldModel<f64>, data: &FitData, spec: &CovarianceSpec) -> Result<EmotionClassifier<f64>> {
        if data.reuse {
            EmotionClassifier::fit_on_reused_manifold(m.clone(), data.task, spec)
        } else {
            EmotionClassifier::fit_gaussians(m.clone(), data.task, spec)
        }
    }

    fn logreg(&self, ds: &Dataset<f64>, reg: f64) -> Result<LogRegOvaModel<f64>> {
        LogRegOvaModel::fit(ds, self.featurizer.dim(), reg, &self.featurizer.fingerprint(), &self.config.optimizer)
    }
}

/// Datasets for a corpus half: the task view and, when reusing, the
/// full-inventory view.
fn datasets(
    featurizer: &Featurizer,
    half: &Corpus,
    task: Option<&BinaryTaskSpec>,
    task_classes: &[String],
    emotion_classes: Option<&[String]>,
) -> Result<(Dataset<f64>, Option<Dataset<f64>>)> {
    let full = match emotion_classes {
        Some(c) => Some(featurizer.dataset_with_classes(half, c)?),
        None => None,
    };
    let task_ds = match task {
        Some(spec) => featurizer.dataset_with_classes(&make_binary_task(half, spec)?, task_classes)?,
        None => featurizer.dataset_with_classes(half, task_classes)?,
    };
    Ok((task_ds, full))
}

fn run_trial(corpus: &Corpus, config: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialResult> {
    let (train, test) = split(corpus, SplitSpec::new(config.train_fraction, seed))?;
    let task = config.task.as_ref();
    let reuse = task.is_some() && config.reuse_manifold;
    let task_train = match task {
        Some(spec) => make_binary_task(&train, spec)?,
        None => train.clone(),
    };
    let classes = task_train.labels();
    // vocabulary comes from whatever corpus trains the manifold
    let vocab_source = if reuse { &train } else { &task_train };
    let featurizer = Featurizer::fit(vocab_source, config.tokenizer.clone(), config.min_count, config.normalize)?;
    let emotion_classes = if reuse { Some(train.labels()) } else { None };
    let ctx = Context {
        config,
        featurizer: &featurizer,
    };

    let (train_ds, train_full) = datasets(&featurizer, &train, task, &classes, emotion_classes.as_deref())?;
    let (test_ds, _) = datasets(&featurizer, &test, task, &classes, None)?;
    let full_fit = FitData {
        manifold: train_full.as_ref().unwrap_or(&train_ds),
        task: &train_ds,
        reuse,
    };

    let manifold_methods: Vec<Method> = config.methods.iter().copied().filter(|m| *m != Method::Logreg).collect();
    let mut chosen: Vec<(Method, f64, f64)> = manifold_methods
        .iter()
        .map(|&m| (m, config.manifold.ridge, config.lambda))
        .collect();
    let mut chosen_reg = config.reg;

    if let Some(tuning) = &config.tuning {
        let (sub, val) = split(&train, SplitSpec::new(1.0 - tuning.validation_fraction, seed ^ TUNING_SALT))?;
        let (sub_ds, sub_full) = datasets(&featurizer, &sub, task, &classes, emotion_classes.as_deref())?;
        let (val_ds, _) = datasets(&featurizer, &val, task, &classes, None)?;
        let sub_fit = FitData {
            manifold: sub_full.as_ref().unwrap_or(&sub_ds),
            task: &sub_ds,
            reuse,
        };
        if !manifold_methods.is_empty() {
            let mut best: Vec<Option<(f64, f64, f64)>> = vec![None; manifold_methods.len()];
            for &ridge in &tuning.ridge_grid {
                let m = ctx.manifold(&sub_fit, ridge)?;
                for &lambda in &tuning.lambda_grid {
                    for (k, method) in manifold_methods.iter().enumerate() {
                        let spec = method.covariance(lambda).expect("manifold method");
                        let clf = match ctx.classifier(&m, &sub_fit, &spec) {
                            Ok(c) => c,
                            // a grid point may be infeasible (e.g. singular covariance at lambda 0)
                            Err(Error::Singular(_)) => continue,
                            Err(e) => return Err(e),
                        };
                        let f1 = score(&classes, &clf.predict_batch(&val_ds.x)?, &val_ds.y)?.macro_f1;
                        if best[k].is_none_or(|(b, _, _)| f1 > b) {
                            best[k] = Some((f1, ridge, lambda));
                        }
                    }
                }
            }
            for (k, slot) in chosen.iter_mut().enumerate() {
                if let Some((_, ridge, lambda)) = best[k] {
                    *slot = (slot.0, ridge, lambda);
                }
            }
        }
        if config.methods.contains(&Method::Logreg) {
            let mut best: Option<(f64, f64)> = None;
            for &reg in &tuning.reg_grid {
                let model = ctx.logreg(&sub_ds, reg)?;
                let f1 = score(&classes, &model.predict_batch(&val_ds.x)?, &val_ds.y)?.macro_f1;
                if best.is_none_or(|(b, _)| f1 > b) {
                    best = Some((f1, reg));
                }
            }
            chosen_reg = best.expect("non-empty grid").1;
        }
    }

    let mut results = Vec::with_capacity(config.methods.len());
    let mut manifolds: Vec<(f64, ManifoldModel<f64>)> = Vec::new();
    for &method in &config.methods {
        let r = if method == Method::Logreg {
            let model = ctx.logreg(&train_ds, chosen_reg)?;
            let s = score(&classes, &model.predict_batch(&test_ds.x)?, &test_ds.y)?;
            MethodMetrics {
                method,
                accuracy: s.accuracy,
                macro_f1: s.macro_f1,
                lambda: None,
                ridge: None,
                reg: Some(chosen_reg),
            }
        } else {
            let &(_, ridge, lambda) = chosen.iter().find(|c| c.0 == method).expect("chosen above");
            let m = match manifolds.iter().find(|(r, _)| *r == ridge) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = ctx.manifold(&full_fit, ridge)?;
                    manifolds.push((ridge, m.clone()));
                    m
                }
            };
            let spec = method.covariance(lambda).expect("manifold method");
            let clf = ctx.classifier(&m, &full_fit, &spec)?;
            let s = score(&classes, &clf.predict_batch(&test_ds.x)?, &test_ds.y)?;
            MethodMetrics {
                method,
                accuracy: s.accuracy,
                macro_f1: s.macro_f1,
                lambda: Some(lambda),
                ridge: Some(ridge),
                reg: None,
            }
        };
        results.push(r);
    }
    Ok(TrialResult {
        trial,
        seed,
        train_size: train_ds.len(),
        test_size: test_ds.len(),
        results,
    })
}

/// Runs `config.trials` independent splits and summarizes each method with
/// paired t-tests against the logistic baseline.
pub fn run_experiment(corpus: &Corpus, config: &ExperimentConfig) -> Result<TrialReport> {
    config.validate()?;
    if let Some(task) = &config.task {
        // surface label errors before any trial runs
        make_binary_task(corpus, task)?;
    }
    let seeds = config.trial_seeds();
    let trials = seeds
        .par_iter()
        .enumerate()
        .map(|(t, &seed)| {
            run_trial(corpus, config, t, seed).map_err(|e| Error::Trial {
                trial: t,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |m: Method, f: fn(&MethodMetrics) -> f64| -> Vec<f64> {
        trials
            .iter()
            .map(|t| f(t.results.iter().find(|r| r.method == m).expect("every trial runs every method")))
            .collect()
    };
    let has_baseline = config.methods.contains(&Method::Logreg);
    let mut summary = Vec::new();
    for &m in &config.methods {
        let acc = column(m, |r| r.accuracy);
        let f1 = column(m, |r| r.macro_f1);
        let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
        let (mean_macro_f1, sd_macro_f1) = mean_sd(&f1);
        let (vs_acc, vs_f1) = if has_baseline && m != Method::Logreg {
            (
                Some(paired_t_test(&acc, &column(Method::Logreg, |r| r.accuracy), config.alpha)?),
                Some(paired_t_test(&f1, &column(Method::Logreg, |r| r.macro_f1), config.alpha)?),
            )
        } else {
            (None, None)
        };
        summary.push(MethodSummary {
            method: m,
            mean_accuracy,
            sd_accuracy,
            mean_macro_f1,
            sd_macro_f1,
            vs_logreg_accuracy: vs_acc,
            vs_logreg_macro_f1: vs_f1,
        });
    }
    let task = config.task.as_ref().map_or_else(|| "multiclass".to_string(), |t| t.name.clone());
    let manifold = if config.task.is_some() && config.reuse_manifold {
        "reused"
    } else {
        "refit"
    };
    Ok(TrialReport {
        task,
        manifold: manifold.to_string(),
        config: config.clone(),
        trials,
        summary,
    })
}

/// Rating prediction error as a function of training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingCurveConfig {
    pub seed: u64,
    /// Number of random train/test draws per size.
    pub repeats: usize,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub min_count: u64,
    pub normalize: Normalize,
    pub tokenizer: Tokenizer,
    pub manifold: ManifoldConfig,
    pub covariance: CovarianceSpec,
    /// Ridge strength of the bag-of-words baseline.
    pub baseline_ridge: f64,
}

impl Default for RatingCurveConfig {
    fn default() -> Self {
        RatingCurveConfig {
            seed: 0,
            repeats: 10,
            train_sizes: vec![50, 100, 500, 2000],
            test_size: 1000,
            min_count: 1,
            normalize: Normalize::L1,
            tokenizer: Tokenizer::default(),
            manifold: ManifoldConfig::default(),
            covariance: CovarianceSpec::new(Structure::Full, Pooling::Pooled),
            baseline_ridge: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_size: usize,
    pub manifold_l1: Vec<f64>,
    pub baseline_l1: Vec<f64>,
    pub mean_manifold_l1: f64,
    pub mean_baseline_l1: f64,
}

/// Fits the emotion manifold once on `emotions`, then for every repeat and
/// training size compares manifold rating prediction with ridge regression
/// on the raw bag of words (vocabulary from the rating training sample).
pub fn rating_learning_curve(emotions: &Corpus, ratings: &Corpus, config: &RatingCurveConfig) -> Result<Vec<CurvePoint>> {
    if config.repeats == 0 || config.train_sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one repeat and one train size".into()));
    }
    if config.test_size == 0 || config.test_size >= ratings.len() {
        return Err(Error::InvalidArgument(format!(
            "test size {} must be in [1, {})",
            config.test_size,
            ratings.len()
        )));
    }
    let pool_size = ratings.len() - config.test_size;
    if let Some(&n) = config.train_sizes.iter().find(|&&n| n == 0 || n > pool_size) {
        return Err(Error::InvalidArgument(format!("train size {n} outside [1, {pool_size}]")));
    }
    let featurizer = Featurizer::fit(emotions, config.tokenizer.clone(), config.min_count, config.normalize)?;
    let ds = featurizer.dataset::<f64>(emotions)?;
    let manifold = ManifoldModel::fit(&ds, featurizer.dim(), &featurizer.fingerprint(), &config.manifold)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<(u64, u64)> = (0..config.repeats).map(|_| (rng.next_u64(), rng.next_u64())).collect();
    let runs = seeds
        .par_iter()
        .map(|&(test_seed, train_seed)| {
            let (pool, test) = split_by_count(ratings, pool_size, test_seed)?;
            let truths: Vec<i64> = test.docs().iter().map(|d| d.rating.expect("rating corpus")).collect();
            let test_x = featurizer.rating_dataset::<f64>(&test)?.x;
            config
                .train_sizes
                .iter()
                .map(|&n| {
                    let train = if n == pool.len() {
                        pool.clone()
                    } else {
                        split_by_count(&pool, n, train_seed)?.0
                    };
                    let sm = SentimentModel::fit(&featurizer.rating_dataset(&train)?, &manifold, &config.covariance)?;
                    let manifold_l1 = l1_error(&sm.predict_batch(&test_x)?, &truths)?;
                    let bow = Featurizer::fit(&train, config.tokenizer.clone(), config.min_count, config.normalize)?;
                    let lr = LinRegModel::fit(&bow.rating_dataset(&train)?, bow.dim(), config.baseline_ridge, &bow.fingerprint())?;
                    let baseline_l1 = l1_error(&lr.predict_batch(&bow.rating_dataset::<f64>(&test)?.x)?, &truths)?;
                    Ok((manifold_l1, baseline_l1))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(config
        .train_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let manifold_l1: Vec<f64> = runs.iter().map(|r| r[k].0).collect();
            let baseline_l1: Vec<f64> = runs.iter().map(|r| r[k].1).collect();
            CurvePoint {
                train_size: n,
                mean_manifold_l1: mean_sd(&manifold_l1).0,
                mean_baseline_l1: mean_sd(&baseline_l1).0,
                manifold_l1,
                baseline_l1,
            }
        })
        .collect())
}
