//! Emotion prediction: project onto the manifold, then apply Bayes rule with
//! the class-conditional Gaussians.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusKind, Document};
use crate::error::{Error, Result};
use crate::features::{Dataset, SparseVector};
use crate::gaussian::{CovarianceSpec, GaussianClassModel};
use crate::manifold::{ManifoldConfig, ManifoldModel};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct EmotionClassifier<T: Real> {
    pub manifold: ManifoldModel<T>,
    pub gaussians: GaussianClassModel<T>,
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Normalizes log scores into probabilities via log-sum-exp.
pub fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let Some(&first) = scores.first() else {
        return Vec::new();
    };
    let m = scores.iter().copied().fold(first, T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

/// Projects every feature vector onto the manifold.
pub fn project_all<T: Real>(manifold: &ManifoldModel<T>, x: &[SparseVector<T>]) -> Result<Vec<DVector<T>>> {
    x.par_iter().map(|v| manifold.project(v)).collect()
}

impl<T: Real> EmotionClassifier<T> {
    pub fn new(manifold: ManifoldModel<T>, gaussians: GaussianClassModel<T>) -> Result<Self> {
        if manifold.labels != gaussians.labels {
            return Err(Error::InvalidArgument(
                "manifold and gaussian label sets differ".into(),
            ));
        }
        if manifold.dim() != gaussians.dim() {
            return Err(Error::DimensionMismatch {
                expected: manifold.dim(),
                actual: gaussians.dim(),
            });
        }
        Ok(EmotionClassifier { manifold, gaussians })
    }

    /// Fits the Gaussians on the training documents' projections.
    pub fn fit_gaussians(manifold: ManifoldModel<T>, ds: &Dataset<T>, spec: &CovarianceSpec) -> Result<Self> {
        if ds.classes != manifold.labels {
            return Err(Error::InvalidArgument(
                "dataset classes differ from the manifold's labels".into(),
            ));
        }
        let points = project_all(&manifold, &ds.x)?;
        let gaussians = GaussianClassModel::fit(&points, &ds.y, &ds.classes, spec)?;
        Self::new(manifold, gaussians)
    }

    /// Gaussians for a different label set (e.g. a binary task) on top of a
    /// manifold fit to the full emotion inventory.
    pub fn fit_on_reused_manifold(manifold: ManifoldModel<T>, ds: &Dataset<T>, spec: &CovarianceSpec) -> Result<Self> {
        let points = project_all(&manifold, &ds.x)?;
        let gaussians = GaussianClassModel::fit(&points, &ds.y, &ds.classes, spec)?;
        Ok(EmotionClassifier { manifold, gaussians })
    }

    /// True when the Gaussians' labels differ from the manifold's.
    pub fn reuses_manifold(&self) -> bool {
        self.manifold.labels != self.gaussians.labels
    }

    /// Manifold followed by Gaussians, both on `ds`.
    pub fn fit(
        ds: &Dataset<T>,
        dim: usize,
        vocab_fingerprint: &str,
        manifold: &ManifoldConfig,
        spec: &CovarianceSpec,
    ) -> Result<Self> {
        let m = ManifoldModel::fit(ds, dim, vocab_fingerprint, manifold)?;
        Self::fit_gaussians(m, ds, spec)
    }

    pub fn labels(&self) -> &[String] {
        &self.gaussians.labels
    }

    /// `log p(y) + log p(z | y)` for each class at a manifold point.
    pub fn scores_at(&self, z: &DVector<T>) -> Result<Vec<T>> {
        (0..self.gaussians.n_classes())
            .map(|y| Ok(self.gaussians.priors[y].ln() + self.gaussians.log_density(y, z)?))
            .collect()
    }

    pub fn predict_scores(&self, x: &SparseVector<T>) -> Result<Vec<T>> {
        self.scores_at(&self.manifold.project(x)?)
    }

    /// Posterior probabilities over the labels.
    pub fn predict_proba(&self, x: &SparseVector<T>) -> Result<Vec<T>> {
        Ok(softmax(&self.predict_scores(x)?))
    }

    pub fn predict_index(&self, x: &SparseVector<T>) -> Result<usize> {
        Ok(argmax(&self.predict_scores(x)?))
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Result<&str> {
        Ok(&self.labels()[self.predict_index(x)?])
    }

    pub fn predict_batch(&self, xs: &[SparseVector<T>]) -> Result<Vec<usize>> {
        xs.par_iter().map(|x| self.predict_index(x)).collect()
    }
}

/// Two disjoint label groups relabeled as "pos" and "neg".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryTaskSpec {
    pub name: String,
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl BinaryTaskSpec {
    pub fn new<I, J, S>(name: &str, positive: I, negative: J) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let spec = BinaryTaskSpec {
            name: name.to_string(),
            positive: positive.into_iter().map(Into::into).collect(),
            negative: negative.into_iter().map(Into::into).collect(),
        };
        if spec.positive.is_empty() || spec.negative.is_empty() {
            return Err(Error::InvalidArgument(format!("task {name}: both sides must be non-empty")));
        }
        if let Some(l) = spec.positive.intersection(&spec.negative).next() {
            return Err(Error::InvalidArgument(format!("task {name}: label {l:?} is on both sides")));
        }
        Ok(spec)
    }

    /// The engagement-level and sentiment groupings of common mood tags.
    pub fn sentiment() -> Self {
        Self::new("sentiment", ["cheerful", "happy", "amused"], ["sad", "annoyed", "exhausted"])
            .expect("static task is valid")
    }

    pub fn engagement() -> Self {
        Self::new("engagement", ["tired", "bored", "sleepy"], ["determined", "thoughtful"])
            .expect("static task is valid")
    }
}

/// Keeps documents whose label is in either group, relabeled "pos"/"neg".
pub fn make_binary_task(corpus: &Corpus, spec: &BinaryTaskSpec) -> Result<Corpus> {
    if corpus.kind() != CorpusKind::Emotion {
        return Err(Error::InvalidArgument("binary tasks need an emotion corpus".into()));
    }
    let present: BTreeSet<String> = corpus.labels().into_iter().collect();
    if let Some(missing) = spec.positive.iter().chain(&spec.negative).find(|l| !present.contains(*l)) {
        return Err(Error::UnknownLabel(missing.clone()));
    }
    let docs: Vec<Document> = corpus
        .docs()
        .iter()
        .filter_map(|d| {
            let label = d.label.as_deref()?;
            let side = if spec.positive.contains(label) {
                "pos"
            } else if spec.negative.contains(label) {
                "neg"
            } else {
                return None;
            };
            Some(Document::emotion(d.id.clone(), d.text.clone(), side))
        })
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(CorpusKind::Emotion, docs)
}
