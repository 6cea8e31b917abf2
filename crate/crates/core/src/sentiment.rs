//! Rating prediction from manifold coordinates: one Gaussian per rating
//! level on the frozen emotion manifold, combined by Bayes rule.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::classify::{argmax, project_all};
use crate::error::{Error, Result};
use crate::features::{RatingDataset, SparseVector};
use crate::gaussian::{CovarianceSpec, GaussianClassModel};
use crate::manifold::ManifoldModel;
use crate::scalar::Real;

/// Minimum documents per rating level.
pub const MIN_LEVEL_COUNT: usize = 2;

#[derive(Debug, Clone)]
pub struct SentimentModel<T: Real> {
    /// Ascending distinct ratings; `gaussians.labels[k]` is `levels[k]` as text.
    pub levels: Vec<i64>,
    pub gaussians: GaussianClassModel<T>,
    pub manifold: ManifoldModel<T>,
    /// Set when every level mean coincides, so predictions follow priors only.
    pub degenerate: bool,
}

impl<T: Real> SentimentModel<T> {
    /// Projects the rated documents with the (unchanged) emotion manifold and
    /// fits per-level Gaussians on the projections.
    pub fn fit(ds: &RatingDataset<T>, manifold: &ManifoldModel<T>, spec: &CovarianceSpec) -> Result<Self> {
        if ds.x.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut levels = ds.ratings.clone();
        levels.sort_unstable();
        levels.dedup();
        let y: Vec<usize> = ds
            .ratings
            .iter()
            .map(|r| levels.binary_search(r).expect("level collected above"))
            .collect();
        let labels: Vec<String> = levels.iter().map(|r| r.to_string()).collect();
        let mut counts = vec![0usize; levels.len()];
        for &k in &y {
            counts[k] += 1;
        }
        if let Some(k) = counts.iter().position(|&n| n < MIN_LEVEL_COUNT) {
            return Err(Error::InsufficientClass {
                label: labels[k].clone(),
                count: counts[k],
                required: MIN_LEVEL_COUNT,
            });
        }
        let points = project_all(manifold, &ds.x)?;
        let gaussians = GaussianClassModel::fit(&points, &y, &labels, spec)?;
        let means = gaussians.means();
        let scale = means.iter().fold(T::one(), |acc, m| acc.max(m.amax()));
        let tol = scale * T::default_epsilon() * T::lit(1e3);
        let degenerate = means.iter().all(|m| (m - &means[0]).amax() <= tol);
        if degenerate {
            log::warn!("all rating-level means coincide; predictions reduce to the level priors");
        }
        Ok(SentimentModel {
            levels,
            gaussians,
            manifold: manifold.clone(),
            degenerate,
        })
    }

    pub fn scores_at(&self, z: &DVector<T>) -> Result<Vec<T>> {
        (0..self.levels.len())
            .map(|k| Ok(self.gaussians.priors[k].ln() + self.gaussians.log_density(k, z)?))
            .collect()
    }

    /// Rating maximizing `log prior(r) + log p(z* | r)` at the document's
    /// projection; ties go to the lower rating.
    pub fn predict_rating(&self, x: &SparseVector<T>) -> Result<i64> {
        let z = self.manifold.project(x)?;
        Ok(self.levels[argmax(&self.scores_at(&z)?)])
    }

    pub fn predict_batch(&self, xs: &[SparseVector<T>]) -> Result<Vec<i64>> {
        xs.par_iter().map(|x| self.predict_rating(x)).collect()
    }

    /// Level means restricted to two manifold axes, ascending by rating.
    pub fn rating_curve(&self, axes: (usize, usize)) -> Result<Vec<(i64, T, T)>> {
        let l = self.gaussians.dim();
        if l < 2 {
            return Err(Error::InvalidArgument("rating curve needs a manifold of dimension >= 2".into()));
        }
        if axes.0 >= l || axes.1 >= l {
            return Err(Error::InvalidArgument(format!("axes {axes:?} out of range for dimension {l}")));
        }
        Ok(self
            .levels
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let m = self.gaussians.gaussian(k).mean();
                (r, m[axes.0], m[axes.1])
            })
            .collect())
    }
}
