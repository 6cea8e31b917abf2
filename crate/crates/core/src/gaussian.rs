//! Class-conditional Gaussians on the manifold with shrinkage covariance
//! models, plus closed-form Bhattacharyya and Hellinger distances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, mahalanobis_sq};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// One covariance shared by all classes (LDA).
    Pooled,
    /// One covariance per class (QDA).
    PerClass,
}

/// Covariance model: `(1 - lambda) S + lambda * t * I + epsilon * I` where
/// `t = trace(S)`, or `trace(S) / l` with `normalize_trace`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub structure: Structure,
    pub pooling: Pooling,
    pub lambda: f64,
    /// Diagonal ridge; `None` selects `1e-6 * trace(S) / l`.
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub normalize_trace: bool,
}

impl CovarianceSpec {
    pub fn new(structure: Structure, pooling: Pooling) -> Self {
        CovarianceSpec {
            structure,
            pooling,
            lambda: 0.1,
            epsilon: None,
            normalize_trace: false,
        }
    }

    pub fn lda_full() -> Self {
        Self::new(Structure::Full, Pooling::Pooled)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("epsilon {e} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn min_count(&self) -> usize {
        match self.pooling {
            Pooling::Pooled => 1,
            Pooling::PerClass => 2,
        }
    }
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        Self::lda_full()
    }
}

/// A non-degenerate multivariate normal with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct Gaussian<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    log_det: T,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian mean".into()));
        }
        let chol = cholesky(&cov, "covariance")?;
        let log_det = log_det(&chol);
        Ok(Gaussian { mean, cov, chol, log_det })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    pub fn log_pdf(&self, z: &DVector<T>) -> Result<T> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query point".into()));
        }
        let q = mahalanobis_sq(&self.chol, &(z - &self.mean));
        let two_pi = T::two_pi();
        Ok(-T::lit(0.5) * (T::from_count(self.dim()) * two_pi.ln() + self.log_det + q))
    }
}

/// Closed-form `-log int sqrt(f g)` for two Gaussians.
pub fn bhattacharyya<T: Real>(g1: &Gaussian<T>, g2: &Gaussian<T>) -> Result<T> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            actual: g2.dim(),
        });
    }
    let half = T::lit(0.5);
    let avg = (&g1.cov + &g2.cov) * half;
    let chol = cholesky(&avg, "average covariance")
        .map_err(|_| Error::Singular("average covariance is singular; add a diagonal ridge".into()))?;
    let diff = &g1.mean - &g2.mean;
    let quad = mahalanobis_sq(&chol, &diff) / T::lit(8.0);
    let logs = half * (log_det(&chol) - half * (g1.log_det + g2.log_det));
    Ok((quad + logs).max(T::zero()))
}

/// Squared Hellinger distance `int (sqrt f - sqrt g)^2 = 2 (1 - exp(-B))`.
pub fn hellinger_sq<T: Real>(g1: &Gaussian<T>, g2: &Gaussian<T>) -> Result<T> {
    let b = bhattacharyya(g1, g2)?;
    Ok(T::lit(2.0) * (T::one() - (-b).exp()))
}

/// Per-class means, the regularized covariances (one if pooled) and class
/// counts, before any positive-definiteness check.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate<T: Real> {
    pub means: Vec<DVector<T>>,
    pub covariances: Vec<DMatrix<T>>,
    pub counts: Vec<usize>,
}

fn shrink<T: Real>(raw: &DMatrix<T>, spec: &CovarianceSpec) -> DMatrix<T> {
    let l = raw.nrows();
    let mut s = raw.clone();
    if spec.structure == Structure::Diagonal {
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    s[(i, j)] = T::zero();
                }
            }
        }
    }
    let trace = s.trace();
    let lambda = T::lit(spec.lambda);
    let target = if spec.normalize_trace {
        trace / T::from_count(l)
    } else {
        trace
    };
    let mut out = s * (T::one() - lambda);
    let eps = match spec.epsilon {
        Some(e) => T::lit(e),
        None if trace > T::zero() => T::lit(1e-6) * trace / T::from_count(l),
        None => T::lit(1e-6),
    };
    for i in 0..l {
        out[(i, i)] += lambda * target + eps;
    }
    out
}

/// Maximum-likelihood (divide-by-n) estimates followed by shrinkage and the
/// diagonal ridge.
pub fn estimate_covariances<T: Real>(
    points: &[DVector<T>],
    y: &[usize],
    n_classes: usize,
    spec: &CovarianceSpec,
) -> Result<CovarianceEstimate<T>> {
    spec.validate()?;
    if points.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: y.len(),
        });
    }
    let l = points.first().map(|p| p.len()).ok_or(Error::EmptyCorpus)?;
    if l == 0 {
        return Err(Error::InvalidArgument("points must have dimension >= 1".into()));
    }
    for p in points {
        if p.len() != l {
            return Err(Error::DimensionMismatch { expected: l, actual: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projected points".into()));
        }
    }
    let mut counts = vec![0usize; n_classes];
    let mut sums = vec![DVector::<T>::zeros(l); n_classes];
    for (p, &c) in points.iter().zip(y) {
        if c >= n_classes {
            return Err(Error::UnknownLabel(format!("class index {c}")));
        }
        counts[c] += 1;
        sums[c] += p;
    }
    let means: Vec<DVector<T>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / T::from_count(n) } else { s })
        .collect();
    let mut scatter = vec![DMatrix::<T>::zeros(l, l); n_classes];
    for (p, &c) in points.iter().zip(y) {
        let d = p - &means[c];
        scatter[c].ger(T::one(), &d, &d, T::one());
    }
    let covariances = match spec.pooling {
        Pooling::Pooled => {
            let total = scatter.iter().fold(DMatrix::zeros(l, l), |acc, s| acc + s);
            vec![shrink(&(total / T::from_count(points.len())), spec)]
        }
        Pooling::PerClass => scatter
            .iter()
            .zip(&counts)
            .map(|(s, &n)| shrink(&(s / T::from_count(n.max(1))), spec))
            .collect(),
    };
    Ok(CovarianceEstimate {
        means,
        covariances,
        counts,
    })
}

/// Fitted `Z | Y = y ~ N(mu_y, Sigma_y)` with class priors.
#[derive(Debug, Clone)]
pub struct GaussianClassModel<T: Real> {
    pub labels: Vec<String>,
    pub priors: Vec<T>,
    pub counts: Vec<usize>,
    pub spec: CovarianceSpec,
    gaussians: Vec<Gaussian<T>>,
}

impl<T: Real> GaussianClassModel<T> {
    /// Fits from projected points `points[i]` with class index `y[i]` into `labels`.
    pub fn fit(points: &[DVector<T>], y: &[usize], labels: &[String], spec: &CovarianceSpec) -> Result<Self> {
        let est = estimate_covariances(points, y, labels.len(), spec)?;
        for (label, &n) in labels.iter().zip(&est.counts) {
            if n < spec.min_count() {
                return Err(Error::InsufficientClass {
                    label: label.clone(),
                    count: n,
                    required: spec.min_count(),
                });
            }
        }
        let total = T::from_count(points.len());
        let priors = est.counts.iter().map(|&n| T::from_count(n) / total).collect();
        let gaussians = est
            .means
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let cov = match spec.pooling {
                    Pooling::Pooled => est.covariances[0].clone(),
                    Pooling::PerClass => est.covariances[c].clone(),
                };
                Gaussian::new(m.clone(), cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianClassModel {
            labels: labels.to_vec(),
            priors,
            counts: est.counts,
            spec: *spec,
            gaussians,
        })
    }

    /// Rebuilds a model from stored parameters (model files).
    pub fn from_parts(
        labels: Vec<String>,
        means: Vec<DVector<T>>,
        covariances: Vec<DMatrix<T>>,
        priors: Vec<T>,
        counts: Vec<usize>,
        spec: CovarianceSpec,
    ) -> Result<Self> {
        if means.len() != labels.len() || priors.len() != labels.len() || counts.len() != labels.len() {
            return Err(Error::ModelFile("gaussian parameter lengths disagree".into()));
        }
        let expected_covs = match spec.pooling {
            Pooling::Pooled => 1,
            Pooling::PerClass => labels.len(),
        };
        if covariances.len() != expected_covs {
            return Err(Error::ModelFile(format!(
                "expected {expected_covs} covariance matrices, found {}",
                covariances.len()
            )));
        }
        let gaussians = means
            .into_iter()
            .enumerate()
            .map(|(c, m)| Gaussian::new(m, covariances[c.min(covariances.len() - 1)].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianClassModel {
            labels,
            priors,
            counts,
            spec,
            gaussians,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.gaussians[0].dim()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn gaussian(&self, y: usize) -> &Gaussian<T> {
        &self.gaussians[y]
    }

    pub fn means(&self) -> Vec<DVector<T>> {
        self.gaussians.iter().map(|g| g.mean.clone()).collect()
    }

    /// Distinct covariance matrices: one if pooled, one per class otherwise.
    pub fn covariances(&self) -> Vec<DMatrix<T>> {
        match self.spec.pooling {
            Pooling::Pooled => vec![self.gaussians[0].cov.clone()],
            Pooling::PerClass => self.gaussians.iter().map(|g| g.cov.clone()).collect(),
        }
    }

    pub fn log_density(&self, y: usize, z: &DVector<T>) -> Result<T> {
        let g = self
            .gaussians
            .get(y)
            .ok_or_else(|| Error::UnknownLabel(format!("class index {y}")))?;
        g.log_pdf(z)
    }

    pub fn log_density_label(&self, label: &str, z: &DVector<T>) -> Result<T> {
        self.log_density(self.class_index(label)?, z)
    }

    /// `C x C` matrix of pairwise Bhattacharyya (or squared Hellinger) distances.
    pub fn distance_matrix(&self, kind: DistanceKind) -> Result<DMatrix<T>> {
        let c = self.n_classes();
        let mut d = DMatrix::zeros(c, c);
        for i in 0..c {
            for j in 0..i {
                let v = match kind {
                    DistanceKind::Bhattacharyya => bhattacharyya(&self.gaussians[i], &self.gaussians[j])?,
                    DistanceKind::HellingerSq => hellinger_sq(&self.gaussians[i], &self.gaussians[j])?,
                };
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Bhattacharyya,
    HellingerSq,
}
