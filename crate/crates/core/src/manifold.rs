//! The emotion manifold: class centroids in feature space, their classical
//! MDS embedding, and the ridge regression that maps documents onto it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, SparseVector, Vocabulary};
use crate::linalg::{fit_ridge, symmetric_eigen_desc, RidgeSolution, RidgeSolver};
use crate::scalar::Real;

/// Empirical class means `E(X | Y = y)`, one dense row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable<T: Real> {
    pub labels: Vec<String>,
    /// `C x d`
    pub rows: DMatrix<T>,
}

pub fn class_centroids<T: Real>(ds: &Dataset<T>, dim: usize) -> Result<CentroidTable<T>> {
    let c = ds.classes.len();
    if c < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let counts = ds.class_counts();
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InsufficientClass {
            label: ds.classes[empty].clone(),
            count: 0,
            required: 1,
        });
    }
    let mut rows = DMatrix::<T>::zeros(c, dim);
    for (v, &y) in ds.x.iter().zip(&ds.y) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        for (i, val) in v.iter() {
            rows[(y, i)] += val;
        }
    }
    for (y, &n) in counts.iter().enumerate() {
        let inv = T::one() / T::from_count(n);
        rows.row_mut(y).scale_mut(inv);
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("class centroids".into()));
    }
    Ok(CentroidTable {
        labels: ds.classes.clone(),
        rows,
    })
}

/// Pairwise squared Euclidean distances between matrix rows.
pub fn squared_distances<T: Real>(rows: &DMatrix<T>) -> DMatrix<T> {
    let c = rows.nrows();
    let mut d = DMatrix::zeros(c, c);
    for i in 0..c {
        for j in 0..i {
            let v = (rows.row(i) - rows.row(j)).norm_squared();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Result of classical MDS.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Real> {
    /// `C x l`, axes by descending eigenvalue.
    pub coords: DMatrix<T>,
    /// All eigenvalues of the double-centered matrix, descending.
    pub eigenvalues: DVector<T>,
}

/// Torgerson scaling of a squared-distance matrix into `l` dimensions.
///
/// Each axis is `sqrt(max(lambda_k, 0)) * v_k`, with the sign chosen so that
/// the coordinate of largest magnitude is positive.
pub fn classical_mds<T: Real>(sq_dist: &DMatrix<T>, l: usize) -> Result<Embedding<T>> {
    let c = sq_dist.nrows();
    if sq_dist.ncols() != c {
        return Err(Error::InvalidArgument("distance matrix must be square".into()));
    }
    if l < 1 || l + 1 > c {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {l} outside [1, {}]",
            c.saturating_sub(1)
        )));
    }
    if sq_dist.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distance matrix".into()));
    }
    if sq_dist.amax() <= T::zero() {
        return Err(Error::Degenerate(
            "all centroids are identical; the distance matrix has rank 0".into(),
        ));
    }
    let row_means: Vec<T> = (0..c).map(|i| sq_dist.row(i).mean()).collect();
    let col_means: Vec<T> = (0..c).map(|j| sq_dist.column(j).mean()).collect();
    let grand = sq_dist.mean();
    let half = T::lit(0.5);
    let b = DMatrix::from_fn(c, c, |i, j| {
        -half * (sq_dist[(i, j)] - row_means[i] - col_means[j] + grand)
    });
    let b = (&b + b.transpose()) * half;
    let (values, vectors) = symmetric_eigen_desc(&b);
    let mut coords = DMatrix::<T>::zeros(c, l);
    for k in 0..l {
        let scale = values[k].max(T::zero()).sqrt();
        let mut col = vectors.column(k) * scale;
        let mut pivot = 0;
        for i in 1..c {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < T::zero() {
            col.neg_mut();
        }
        coords.set_column(k, &col);
    }
    Ok(Embedding {
        coords,
        eigenvalues: values,
    })
}

pub fn embed_centroids<T: Real>(table: &CentroidTable<T>, l: usize) -> Result<Embedding<T>> {
    classical_mds(&squared_distances(&table.rows), l)
}

/// Ridge fit of documents onto their class's embedded centroid.
pub fn fit_regression<T: Real>(
    ds: &Dataset<T>,
    dim: usize,
    mu: &DMatrix<T>,
    ridge: T,
    solver: RidgeSolver,
) -> Result<RidgeSolution<T>> {
    if mu.nrows() != ds.classes.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.classes.len(),
            actual: mu.nrows(),
        });
    }
    let targets = DMatrix::from_fn(ds.len(), mu.ncols(), |i, k| mu[(ds.y[i], k)]);
    fit_ridge(&ds.x, dim, &targets, ridge, solver)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    /// Ambient dimension; `None` means `C - 1`. Larger values are clamped.
    pub dim: Option<usize>,
    pub ridge: f64,
    pub solver: RidgeSolver,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            dim: None,
            ridge: 1e-3,
            solver: RidgeSolver::Auto,
        }
    }
}

/// Linear map from documents to the manifold plus the embedded centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel<T: Real> {
    pub labels: Vec<String>,
    /// `d x l`
    pub theta: DMatrix<T>,
    pub intercept: DVector<T>,
    /// `C x l` embedded class centroids.
    pub mu: DMatrix<T>,
    pub eigenvalues: DVector<T>,
    pub vocab_fingerprint: String,
    pub ridge: T,
    /// Isotropic document-noise scale. Never estimated; kept for the file format.
    pub sigma_x: Option<T>,
}

impl<T: Real> ManifoldModel<T> {
    pub fn fit(ds: &Dataset<T>, dim: usize, vocab_fingerprint: &str, config: &ManifoldConfig) -> Result<Self> {
        let c = ds.classes.len();
        let table = class_centroids(ds, dim)?;
        let l = config.dim.unwrap_or(c).min(c - 1);
        if l == 0 {
            return Err(Error::InvalidArgument("manifold dimension must be positive".into()));
        }
        let emb = embed_centroids(&table, l)?;
        let ridge = T::lit(config.ridge);
        let sol = fit_regression(ds, dim, &emb.coords, ridge, config.solver)?;
        Ok(ManifoldModel {
            labels: ds.classes.clone(),
            theta: sol.theta,
            intercept: sol.intercept,
            mu: emb.coords,
            eigenvalues: emb.eigenvalues,
            vocab_fingerprint: vocab_fingerprint.to_string(),
            ridge,
            sigma_x: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let fp = vocab.fingerprint();
        if fp != self.vocab_fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.vocab_fingerprint.clone(),
                input: fp,
            });
        }
        Ok(())
    }

    /// `theta^T x + b`: the mode of the document's manifold position.
    pub fn project(&self, x: &SparseVector<T>) -> Result<DVector<T>> {
        if x.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.dim(),
            });
        }
        let mut z = self.intercept.clone();
        for (i, v) in x.iter() {
            z.axpy(v, &self.theta.row(i).transpose(), T::one());
        }
        Ok(z)
    }

    /// Most negative and most positive regression coefficients on `axis`,
    /// `k` terms each, ties by term.
    #[allow(clippy::type_complexity)]
    pub fn axis_top_words(
        &self,
        vocab: &Vocabulary,
        axis: usize,
        k: usize,
    ) -> Result<(Vec<(String, T)>, Vec<(String, T)>)> {
        if axis >= self.dim() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for a {}-dimensional manifold",
                self.dim()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        self.check_vocabulary(vocab)?;
        let mut coef: Vec<(String, T)> = (0..self.input_dim())
            .map(|i| (vocab.term(i).to_string(), self.theta[(i, axis)]))
            .collect();
        coef.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let negative: Vec<_> = coef.iter().take(k).cloned().collect();
        coef.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let positive: Vec<_> = coef.into_iter().take(k).collect();
        Ok((negative, positive))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(points: &[(&[f64], usize)], classes: &[&str]) -> Dataset<f64> {
        Dataset {
            x: points.iter().map(|(p, _)| SparseVector::from_dense(p)).collect(),
            y: points.iter().map(|(_, y)| *y).collect(),
            classes: classes.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn centroid_is_mean_of_members() {
        let d = ds(&[(&[1.0, 0.0], 0), (&[0.0, 2.0], 0), (&[3.0, 3.0], 1)], &["A", "B"]);
        let t = class_centroids(&d, 2).unwrap();
        assert_eq!(t.rows.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 1.0]);
        assert_eq!(t.rows.row(1).iter().copied().collect::<Vec<_>>(), vec![3.0, 3.0]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let d = ds(&[(&[1.0, 0.0], 0), (&[0.0, 2.0], 0)], &["A", "B"]);
        assert!(matches!(class_centroids(&d, 2), Err(Error::InsufficientClass { .. })));
    }

    #[test]
    fn collinear_centroids_embed_on_a_line() {
        let rows = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let emb = classical_mds(&squared_distances(&rows), 1).unwrap();
        let z: Vec<f64> = emb.coords.column(0).iter().copied().collect();
        // centred with unit spacing, up to the global sign
        assert!((z[0].abs() - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[0] + z[2]).abs() < 1e-12, "{z:?}");
        let pivot = z.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(pivot > 0.0);
        assert!(emb.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn mds_rejects_bad_dimension_and_degenerate_input() {
        let rows = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let d = squared_distances(&rows);
        assert!(classical_mds(&d, 0).is_err());
        assert!(classical_mds(&d, 3).is_err());
        let same = DMatrix::from_element(3, 2, 0.7);
        assert!(matches!(classical_mds(&squared_distances(&same), 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coincident_centroids_stay_coincident() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 4.0, -1.0]);
        let emb = classical_mds(&squared_distances(&rows), 2).unwrap();
        assert!((emb.coords.row(0) - emb.coords.row(1)).norm() < 1e-12);
    }

    #[test]
    fn projection_is_affine() {
        let d = ds(
            &[(&[1.0, 0.0, 0.0], 0), (&[0.0, 1.0, 0.0], 1), (&[0.0, 0.0, 1.0], 2), (&[0.5, 0.5, 0.0], 0)],
            &["a", "b", "c"],
        );
        let m = ManifoldModel::fit(&d, 3, "fp", &ManifoldConfig::default()).unwrap();
        assert_eq!(m.dim(), 2);
        let zero = m.project(&SparseVector::zeros(3)).unwrap();
        assert_eq!(zero, m.intercept);
        let e1 = m.project(&SparseVector::from_dense(&[0.0, 1.0, 0.0])).unwrap();
        assert!((e1 - (&m.intercept + m.theta.row(1).transpose())).amax() < 1e-15);
        let x1 = SparseVector::from_dense(&[0.3, 0.0, 0.9]);
        let x2 = SparseVector::from_dense(&[0.0, 0.2, 0.4]);
        let (a, b) = (0.7, -1.3);
        let combo = SparseVector::from_dense(&[a * 0.3, b * 0.2, a * 0.9 + b * 0.4]);
        let lhs = m.project(&combo).unwrap();
        let rhs = m.project(&x1).unwrap() * a + m.project(&x2).unwrap() * b + &m.intercept * (1.0 - a - b);
        assert!((lhs - rhs).amax() < 1e-12);
        assert!(matches!(m.project(&SparseVector::zeros(4)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn top_words_sorted_and_clamped() {
        let vocab = Vocabulary::from_entries(vec![("up".into(), 1), ("down".into(), 1), ("flat".into(), 1)]).unwrap();
        let m = ManifoldModel {
            labels: vec!["a".into(), "b".into()],
            theta: DMatrix::from_row_slice(3, 1, &[2.0, -1.0, 0.0]),
            intercept: DVector::zeros(1),
            mu: DMatrix::zeros(2, 1),
            eigenvalues: DVector::zeros(2),
            vocab_fingerprint: vocab.fingerprint(),
            ridge: 1e-3,
            sigma_x: None,
        };
        let (neg, pos) = m.axis_top_words(&vocab, 0, 1).unwrap();
        assert_eq!(neg, vec![("down".to_string(), -1.0)]);
        assert_eq!(pos, vec![("up".to_string(), 2.0)]);
        let (neg, pos) = m.axis_top_words(&vocab, 0, 10).unwrap();
        assert_eq!(neg.len(), 3);
        assert_eq!(pos.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), vec!["up", "flat", "down"]);
        assert!(m.axis_top_words(&vocab, 1, 1).is_err());
        let other = Vocabulary::from_entries(vec![("x".into(), 1), ("y".into(), 1), ("z".into(), 1)]).unwrap();
        assert!(matches!(m.axis_top_words(&other, 0, 1), Err(Error::FingerprintMismatch { .. })));
    }
}
