//! Dense helpers and the multi-response ridge solver shared by the manifold
//! regression and the linear-regression baseline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::scalar::Real;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned vectors follow suit).
pub fn symmetric_eigen_desc<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let not_pd = || Error::Singular(format!("{what} is not positive definite"));
    let chol = Cholesky::new(m.clone()).ok_or_else(not_pd)?;
    // pivots at rounding level mean the matrix is singular in floating point
    let scale = (0..m.nrows()).fold(T::zero(), |acc, i| acc.max(m[(i, i)].abs()));
    let tol = scale * T::default_epsilon() * T::from_count(8 * m.nrows().max(1));
    let l = chol.l_dirty();
    if (0..m.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= tol) {
        return Err(not_pd());
    }
    Ok(chol)
}

/// log det of a matrix from its Cholesky factor.
pub fn log_det<T: Real>(c: &Cholesky<T, Dyn>) -> T {
    let l = c.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
}

/// Sum of squares of `L^{-1} v`, i.e. `v^T M^{-1} v`.
pub fn mahalanobis_sq<T: Real>(c: &Cholesky<T, Dyn>, v: &DVector<T>) -> T {
    let w = c
        .l_dirty()
        .solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal");
    w.dot(&w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeSolver {
    /// Primal normal equations when `d <= n`, kernel form when `n < d`,
    /// conjugate gradients when both are large.
    #[default]
    Auto,
    Primal,
    Dual,
    ConjugateGradient,
}

const DENSE_LIMIT: usize = 4000;

/// Fitted ridge regression: `prediction = theta^T x + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution<T: Real> {
    /// `d x l`
    pub theta: DMatrix<T>,
    pub intercept: DVector<T>,
}

fn mean_vector<T: Real>(x: &[SparseVector<T>], dim: usize) -> Vec<T> {
    let mut m = vec![T::zero(); dim];
    for v in x {
        for (i, val) in v.iter() {
            m[i] += val;
        }
    }
    let n = T::from_count(x.len());
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Minimizes `sum_i |theta^T x_i + b - z_i|^2 + ridge * |theta|_F^2` with an
/// unpenalized intercept `b`. `targets` is `n x l`.
pub fn fit_ridge<T: Real>(
    x: &[SparseVector<T>],
    dim: usize,
    targets: &DMatrix<T>,
    ridge: T,
    solver: RidgeSolver,
) -> Result<RidgeSolution<T>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: targets.nrows(),
        });
    }
    if ridge < T::zero() || !ridge.is_finite() {
        return Err(Error::InvalidArgument("ridge must be finite and non-negative".into()));
    }
    if let Some(v) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.dim(),
        });
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets".into()));
    }
    let solver = match solver {
        RidgeSolver::Auto if dim <= n && dim <= DENSE_LIMIT => RidgeSolver::Primal,
        RidgeSolver::Auto if n <= DENSE_LIMIT => RidgeSolver::Dual,
        RidgeSolver::Auto => RidgeSolver::ConjugateGradient,
        s => s,
    };
    let x_mean = mean_vector(x, dim);
    let z_mean: DVector<T> = targets.row_mean().transpose();
    let l = targets.ncols();
    let nt = T::from_count(n);

    let theta = match solver {
        RidgeSolver::Primal => {
            let mut gram = DMatrix::<T>::zeros(dim, dim);
            let mut rhs = DMatrix::<T>::zeros(dim, l);
            for (v, z) in x.iter().zip(targets.row_iter()) {
                for (a, va) in v.iter() {
                    for (b, vb) in v.iter() {
                        gram[(a, b)] += va * vb;
                    }
                    for k in 0..l {
                        rhs[(a, k)] += va * z[k];
                    }
                }
            }
            for a in 0..dim {
                for b in 0..dim {
                    gram[(a, b)] -= nt * x_mean[a] * x_mean[b];
                }
                gram[(a, a)] += ridge;
                for k in 0..l {
                    rhs[(a, k)] -= nt * x_mean[a] * z_mean[k];
                }
            }
            let chol = cholesky(&gram, "ridge normal matrix").map_err(|_| singular(ridge))?;
            chol.solve(&rhs)
        }
        RidgeSolver::Dual => {
            let xm = SparseVector::from_dense(&x_mean);
            let mm = xm.dot(&xm);
            let proj: Vec<T> = x.iter().map(|v| v.dot(&xm)).collect();
            let mut k = DMatrix::<T>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let kij = x[i].dot(&x[j]) - proj[i] - proj[j] + mm;
                    k[(i, j)] = kij;
                    k[(j, i)] = kij;
                }
                k[(i, i)] += ridge;
            }
            let mut zc = targets.clone();
            for mut row in zc.row_iter_mut() {
                row -= z_mean.transpose();
            }
            let chol = cholesky(&k, "ridge kernel matrix").map_err(|_| singular(ridge))?;
            let alpha = chol.solve(&zc);
            let mut theta = DMatrix::<T>::zeros(dim, l);
            let alpha_sum: DVector<T> = alpha.row_sum().transpose();
            for (v, a) in x.iter().zip(alpha.row_iter()) {
                for (i, val) in v.iter() {
                    for c in 0..l {
                        theta[(i, c)] += val * a[c];
                    }
                }
            }
            for i in 0..dim {
                for c in 0..l {
                    theta[(i, c)] -= x_mean[i] * alpha_sum[c];
                }
            }
            theta
        }
        RidgeSolver::ConjugateGradient => conjugate_gradient(x, dim, targets, &x_mean, &z_mean, ridge)?,
        RidgeSolver::Auto => unreachable!("resolved above"),
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(singular(ridge));
    }
    let intercept = &z_mean - theta.transpose() * DVector::from_column_slice(&x_mean);
    Ok(RidgeSolution { theta, intercept })
}

fn singular<T: Real>(ridge: T) -> Error {
    if ridge == T::zero() {
        Error::Singular("normal equations are singular with ridge = 0; set ridge > 0".into())
    } else {
        Error::Singular(format!("normal equations are singular at ridge {ridge:?}"))
    }
}

/// Per-column CG on `(Xc^T Xc + ridge I) theta = Xc^T Zc`, never forming the
/// Gram matrix.
fn conjugate_gradient<T: Real>(
    x: &[SparseVector<T>],
    dim: usize,
    targets: &DMatrix<T>,
    x_mean: &[T],
    z_mean: &DVector<T>,
    ridge: T,
) -> Result<DMatrix<T>> {
    let apply = |v: &DVector<T>| -> DVector<T> {
        let mv = x_mean.iter().zip(v.iter()).fold(T::zero(), |a, (&m, &w)| a + m * w);
        let xv: Vec<T> = x.iter().map(|r| r.dot_dense(v.as_slice()) - mv).collect();
        let mut out = v * ridge;
        let s = xv.iter().fold(T::zero(), |a, &b| a + b);
        for (r, &c) in x.iter().zip(&xv) {
            for (i, val) in r.iter() {
                out[i] += val * c;
            }
        }
        for i in 0..dim {
            out[i] -= x_mean[i] * s;
        }
        out
    };
    let max_iter = 10 * dim + 100;
    let mut theta = DMatrix::<T>::zeros(dim, targets.ncols());
    for c in 0..targets.ncols() {
        let mut b = DVector::<T>::zeros(dim);
        for (r, row) in x.iter().zip(targets.row_iter()) {
            let zc = row[c] - z_mean[c];
            for (i, val) in r.iter() {
                b[i] += val * zc;
            }
        }
        let bsum = targets.column(c).iter().fold(T::zero(), |a, &v| a + v - z_mean[c]);
        for i in 0..dim {
            b[i] -= x_mean[i] * bsum;
        }
        let tol = T::lit(1e-8).max(T::default_epsilon() * T::lit(100.0) * b.norm());
        let mut w = DVector::<T>::zeros(dim);
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rs = r.dot(&r);
        let mut it = 0;
        while rs.sqrt() > tol {
            if it >= max_iter {
                return Err(Error::NoConvergence {
                    iterations: it,
                    grad_norm: rs.sqrt().as_f64(),
                });
            }
            let ap = apply(&p);
            let pap = p.dot(&ap);
            if pap <= T::zero() {
                return Err(singular(ridge));
            }
            let a = rs / pap;
            w.axpy(a, &p, T::one());
            r.axpy(-a, &ap, T::one());
            let rs_new = r.dot(&r);
            p = &r + &p * (rs_new / rs);
            rs = rs_new;
            it += 1;
        }
        theta.set_column(c, &w);
    }
    Ok(theta)
}
