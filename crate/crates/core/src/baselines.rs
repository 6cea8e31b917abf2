//! Bag-of-words comparison systems: one-vs-all L2 logistic regression for
//! emotions and ridge linear regression for ratings.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::classify::argmax;
use crate::error::{Error, Result};
use crate::features::{Dataset, RatingDataset, SparseVector};
use crate::linalg::{fit_ridge, RidgeSolver};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm is at most this.
    pub grad_tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 20_000,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

/// Minimizer of one class-vs-rest problem.
#[derive(Debug, Clone)]
pub struct LogisticFit<T: Real> {
    pub weights: DVector<T>,
    pub bias: T,
    pub iterations: usize,
    pub grad_norm: T,
    /// Objective value after each accepted step, starting at the zero vector.
    pub loss_trace: Vec<T>,
}

/// `mean_i softplus(-s_i (w.x_i + b)) + reg / 2 * |w|^2` with `s_i = +-1`;
/// the bias is unpenalized.
pub fn logistic_objective<T: Real>(
    x: &[SparseVector<T>],
    s: &[bool],
    reg: T,
    params: &DVector<T>,
) -> (T, DVector<T>) {
    let d = params.len() - 1;
    let nt = T::from_count(x.len());
    let b = params[d];
    let mut loss = T::zero();
    let mut grad = DVector::<T>::zeros(d + 1);
    for (xi, &pos) in x.iter().zip(s) {
        let sign = if pos { T::one() } else { -T::one() };
        let mut f = b;
        for (j, v) in xi.iter() {
            f += params[j] * v;
        }
        let m = sign * f;
        // softplus(-m) and its derivative -sigmoid(-m), both overflow-safe
        let e = (-m.abs()).exp();
        loss += (-m).max(T::zero()) + e.ln_1p();
        let sig_neg = if m >= T::zero() { e / (T::one() + e) } else { T::one() / (T::one() + e) };
        let coef = -sign * sig_neg / nt;
        for (j, v) in xi.iter() {
            grad[j] += coef * v;
        }
        grad[d] += coef;
    }
    loss /= nt;
    let w = params.rows(0, d);
    loss += reg * T::lit(0.5) * w.norm_squared();
    for j in 0..d {
        grad[j] += reg * params[j];
    }
    (loss, grad)
}

/// L-BFGS with backtracking (Armijo) line search from the zero vector.
pub fn fit_binary_logistic<T: Real>(
    x: &[SparseVector<T>],
    s: &[bool],
    dim: usize,
    reg: T,
    opts: &OptimizerOptions,
) -> Result<LogisticFit<T>> {
    if x.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: s.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(reg > T::zero() && reg.is_finite()) {
        return Err(Error::InvalidArgument("regularization must be positive and finite".into()));
    }
    let tol = T::lit(opts.grad_tol);
    let c1 = T::lit(1e-4);
    let mut params = DVector::<T>::zeros(dim + 1);
    let (mut loss, mut grad) = logistic_objective(x, s, reg, &params);
    let mut trace = vec![loss];
    let mut history: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::new();
    let mut iterations = 0;
    while grad.norm() > tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: grad.norm().as_f64(),
            });
        }
        iterations += 1;
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (sk, yk, rho) in history.iter().rev() {
            let a = *rho * sk.dot(&q);
            q.axpy(-a, yk, T::one());
            alphas.push(a);
        }
        if let Some((sk, yk, _)) = history.back() {
            q *= sk.dot(yk) / yk.dot(yk);
        } else {
            q /= grad.norm().max(T::one());
        }
        for ((sk, yk, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * yk.dot(&q);
            q.axpy(a - b, sk, T::one());
        }
        let mut dir = -q;
        let mut slope = grad.dot(&dir);
        if slope >= T::zero() {
            history.clear();
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &params + &dir * step;
            let (l, g) = logistic_objective(x, s, reg, &trial);
            if l <= loss + c1 * step * slope {
                accepted = Some((trial, l, g));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((next, next_loss, next_grad)) = accepted else {
            if history.is_empty() {
                // no decrease along steepest descent: limited by rounding
                return Err(Error::NoConvergence {
                    iterations,
                    grad_norm: grad.norm().as_f64(),
                });
            }
            history.clear();
            continue;
        };
        let sk = &next - &params;
        let yk = &next_grad - &grad;
        let sy = sk.dot(&yk);
        if sy > T::default_epsilon() * yk.norm_squared() {
            if history.len() == opts.memory.max(1) {
                history.pop_front();
            }
            history.push_back((sk, yk, T::one() / sy));
        }
        params = next;
        loss = next_loss;
        grad = next_grad;
        trace.push(loss);
    }
    Ok(LogisticFit {
        weights: params.rows(0, dim).into_owned(),
        bias: params[dim],
        iterations,
        grad_norm: grad.norm(),
        loss_trace: trace,
    })
}

/// One weight vector and bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegOvaModel<T: Real> {
    pub labels: Vec<String>,
    /// `C x d`
    pub weights: DMatrix<T>,
    pub biases: DVector<T>,
    pub reg: T,
    pub vocab_fingerprint: String,
}

impl<T: Real> LogRegOvaModel<T> {
    pub fn fit(ds: &Dataset<T>, dim: usize, reg: T, vocab_fingerprint: &str, opts: &OptimizerOptions) -> Result<Self> {
        let c = ds.classes.len();
        if c < 2 {
            return Err(Error::InvalidArgument("one-vs-all needs at least two classes".into()));
        }
        if let Some(v) = ds.x.iter().find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        let fits = (0..c)
            .into_par_iter()
            .map(|k| {
                let s: Vec<bool> = ds.y.iter().map(|&y| y == k).collect();
                fit_binary_logistic(&ds.x, &s, dim, reg, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut weights = DMatrix::zeros(c, dim);
        let mut biases = DVector::zeros(c);
        for (k, f) in fits.into_iter().enumerate() {
            weights.set_row(k, &f.weights.transpose());
            biases[k] = f.bias;
        }
        Ok(LogRegOvaModel {
            labels: ds.classes.clone(),
            weights,
            biases,
            reg,
            vocab_fingerprint: vocab_fingerprint.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, x: &SparseVector<T>) -> Result<Vec<T>> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok((0..self.labels.len())
            .map(|k| {
                x.iter()
                    .fold(self.biases[k], |acc, (j, v)| acc + self.weights[(k, j)] * v)
            })
            .collect())
    }

    pub fn predict_index(&self, x: &SparseVector<T>) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Result<&str> {
        Ok(&self.labels[self.predict_index(x)?])
    }

    pub fn predict_batch(&self, xs: &[SparseVector<T>]) -> Result<Vec<usize>> {
        xs.par_iter().map(|x| self.predict_index(x)).collect()
    }
}

/// Ridge regression from bag-of-words to the rating value.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegModel<T: Real> {
    pub weights: DVector<T>,
    pub bias: T,
    pub reg: T,
    /// Ascending rating levels seen in training; predictions clamp to
    /// `[levels[0], levels[last]]`.
    pub levels: Vec<i64>,
    pub vocab_fingerprint: String,
}

impl<T: Real> LinRegModel<T> {
    pub fn fit(ds: &RatingDataset<T>, dim: usize, reg: T, vocab_fingerprint: &str) -> Result<Self> {
        let targets = DMatrix::from_fn(ds.ratings.len(), 1, |i, _| T::lit(ds.ratings[i] as f64));
        let sol = fit_ridge(&ds.x, dim, &targets, reg, RidgeSolver::Auto)?;
        let mut levels = ds.ratings.clone();
        levels.sort_unstable();
        levels.dedup();
        Ok(LinRegModel {
            weights: sol.theta.column(0).into_owned(),
            bias: sol.intercept[0],
            reg,
            levels,
            vocab_fingerprint: vocab_fingerprint.to_string(),
        })
    }

    /// Unclamped linear prediction.
    pub fn predict_raw(&self, x: &SparseVector<T>) -> Result<T> {
        if x.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.dim(),
            });
        }
        Ok(x.iter().fold(self.bias, |acc, (j, v)| acc + self.weights[j] * v))
    }

    /// Prediction clamped to the rating scale.
    pub fn predict(&self, x: &SparseVector<T>) -> Result<T> {
        let lo = T::lit(self.levels[0] as f64);
        let hi = T::lit(*self.levels.last().expect("at least one level") as f64);
        Ok(self.predict_raw(x)?.max(lo).min(hi))
    }

    /// Nearest training level to the clamped prediction; ties go lower.
    pub fn predict_level(&self, x: &SparseVector<T>) -> Result<i64> {
        let p = self.predict(x)?;
        let mut best = self.levels[0];
        for &r in &self.levels[1..] {
            if (T::lit(r as f64) - p).abs() < (T::lit(best as f64) - p).abs() {
                best = r;
            }
        }
        Ok(best)
    }

    pub fn predict_batch(&self, xs: &[SparseVector<T>]) -> Result<Vec<i64>> {
        xs.par_iter().map(|x| self.predict_level(x)).collect()
    }
}
