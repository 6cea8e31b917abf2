//! Student-t tail probabilities from the regularized incomplete beta function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub significant: bool,
}

/// Paired two-sided t-test on `a[i] - b[i]`.
///
/// Constant differences give `p = 1` when they are all zero and `p = 0`
/// otherwise, with `t` reported as 0 or signed infinity.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var.sqrt() / nf.sqrt());
        (t, t_two_sided_p(t, df as f64))
    };
    Ok(TTest {
        t,
        p,
        df,
        significant: p < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::beta::beta_reg;
    use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for &x in &[0.1, 0.5, 1.0, 1.5, 2.0, 4.5, 10.0, 33.3, 171.0] {
            assert!((ln_gamma(x) - statrs_ln_gamma(x)).abs() < 1e-12 * statrs_ln_gamma(x).abs().max(1.0), "{x}");
        }
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn inc_beta_matches_reference() {
        for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (4.5, 0.5), (2.0, 2.0), (30.0, 0.5)] {
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                assert!((inc_beta(a, b, x) - beta_reg(a, b, x)).abs() < 1e-12, "{a} {b} {x}");
            }
        }
    }

    #[test]
    fn t_tail_matches_students_t() {
        for df in [1.0, 2.0, 4.0, 9.0, 29.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [0.0, 0.3, 1.0, 2.262, 4.0, 12.0] {
                let reference = 2.0 * (1.0 - dist.cdf(t));
                assert!((t_two_sided_p(t, df) - reference).abs() < 1e-10, "{df} {t}");
            }
        }
    }

    #[test]
    fn hand_computed_t_statistic() {
        let d = [0.5, -0.2, 0.3, 0.1, 0.4];
        let zeros = [0.0; 5];
        let r = paired_t_test(&d, &zeros, 0.05).unwrap();
        let mean = 1.1 / 5.0;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((r.t - mean / (var.sqrt() / 5f64.sqrt())).abs() < 1e-10);
        assert_eq!(r.df, 4);
    }

    #[test]
    fn degenerate_variance_conventions() {
        let a = [0.7, 0.2, 0.9];
        let r = paired_t_test(&a, &a, 0.05).unwrap();
        assert_eq!((r.t, r.p, r.significant), (0.0, 1.0, false));
        let r = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0], 0.05).unwrap();
        assert_eq!((r.p, r.significant), (0.0, true));
        assert!(r.t.is_infinite() && r.t > 0.0);
    }

    #[test]
    fn swapping_arguments_negates_t() {
        let a = [0.71, 0.69, 0.75, 0.73, 0.70];
        let b = [0.70, 0.66, 0.71, 0.74, 0.69];
        let x = paired_t_test(&a, &b, 0.05).unwrap();
        let y = paired_t_test(&b, &a, 0.05).unwrap();
        assert_eq!(x.t, -y.t);
        assert_eq!(x.p, y.p);
    }

    #[test]
    fn validation() {
        assert!(paired_t_test(&[1.0], &[2.0], 0.05).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0], 0.05).is_err());
    }
}
