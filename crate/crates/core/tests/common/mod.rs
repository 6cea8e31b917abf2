//! Independent reference implementations and the acceptance checks built on them.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mood_manifold::classify::EmotionClassifier;
use mood_manifold::cluster::{linkage_complete, voronoi_grid, voronoi_line};
use mood_manifold::corpus::synth::{
    generate_synthetic, word_list, ClassSpec, LatentWorld, PlantedPairs, ReviewDomain, SuperTopicLayout,
};
use mood_manifold::corpus::Corpus;
use mood_manifold::eval::{
    metrics, paired_t_test, rating_learning_curve, run_experiment, ConfusionMatrix, ExperimentConfig, Method,
    RatingCurveConfig,
};
use mood_manifold::features::{Dataset, Featurizer, Normalize, SparseVector, Tokenizer};
use mood_manifold::gaussian::{
    bhattacharyya, CovarianceSpec, DistanceKind, Gaussian, GaussianClassModel, Pooling, Structure,
};
use mood_manifold::linalg::RidgeSolver;
use mood_manifold::manifold::{classical_mds, ManifoldConfig, ManifoldModel};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

/// Runs `f`, failing it if it exceeds `limit`.
pub fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    match limit {
        Some(l) => {
            out.detail = format!("{}; {:.2}s (limit {}s)", out.detail, took.as_secs_f64(), l.as_secs());
            out.pass &= took <= l;
        }
        None => out.detail = format!("{}; {:.2}s", out.detail, took.as_secs_f64()),
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- Gaussians

pub type Mat2 = [[f64; 2]; 2];

pub fn random_spd2(r: &mut ChaCha8Rng) -> Mat2 {
    let a: [[f64; 2]; 2] = [
        [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
        [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
    ];
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = a[i][0] * a[j][0] + a[i][1] * a[j][1];
        }
        s[i][i] += 0.2;
    }
    s
}

/// Bivariate normal log density from the explicit 2x2 inverse.
pub fn gauss2_logpdf(m: [f64; 2], s: Mat2, x: [f64; 2]) -> f64 {
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
    let q = (s[1][1] * dx * dx - (s[0][1] + s[1][0]) * dx * dy + s[0][0] * dy * dy) / det;
    -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q
}

/// `-log` of the midpoint-rule integral of `sqrt(f g)` over the union of
/// both `span`-sigma boxes, `cells` x `cells` cells.
pub fn bhattacharyya_quadrature(m1: [f64; 2], s1: Mat2, m2: [f64; 2], s2: Mat2, cells: usize, span: f64) -> f64 {
    let mut lo = [0.0; 2];
    let mut h = [0.0; 2];
    for k in 0..2 {
        let (a1, a2) = (span * s1[k][k].sqrt(), span * s2[k][k].sqrt());
        lo[k] = (m1[k] - a1).min(m2[k] - a2);
        let hi = (m1[k] + a1).max(m2[k] + a2);
        h[k] = (hi - lo[k]) / cells as f64;
    }
    let mut sum = 0.0;
    for i in 0..cells {
        let x = lo[0] + (i as f64 + 0.5) * h[0];
        for j in 0..cells {
            let y = lo[1] + (j as f64 + 0.5) * h[1];
            sum += (0.5 * (gauss2_logpdf(m1, s1, [x, y]) + gauss2_logpdf(m2, s2, [x, y]))).exp();
        }
    }
    -(sum * h[0] * h[1]).ln()
}

fn to_gaussian(m: [f64; 2], s: Mat2) -> Gaussian<f64> {
    Gaussian::new(DVector::from_column_slice(&m), DMatrix::from_fn(2, 2, |i, j| s[i][j])).unwrap()
}

pub fn check_a1() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m1 = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let m2 = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let (s1, s2) = (random_spd2(&mut r), random_spd2(&mut r));
        let closed = bhattacharyya(&to_gaussian(m1, s1), &to_gaussian(m2, s2)).unwrap();
        let quad = bhattacharyya_quadrature(m1, s1, m2, s2, 400, 8.0);
        worst = worst.max((closed - quad).abs() / quad.abs());
    }
    let mut self_worst = 0.0f64;
    for _ in 0..50 {
        let m = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let g = to_gaussian(m, random_spd2(&mut r));
        self_worst = self_worst.max(bhattacharyya(&g, &g).unwrap().abs());
    }
    Outcome::new(
        worst <= 1e-4 && self_worst <= 1e-12,
        format!("max rel err {worst:.2e} over 50 pairs (tol 1e-4), identical-pair max |B| {self_worst:.1e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- MDS

pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0))
}

pub fn pairwise_distances(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        (0..p.ncols()).map(|k| (p[(i, k)] - p[(j, k)]).powi(2)).sum::<f64>().sqrt()
    })
}

pub fn column_variances(p: &DMatrix<f64>) -> Vec<f64> {
    (0..p.ncols())
        .map(|k| {
            let c = p.column(k);
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64
        })
        .collect()
}

pub fn check_a2() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut ordered = true;
    for _ in 0..20 {
        let c = r.random_range(2..=10);
        let p = random_points(&mut r, c, c - 1);
        let d = pairwise_distances(&p);
        let emb = classical_mds(&d.map(|v| v * v), c - 1).unwrap();
        worst = worst.max((pairwise_distances(&emb.coords) - d).amax());
        let v = column_variances(&emb.coords);
        ordered &= v.windows(2).all(|w| w[1] <= w[0] + 1e-12 * v[0]);
    }
    Outcome::new(
        worst <= 1e-8 && ordered,
        format!("max distance error {worst:.2e} over 20 configurations (tol 1e-8), axis variances non-increasing: {ordered}"),
    )
}

// ---------------------------------------------------------------- regression

/// Dense non-negative rows with about `density` non-zeros, L1-normalized.
pub fn random_documents(r: &mut ChaCha8Rng, n: usize, d: usize, density: f64) -> Vec<SparseVector<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..d)
                .map(|_| if r.random::<f64>() < density { r.random_range(0.1..1.0) } else { 0.0 })
                .collect();
            if row.iter().all(|&v| v == 0.0) {
                row[r.random_range(0..d)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            SparseVector::from_dense(&row)
        })
        .collect()
}

pub fn class_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("c{i}")).collect()
}

/// `|(Xc^T Xc + ridge I) theta - Xc^T Zc|_F / |Xc^T Zc|_F` and the intercept
/// error against `mean(Z) - theta^T mean(X)`.
pub fn ridge_residuals(x: &[SparseVector<f64>], z: &DMatrix<f64>, ridge: f64, theta: &DMatrix<f64>, b: &DVector<f64>) -> (f64, f64) {
    let n = x.len();
    let d = x[0].dim();
    let xd = DMatrix::from_fn(n, d, |i, j| x[i].to_dense()[j]);
    let xm: DVector<f64> = xd.row_mean().transpose();
    let zm: DVector<f64> = z.row_mean().transpose();
    let xc = DMatrix::from_fn(n, d, |i, j| xd[(i, j)] - xm[j]);
    let zc = DMatrix::from_fn(n, z.ncols(), |i, k| z[(i, k)] - zm[k]);
    let rhs = xc.transpose() * &zc;
    let lhs = (xc.transpose() * &xc + DMatrix::identity(d, d) * ridge) * theta;
    let rel = (lhs - &rhs).norm() / rhs.norm();
    let b_err = (b - (zm - theta.transpose() * xm)).amax();
    (rel, b_err)
}

pub fn check_a3() -> Outcome {
    let mut r = rng(3);
    let solvers = [RidgeSolver::Primal, RidgeSolver::Dual, RidgeSolver::ConjugateGradient, RidgeSolver::Auto];
    let mut worst_rel = 0.0f64;
    let mut worst_b = 0.0f64;
    for inst in 0..20 {
        let c = r.random_range(2..=6);
        let d = r.random_range(5..=40);
        let n = r.random_range(c.max(5)..=60);
        let x = random_documents(&mut r, n, d, 0.3);
        let ds = Dataset { x: x.clone(), y: (0..n).map(|i| i % c).collect(), classes: class_names(c) };
        let ridge = 10f64.powf(r.random_range(-3.0..0.0));
        let config = ManifoldConfig { dim: None, ridge, solver: solvers[inst % 4] };
        let m = ManifoldModel::fit(&ds, d, "fp", &config).unwrap();
        let z = DMatrix::from_fn(n, m.dim(), |i, k| m.mu[(ds.y[i], k)]);
        let (rel, b) = ridge_residuals(&x, &z, ridge, &m.theta, &m.intercept);
        worst_rel = worst_rel.max(rel);
        worst_b = worst_b.max(b);
    }
    let mut worst_interp = 0.0f64;
    for _ in 0..20 {
        let c = r.random_range(2..=8);
        let d = 30;
        let x = random_documents(&mut r, c, d, 0.5);
        let ds = Dataset { x: x.clone(), y: (0..c).collect(), classes: class_names(c) };
        let config = ManifoldConfig { dim: None, ridge: 1e-10, solver: RidgeSolver::Auto };
        let m = ManifoldModel::fit(&ds, d, "fp", &config).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let z = m.project(xi).unwrap();
            worst_interp = worst_interp.max((z.transpose() - m.mu.row(i)).amax());
        }
    }
    Outcome::new(
        worst_rel <= 1e-6 && worst_b <= 1e-9 && worst_interp <= 1e-6,
        format!(
            "normal-equation rel residual {worst_rel:.2e} (tol 1e-6), intercept err {worst_b:.1e}, \
             one-doc-per-class interpolation err {worst_interp:.2e} at ridge 1e-10 (tol 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- classifier

pub fn random_distribution(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random::<f64>().powi(3) + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn random_corpus(r: &mut ChaCha8Rng, c: usize, words: usize, docs_per_class: usize, doc_len: usize) -> (Vec<String>, Vec<ClassSpec>, Corpus) {
    let vocab = word_list("w", words);
    let specs: Vec<ClassSpec> = (0..c)
        .map(|k| ClassSpec { label: format!("k{k}"), distribution: random_distribution(r, words), docs: docs_per_class })
        .collect();
    let corpus = generate_synthetic(&vocab, &specs, doc_len, r.random()).unwrap();
    (vocab, specs, corpus)
}

/// Covariance estimate recomputed from scratch: divide-by-n scatter (pooled
/// or per class), diagonal restriction, shrinkage toward the trace-scaled
/// identity, then `1e-6 * trace / l` on the diagonal.
pub fn reference_covariances(points: &[DVector<f64>], y: &[usize], c: usize, spec: &CovarianceSpec) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let l = points[0].len();
    let means: Vec<DVector<f64>> = (0..c)
        .map(|k| {
            let members: Vec<&DVector<f64>> = points.iter().zip(y).filter(|(_, &yi)| yi == k).map(|(p, _)| p).collect();
            members.iter().fold(DVector::zeros(l), |acc, p| acc + *p) / members.len() as f64
        })
        .collect();
    let scatter = |k: Option<usize>| -> DMatrix<f64> {
        let mut s = DMatrix::zeros(l, l);
        let mut n = 0;
        for (p, &yi) in points.iter().zip(y) {
            if k.is_none_or(|k| k == yi) {
                let d = p - &means[yi];
                s += &d * d.transpose();
                n += 1;
            }
        }
        s / n as f64
    };
    let regularize = |mut s: DMatrix<f64>| -> DMatrix<f64> {
        if spec.structure == Structure::Diagonal {
            s = DMatrix::from_diagonal(&s.diagonal());
        }
        let t = s.trace();
        let target = if spec.normalize_trace { t / l as f64 } else { t };
        let eps = spec.epsilon.unwrap_or(1e-6 * t / l as f64);
        s * (1.0 - spec.lambda) + DMatrix::identity(l, l) * (spec.lambda * target + eps)
    };
    let covs = match spec.pooling {
        Pooling::Pooled => vec![regularize(scatter(None)); c],
        Pooling::PerClass => (0..c).map(|k| regularize(scatter(Some(k)))).collect(),
    };
    (means, covs)
}

/// Log density through the explicit inverse and determinant.
pub fn brute_log_normal(z: &DVector<f64>, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let l = z.len() as f64;
    let inv = s.clone().try_inverse().unwrap();
    let d = z - m;
    -0.5 * (l * (2.0 * PI).ln() + s.determinant().ln() + (d.transpose() * inv * &d)[(0, 0)])
}

pub fn brute_predict(z: &DVector<f64>, priors: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> usize {
    let scores: Vec<f64> = (0..priors.len()).map(|k| priors[k].ln() + brute_log_normal(z, &means[k], &covs[k])).collect();
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    best
}

pub const COVARIANCE_CONFIGS: [(Structure, Pooling); 4] = [
    (Structure::Diagonal, Pooling::Pooled),
    (Structure::Full, Pooling::Pooled),
    (Structure::Diagonal, Pooling::PerClass),
    (Structure::Full, Pooling::PerClass),
];

/// Returns (predictions checked, disagreements, max covariance error).
pub fn classifier_oracle_instance(seed: u64) -> (usize, usize, f64) {
    let mut r = rng(seed);
    let c = r.random_range(2..=5);
    let words = r.random_range(12..=30);
    let per_class = r.random_range(8..=200 / c);
    let (vocab, specs, corpus) = random_corpus(&mut r, c, words, per_class, 15);
    let featurizer = Featurizer::fit(&corpus, Tokenizer::default(), 1, Normalize::L1).unwrap();
    let ds = featurizer.dataset::<f64>(&corpus).unwrap();
    let probe_specs: Vec<ClassSpec> = specs.iter().map(|s| ClassSpec { docs: 10, ..s.clone() }).collect();
    let probe = generate_synthetic(&vocab, &probe_specs, 15, r.random()).unwrap();
    let mut queries = featurizer.vectorize_all::<f64>(&probe);
    queries.extend(ds.x.iter().cloned());
    let l = r.random_range(1..=(c - 1).min(4));
    let config = ManifoldConfig { dim: Some(l), ..ManifoldConfig::default() };
    let counts = ds.class_counts();
    let priors: Vec<f64> = counts.iter().map(|&k| k as f64 / ds.len() as f64).collect();
    let (mut checked, mut wrong, mut cov_err) = (0, 0, 0.0f64);
    for (structure, pooling) in COVARIANCE_CONFIGS {
        let spec = CovarianceSpec { structure, pooling, lambda: r.random_range(0.0..0.5), epsilon: None, normalize_trace: false };
        let clf = EmotionClassifier::fit(&ds, featurizer.dim(), &featurizer.fingerprint(), &config, &spec).unwrap();
        let points: Vec<DVector<f64>> = ds.x.iter().map(|x| clf.manifold.project(x).unwrap()).collect();
        let (means, covs) = reference_covariances(&points, &ds.y, c, &spec);
        for k in 0..c {
            let g = clf.gaussians.gaussian(k);
            cov_err = cov_err.max((g.cov() - &covs[k]).amax()).max((g.mean() - &means[k]).amax());
        }
        for q in &queries {
            let z = clf.manifold.project(q).unwrap();
            checked += 1;
            if clf.predict_index(q).unwrap() != brute_predict(&z, &priors, &means, &covs) {
                wrong += 1;
            }
        }
    }
    (checked, wrong, cov_err)
}

pub fn check_a4() -> Outcome {
    let (mut checked, mut wrong, mut cov_err) = (0, 0, 0.0f64);
    for seed in 0..10 {
        let (c, w, e) = classifier_oracle_instance(400 + seed);
        checked += c;
        wrong += w;
        cov_err = cov_err.max(e);
    }
    Outcome::new(
        wrong == 0 && cov_err <= 1e-10,
        format!("{wrong} disagreements in {checked} predictions over 10 instances x 4 covariance configs; parameter err {cov_err:.1e}"),
    )
}

// ---------------------------------------------------------------- experiment

pub fn super_topic_corpus(seed: u64) -> Corpus {
    let layout = SuperTopicLayout {
        topics: 4,
        classes_per_topic: 3,
        shared_fraction: 0.8,
        topic_words: 60,
        class_words: 600,
        background_words: 200,
        background_fraction: 0.2,
    };
    let (vocab, specs) = layout.build(80);
    generate_synthetic(&vocab, &specs, 20, seed).unwrap()
}

pub fn check_a5() -> Outcome {
    let corpus = super_topic_corpus(0);
    let config = ExperimentConfig {
        seed: 0,
        trials: 10,
        train_fraction: 0.5,
        methods: vec![Method::LdaFull, Method::LdaDiag, Method::Logreg],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&corpus, &config).unwrap();
    let train = report.trials[0].train_size / 12;
    let logreg = report.summary_for(Method::Logreg).unwrap().mean_macro_f1;
    let mut parts = Vec::new();
    let mut pass = false;
    for m in [Method::LdaFull, Method::LdaDiag] {
        let s = report.summary_for(m).unwrap();
        let t = s.vs_logreg_macro_f1.unwrap();
        pass |= s.mean_macro_f1 > logreg && t.p < 0.05;
        parts.push(format!("{} {:.4} (p {:.1e})", m.name(), s.mean_macro_f1, t.p));
    }
    Outcome::new(
        pass && train == 40,
        format!("macro-F1 logreg {logreg:.4} vs {}; {train} train docs/class, 10 trials", parts.join(", ")),
    )
}

pub const A6_SEEDS: u64 = 10;

/// Mean manifold and ridge L1 per training size, averaged over seeds.
pub fn rating_curve_over_seeds(seeds: u64, repeats: usize, sizes: &[usize]) -> Vec<(usize, f64, f64)> {
    let mut acc = vec![(0.0, 0.0); sizes.len()];
    for s in 0..seeds {
        let world = LatentWorld::new(8, 144, s);
        let emotions = world.emotion_corpus(100, 30, s + 1000).unwrap();
        let ratings = world.rating_corpus(&ReviewDomain::default(), 600, 30, s + 2000).unwrap();
        let config = RatingCurveConfig { seed: s, repeats, train_sizes: sizes.to_vec(), ..RatingCurveConfig::default() };
        for (k, p) in rating_learning_curve(&emotions, &ratings, &config).unwrap().iter().enumerate() {
            acc[k].0 += p.mean_manifold_l1 / seeds as f64;
            acc[k].1 += p.mean_baseline_l1 / seeds as f64;
        }
    }
    sizes.iter().zip(acc).map(|(&n, (m, b))| (n, m, b)).collect()
}

pub fn check_a6() -> Outcome {
    let curve = rating_curve_over_seeds(A6_SEEDS, 5, &[50, 100, 2000]);
    let gap = |k: usize| curve[k].2 - curve[k].1;
    let small = gap(0) > 0.0 && gap(1) > 0.0;
    let shrinks = gap(2) < gap(1);
    let shown: Vec<String> = curve.iter().map(|(n, m, b)| format!("n={n}: manifold {m:.3} ridge {b:.3}")).collect();
    Outcome::new(
        small && shrinks,
        format!("mean L1 over {A6_SEEDS} seeds: {}; manifold ahead at n<=100: {small}, gap shrinks by 2000: {shrinks}", shown.join(", ")),
    )
}

// ---------------------------------------------------------------- clustering

#[derive(Debug, Clone, PartialEq)]
pub struct RefMerge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Cluster name: smallest `(label, leaf index)` among its members.
fn name<'a>(labels: &'a [String], members: &[usize]) -> (&'a str, usize) {
    members.iter().map(|&i| (labels[i].as_str(), i)).min().unwrap()
}

/// Height, both names (smaller first) and both slots of a candidate merge.
type Candidate<'a> = (f64, (&'a str, usize), (&'a str, usize), usize, usize);

/// Complete linkage by exhaustive search over all cluster pairs, recomputing
/// every cluster distance from the member distances each round.
pub fn naive_complete_linkage(labels: &[String], d: &DMatrix<f64>) -> Vec<RefMerge> {
    let n = labels.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<Candidate> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let mut dist = f64::NEG_INFINITY;
                for &i in &clusters[p].1 {
                    for &j in &clusters[q].1 {
                        dist = dist.max(d[(i, j)]);
                    }
                }
                let (np, nq) = (name(labels, &clusters[p].1), name(labels, &clusters[q].1));
                let (lo, hi, lo_idx, hi_idx) = if np < nq { (np, nq, p, q) } else { (nq, np, q, p) };
                let better = match &best {
                    None => true,
                    Some((bd, blo, bhi, _, _)) => dist < *bd || (dist == *bd && (lo, hi) < (*blo, *bhi)),
                };
                if better {
                    best = Some((dist, lo, hi, lo_idx, hi_idx));
                }
            }
        }
        let (height, _, _, a, b) = best.unwrap();
        let (id_a, mut ma) = clusters[a].clone();
        let (id_b, mb) = clusters[b].clone();
        ma.extend(mb);
        merges.push(RefMerge { a: id_a, b: id_b, height, size: ma.len() });
        let new = (n + merges.len() - 1, ma);
        clusters.retain(|(id, _)| *id != id_a && *id != id_b);
        clusters.push(new);
    }
    merges
}

/// Cluster ids after applying the first `n - k` reference merges, numbered by
/// each cluster's name.
pub fn naive_cut(labels: &[String], merges: &[RefMerge], k: usize) -> Vec<usize> {
    let n = labels.len();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive: Vec<usize> = (0..n).collect();
    for m in &merges[..n - k] {
        let mut joined = members[m.a].clone();
        joined.extend(members[m.b].iter().copied());
        members.push(joined);
        alive.retain(|&c| c != m.a && c != m.b);
        alive.push(members.len() - 1);
    }
    alive.sort_by_key(|&c| name(labels, &members[c]));
    let mut out = vec![0; n];
    for (id, &c) in alive.iter().enumerate() {
        for &leaf in &members[c] {
            out[leaf] = id;
        }
    }
    out
}

pub fn random_distance_matrix(r: &mut ChaCha8Rng, n: usize, integer: bool) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = if integer { r.random_range(1..=3) as f64 } else { r.random_range(0.01..1.0) };
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn random_labels(r: &mut ChaCha8Rng, n: usize, duplicates: bool) -> Vec<String> {
    let mut labels: Vec<String> = if duplicates {
        (0..n).map(|_| format!("x{}", r.random_range(0..n / 2 + 1))).collect()
    } else {
        (0..n).map(|i| format!("x{i}")).collect()
    };
    labels.shuffle(r);
    labels
}

/// Returns (instances, mismatching instances, tie instances).
pub fn linkage_oracle(instances: usize, seed: u64) -> (usize, usize, usize) {
    let mut r = rng(seed);
    let (mut bad, mut ties) = (0, 0);
    for inst in 0..instances {
        let n = r.random_range(2..=8);
        let integer = inst % 2 == 1;
        let labels = random_labels(&mut r, n, inst % 5 == 4);
        let d = random_distance_matrix(&mut r, n, integer);
        let reference = naive_complete_linkage(&labels, &d);
        let tree = linkage_complete(&labels, &d).unwrap();
        let got: Vec<RefMerge> = tree.merges.iter().map(|m| RefMerge { a: m.a, b: m.b, height: m.height, size: m.size }).collect();
        let cuts_ok = (1..=n).all(|k| tree.cut(k).unwrap() == naive_cut(&labels, &reference, k));
        if got != reference || !cuts_ok {
            bad += 1;
        }
        let mut off: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| d[(i, j)]).collect();
        off.sort_by(f64::total_cmp);
        if off.windows(2).any(|w| w[0] == w[1]) {
            ties += 1;
        }
    }
    (instances, bad, ties)
}

pub fn check_a7() -> Outcome {
    let (n, bad, ties) = linkage_oracle(200, 7);
    Outcome::new(
        bad == 0 && ties > 0,
        format!("{bad} of {n} dendrograms or cuts differ from the exhaustive reference ({ties} instances with tied distances)"),
    )
}

pub fn planted_pairs_corpus(seed: u64) -> Corpus {
    let layout = PlantedPairs {
        pairs: 4,
        pair_words: 20,
        private_words: 5,
        twin_fraction: 0.1,
        shared_words: 50,
        shared_fraction: 0.3,
    };
    let (vocab, specs) = layout.build(50);
    generate_synthetic(&vocab, &specs, 30, seed).unwrap()
}

/// True when the first `pairs` merges each join the two twins of one pair.
pub fn pairs_merge_first(seed: u64) -> bool {
    let corpus = planted_pairs_corpus(seed);
    let featurizer = Featurizer::fit(&corpus, Tokenizer::default(), 1, Normalize::L1).unwrap();
    let ds = featurizer.dataset::<f64>(&corpus).unwrap();
    let clf = EmotionClassifier::fit(&ds, featurizer.dim(), &featurizer.fingerprint(), &ManifoldConfig::default(), &CovarianceSpec::default()).unwrap();
    let d = clf.gaussians.distance_matrix(DistanceKind::Bhattacharyya).unwrap();
    let labels = clf.gaussians.labels.clone();
    let tree = linkage_complete(&labels, &d).unwrap();
    let n = labels.len();
    tree.merges[..n / 2].iter().all(|m| {
        m.a < n && m.b < n && labels[m.a][..labels[m.a].len() - 1] == labels[m.b][..labels[m.b].len() - 1]
    })
}

pub fn check_a8() -> Outcome {
    let ok = (0..10).filter(|&s| pairs_merge_first(s)).count();
    Outcome::new(ok == 10, format!("planted pairs merge before any cross-pair merge in {ok}/10 seeds"))
}

// ---------------------------------------------------------------- tessellation

/// Real roots of `log N(x; m1, v1) = log N(x; m2, v2)`.
pub fn boundary_roots_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Vec<f64> {
    let a = 1.0 / v1 - 1.0 / v2;
    let b = -2.0 * (m1 / v1 - m2 / v2);
    let c = m1 * m1 / v1 - m2 * m2 / v2 + (v1 / v2).ln();
    if a.abs() < 1e-15 {
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let s = disc.sqrt();
    let mut r = vec![(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)];
    r.sort_by(f64::total_cmp);
    r
}

fn two_class_model(means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> GaussianClassModel<f64> {
    GaussianClassModel::from_parts(
        vec!["a".into(), "b".into()],
        means,
        covs,
        vec![0.5, 0.5],
        vec![1, 1],
        CovarianceSpec::new(Structure::Full, Pooling::PerClass),
    )
    .unwrap()
}

/// Largest distance, in cells, from a label change to the analytic boundary,
/// and from an in-range boundary root to a label change.
pub fn voronoi_1d_error(m1: f64, v1: f64, m2: f64, v2: f64, bounds: (f64, f64), res: usize) -> f64 {
    let model = two_class_model(
        vec![DVector::from_element(1, m1), DVector::from_element(1, m2)],
        vec![DMatrix::from_element(1, 1, v1), DMatrix::from_element(1, 1, v2)],
    );
    let line = voronoi_line(&model, 0, bounds, res).unwrap();
    let w = (bounds.1 - bounds.0) / res as f64;
    let roots: Vec<f64> = boundary_roots_1d(m1, v1, m2, v2).into_iter().filter(|r| *r > bounds.0 && *r < bounds.1).collect();
    let changes: Vec<f64> = line.windows(2).filter(|p| p[0].1 != p[1].1).map(|p| 0.5 * (p[0].0 + p[1].0)).collect();
    let nearest = |x: f64, set: &[f64]| set.iter().map(|s| (s - x).abs()).fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    for &c in &changes {
        worst = worst.max(nearest(c, &roots) / w);
    }
    for &r in &roots {
        worst = worst.max(nearest(r, &changes) / w);
    }
    worst
}

/// Fraction of cells whose label disagrees with the analytic discriminant
/// although no boundary passes within one cell, and whether any boundary
/// is visible at all.
pub fn voronoi_2d_check(m1: [f64; 2], s1: Mat2, m2: [f64; 2], s2: Mat2, bounds: [(f64, f64); 2], res: usize) -> (usize, bool) {
    let model = two_class_model(
        vec![DVector::from_column_slice(&m1), DVector::from_column_slice(&m2)],
        vec![DMatrix::from_fn(2, 2, |i, j| s1[i][j]), DMatrix::from_fn(2, 2, |i, j| s2[i][j])],
    );
    let grid = voronoi_grid(&model, (0, 1), bounds, res).unwrap();
    let g = |x: f64, y: f64| gauss2_logpdf(m1, s1, [x, y]) - gauss2_logpdf(m2, s2, [x, y]);
    let (wx, wy) = ((bounds[0].1 - bounds[0].0) / res as f64, (bounds[1].1 - bounds[1].0) / res as f64);
    let mut far_mismatch = 0;
    let mut seen = [false; 2];
    for j in 0..res {
        for i in 0..res {
            let (x, y) = grid.cell_center(i, j);
            let label = grid.label_at(i, j);
            seen[label] = true;
            let analytic = if g(x, y) >= 0.0 { 0 } else { 1 };
            if label != analytic {
                let vals: Vec<f64> = (-1..=1)
                    .flat_map(|a| (-1..=1).map(move |b| (a, b)))
                    .map(|(a, b)| g(x + a as f64 * wx, y + b as f64 * wy))
                    .collect();
                let straddles = vals.iter().any(|&v| v >= 0.0) && vals.iter().any(|&v| v < 0.0);
                if !straddles {
                    far_mismatch += 1;
                }
            }
        }
    }
    (far_mismatch, seen[0] && seen[1])
}

pub fn check_a9() -> Outcome {
    let cases_1d = [(0.0, 1.0, 1.5, 4.0), (-1.0, 0.25, 1.0, 2.25), (0.0, 1.0, 0.0, 9.0), (2.0, 3.0, -0.5, 0.5)];
    let worst_1d = cases_1d
        .iter()
        .map(|&(m1, v1, m2, v2)| voronoi_1d_error(m1, v1, m2, v2, (-6.0, 6.0), 200))
        .fold(0.0f64, f64::max);
    let mut r = rng(9);
    let mut far = 0;
    let mut all_visible = true;
    for _ in 0..6 {
        let m1 = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let m2 = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let (f, visible) = voronoi_2d_check(m1, random_spd2(&mut r), m2, random_spd2(&mut r), [(-4.0, 4.0), (-4.0, 4.0)], 200);
        far += f;
        all_visible &= visible;
    }
    Outcome::new(
        worst_1d <= 1.0 && far == 0 && all_visible,
        format!("1D boundary offset max {worst_1d:.2} cells (tol 1); 2D cells off the analytic conic by more than one cell: {far}"),
    )
}

// ---------------------------------------------------------------- metrics

/// Rows are truths, columns predictions:
/// a: [3 1 0], b: [0 3 1], c: [1 0 1], d: [0 0 0].
/// F1 = 2TP / (2TP + FP + FN): a 6/8, b 6/8, c 2/4, d 0 (absent).
pub fn hand_confusion() -> ConfusionMatrix {
    ConfusionMatrix {
        labels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        counts: vec![vec![3, 1, 0, 0], vec![0, 3, 1, 0], vec![1, 0, 1, 0], vec![0, 0, 0, 0]],
    }
}

/// Two-sided p-value of a paired t statistic through the regularized
/// incomplete beta function of statrs.
pub fn reference_paired_p(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    (t, statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t * t)))
}

pub fn check_a10() -> Outcome {
    let m = metrics(&hand_confusion()).unwrap();
    let exact = m.accuracy == 7.0 / 10.0
        && m.per_class_f1 == vec![0.75, 0.75, 0.5, 0.0]
        && m.macro_f1 == 2.0 / 4.0
        && m.macro_f1_truth == 2.0 / 3.0;
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(2..=30);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + r.random_range(-0.3..0.35)).collect();
        let (t_ref, p_ref) = reference_paired_p(&a, &b);
        let t = paired_t_test(&a, &b, 0.05).unwrap();
        worst = worst.max((t.p - p_ref).abs()).max((t.t - t_ref).abs() / t_ref.abs().max(1.0));
    }
    let same: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let identical = paired_t_test(&same, &same, 0.05).unwrap();
    Outcome::new(
        exact && worst <= 1e-10 && identical.p == 1.0,
        format!("hand-computed metrics exact: {exact}; max p-value err {worst:.1e} over 50 samples (tol 1e-10); identical inputs p = {}", identical.p),
    )
}

// ---------------------------------------------------------------- CLI

pub fn moodmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodmap"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub const PIPELINE: &[&[&str]] = &[
    &["--seed", "7", "synth", "--out", "emo.jsonl", "--layout", "topics", "--classes", "6", "--topics", "2", "--docs", "240"],
    &["--seed", "7", "synth", "--out", "ratings.jsonl", "--kind", "rating", "--docs", "300"],
    &["--seed", "7", "fit-manifold", "--input", "emo.jsonl", "--out", "manifold.json"],
    &["--seed", "7", "fit-classifier", "--input", "emo.jsonl", "--manifold", "manifold.json", "--out", "clf.json"],
    &["--seed", "7", "fit-classifier", "--input", "emo.jsonl", "--method", "logreg", "--out", "logreg.json"],
    &["predict", "--model", "clf.json", "--input", "emo.jsonl", "--out", "pred.jsonl"],
    &["distances", "--model", "clf.json", "--out", "dist.csv"],
    &["cluster", "--distances", "dist.csv", "--newick", "tree.nwk", "--k", "2", "--assignments", "clusters.csv"],
    &["voronoi", "--model", "clf.json", "--resolution", "40", "--out", "voronoi.csv"],
    &["--seed", "7", "fit-sentiment", "--model", "manifold.json", "--input", "ratings.jsonl", "--out", "sentiment.json"],
    &["predict-rating", "--model", "sentiment.json", "--input", "ratings.jsonl", "--out", "ratings-pred.jsonl"],
    &["--seed", "7", "eval", "--input", "emo.jsonl", "--trials", "3", "--out", "report.json"],
];

/// Runs the pipeline in `dir`; returns the stdout of every step.
pub fn run_pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let mut outs = Vec::new();
    for args in PIPELINE {
        let o = moodmap(dir, args);
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        outs.push(o.stdout);
    }
    Ok(outs)
}

/// Sorted `(file name, bytes)` of every file in `dir`.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

pub fn check_a11() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (r1, r2) = match (run_pipeline(d1.path()), run_pipeline(d2.path())) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("pipeline failed: {e}")),
    };
    let (s1, s2) = (snapshot(d1.path()), snapshot(d2.path()));
    let differing: Vec<&str> = s1.iter().zip(&s2).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    Outcome::new(
        r1 == r2 && s1.len() == s2.len() && differing.is_empty(),
        format!("{} steps, {} files compared; differing files: {:?}; stdout identical: {}", PIPELINE.len(), s1.len(), differing, r1 == r2),
    )
}
