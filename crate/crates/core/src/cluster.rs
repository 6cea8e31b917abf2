//! Complete-linkage clustering of emotions and likelihood tessellations of
//! the manifold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianClassModel;
use crate::scalar::Real;

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `k` has id `n + k`. `a` holds the cluster with the smaller lowest label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    pub a: usize,
    pub b: usize,
    pub height: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram<T> {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge<T>>,
}

fn validate<T: Real>(d: &DMatrix<T>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::InvalidArgument("distance matrix must be square".into()));
    }
    for i in 0..n {
        if d[(i, i)] != T::zero() {
            return Err(Error::InvalidArgument(format!("non-zero diagonal at {i}")));
        }
        for j in 0..n {
            if !d[(i, j)].is_finite() {
                return Err(Error::NonFinite("distance matrix".into()));
            }
            if d[(i, j)] != d[(j, i)] {
                return Err(Error::InvalidArgument(format!("asymmetric entry ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Agglomerative clustering where the distance between two clusters is the
/// largest member-to-member distance.
///
/// Each cluster is named by its lexicographically smallest member label.
/// Ties at the minimum distance go to the pair whose two names, smaller
/// first, compare lowest; equal labels fall back to leaf index.
pub fn linkage_complete<T: Real>(labels: &[String], d: &DMatrix<T>) -> Result<Dendrogram<T>> {
    validate(d)?;
    let n = d.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no items to cluster".into()));
    }
    let rank = label_ranks(labels);
    // active clusters: (id, smallest member rank, size)
    let mut active: Vec<(usize, usize, usize)> = (0..n).map(|i| (i, rank[i], 1)).collect();
    let mut dist = d.clone();
    let mut slot_of: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(T, usize, usize)> = None;
        for p in 0..active.len() {
            for q in p + 1..active.len() {
                let (sp, sq) = (slot_of[p], slot_of[q]);
                let h = dist[(sp, sq)];
                let key = |a: usize, b: usize| {
                    let (la, lb) = (active[a].1, active[b].1);
                    (la.min(lb), la.max(lb))
                };
                let better = match best {
                    None => true,
                    Some((bh, bp, bq)) => h < bh || (h == bh && key(p, q) < key(bp, bq)),
                };
                if better {
                    best = Some((h, p, q));
                }
            }
        }
        let (h, p, q) = best.expect("at least two active clusters");
        let (cp, cq) = (active[p], active[q]);
        let (first, second) = if cp.1 < cq.1 { (cp, cq) } else { (cq, cp) };
        merges.push(Merge {
            a: first.0,
            b: second.0,
            height: h,
            size: cp.2 + cq.2,
        });
        // complete linkage update into p's slot
        let (sp, sq) = (slot_of[p], slot_of[q]);
        for (r, &sr) in slot_of.iter().enumerate() {
            if r == p || r == q {
                continue;
            }
            let m = dist[(sp, sr)].max(dist[(sq, sr)]);
            dist[(sp, sr)] = m;
            dist[(sr, sp)] = m;
        }
        active[p] = (n + step, cp.1.min(cq.1), cp.2 + cq.2);
        active.remove(q);
        slot_of.remove(q);
    }
    Ok(Dendrogram {
        leaves: labels.to_vec(),
        merges,
    })
}

fn label_ranks(labels: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]).then(a.cmp(&b)));
    let mut rank = vec![0; labels.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

impl<T: Real> Dendrogram<T> {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf indices under cluster `id`, ascending.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            if c < n {
                out.push(c);
            } else {
                let m = &self.merges[c - n];
                stack.push(m.a);
                stack.push(m.b);
            }
        }
        out.sort_unstable();
        out
    }

    /// Cluster id per leaf after undoing the last `k - 1` merges. Ids are
    /// `0..k`, numbered in order of each cluster's smallest member label.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves();
        if k < 1 || k > n {
            return Err(Error::InvalidArgument(format!("k = {k} outside [1, {n}]")));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        for m in &self.merges[..n - k] {
            let ra = find(&mut parent, self.members(m.a)[0]);
            let rb = find(&mut parent, self.members(m.b)[0]);
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
        let rank = label_ranks(&self.leaves);
        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.sort_by_key(|&i| rank[i]);
        let mut id_of_root = vec![usize::MAX; n];
        let mut next = 0;
        let mut out = vec![0; n];
        for leaf in by_rank {
            let r = find(&mut parent, leaf);
            if id_of_root[r] == usize::MAX {
                id_of_root[r] = next;
                next += 1;
            }
            out[leaf] = id_of_root[r];
        }
        Ok(out)
    }

    /// Newick string with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let n = self.n_leaves();
        if n == 1 {
            return format!("{};", newick_label(&self.leaves[0]));
        }
        let height = |id: usize| -> T {
            if id < n {
                T::zero()
            } else {
                self.merges[id - n].height
            }
        };
        fn render<T: Real>(d: &Dendrogram<T>, id: usize, height: &dyn Fn(usize) -> T, out: &mut String) {
            let n = d.n_leaves();
            if id < n {
                out.push_str(&newick_label(&d.leaves[id]));
                return;
            }
            let m = &d.merges[id - n];
            out.push('(');
            for (i, child) in [m.a, m.b].into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                render(d, child, height, out);
                out.push_str(&format!(":{}", (m.height - height(child)).as_f64()));
            }
            out.push(')');
        }
        let mut out = String::new();
        render(self, n + self.merges.len() - 1, &height, &mut out);
        out.push(';');
        out
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

/// Class labels on a regular grid over two manifold axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiGrid<T> {
    pub axes: (usize, usize),
    pub bounds: [(T, T); 2],
    pub resolution: usize,
    /// Row-major by the second axis: `cells[j * resolution + i]` is the cell
    /// at column `i` of the first axis and row `j` of the second.
    pub cells: Vec<usize>,
}

impl<T: Real> VoronoiGrid<T> {
    pub fn cell_center(&self, i: usize, j: usize) -> (T, T) {
        (
            cell_center(self.bounds[0], self.resolution, i),
            cell_center(self.bounds[1], self.resolution, j),
        )
    }

    pub fn label_at(&self, i: usize, j: usize) -> usize {
        self.cells[j * self.resolution + i]
    }
}

fn cell_center<T: Real>((lo, hi): (T, T), res: usize, i: usize) -> T {
    lo + (hi - lo) * (T::from_count(i) + T::lit(0.5)) / T::from_count(res)
}

fn check_bounds<T: Real>(b: (T, T)) -> Result<()> {
    if !(b.0.is_finite() && b.1.is_finite() && b.0 < b.1) {
        return Err(Error::InvalidArgument("degenerate grid bounds".into()));
    }
    Ok(())
}

/// `argmax_y p(z | Y = y)` without priors; ties to the smaller class index.
fn likelihood_argmax<T: Real>(model: &GaussianClassModel<T>, z: &DVector<T>) -> Result<usize> {
    let mut best = 0;
    let mut best_v = model.log_density(0, z)?;
    for y in 1..model.n_classes() {
        let v = model.log_density(y, z)?;
        if v > best_v {
            best = y;
            best_v = v;
        }
    }
    Ok(best)
}

/// Evaluates the likelihood argmax at cell centres of a `resolution^2` grid
/// over `axes`, holding every other coordinate at 0.
pub fn voronoi_grid<T: Real>(
    model: &GaussianClassModel<T>,
    axes: (usize, usize),
    bounds: [(T, T); 2],
    resolution: usize,
) -> Result<VoronoiGrid<T>> {
    let l = model.dim();
    if l < 2 {
        return Err(Error::InvalidArgument("tessellation needs a manifold of dimension >= 2".into()));
    }
    if axes.0 >= l || axes.1 >= l || axes.0 == axes.1 {
        return Err(Error::InvalidArgument(format!("invalid axes {axes:?} for dimension {l}")));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    check_bounds(bounds[0])?;
    check_bounds(bounds[1])?;
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % resolution, k / resolution);
            let mut z = DVector::zeros(l);
            z[axes.0] = cell_center(bounds[0], resolution, i);
            z[axes.1] = cell_center(bounds[1], resolution, j);
            likelihood_argmax(model, &z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoronoiGrid {
        axes,
        bounds,
        resolution,
        cells,
    })
}

/// One-dimensional variant along `axis`; returns `(centre, label)` per cell.
pub fn voronoi_line<T: Real>(
    model: &GaussianClassModel<T>,
    axis: usize,
    bounds: (T, T),
    resolution: usize,
) -> Result<Vec<(T, usize)>> {
    let l = model.dim();
    if axis >= l {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    check_bounds(bounds)?;
    (0..resolution)
        .map(|i| {
            let x = cell_center(bounds, resolution, i);
            let mut z = DVector::zeros(l);
            z[axis] = x;
            likelihood_argmax(model, &z).map(|y| (x, y))
        })
        .collect()
}
