//! Reference-set index: Chebyshev nearest neighbours through a k-d tree and an
//! exhaustive Gaussian-kernel log-density.
//!
//! The kernel is `exp(-|x - z|^2 / (4h))` with normalising constant
//! `(sqrt(2 pi) h)^-F`. Note the `4h`, not the usual `2h^2`.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::matrix::DataMatrix;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl KdTree {
    fn build(points: &[f64], n: usize, f: usize) -> Self {
        let mut tree = KdTree { nodes: Vec::new(), order: (0..n).collect() };
        tree.build_node(points, f, 0, n);
        tree
    }

    fn build_node(&mut self, points: &[f64], f: usize, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut best = (0, 0.0);
        for d in 0..f {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                let v = points[j * f + d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            return id;
        }
        let dim = best.0;
        let mid = start + (end - start) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a * f + dim].total_cmp(&points[b * f + dim]));
        let value = points[self.order[mid] * f + dim];
        let left = self.build_node(points, f, start, mid);
        let right = self.build_node(points, f, mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

/// Index over a complete reference set `Z` with a fixed kernel bandwidth.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    reference: Vec<f64>,
    n: usize,
    f: usize,
    h: f64,
    tree: KdTree,
}

impl NeighborIndex {
    /// Builds the tree once; `z` must hold only finite values (an imputed
    /// matrix is fine, its mask is ignored).
    pub fn build(z: &DataMatrix, h: f64) -> Result<Self> {
        if !z.is_filled() {
            return Err(invalid("reference set has missing entries"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive, got {h}")));
        }
        let (n, f) = (z.n_rows(), z.n_cols());
        let reference = z.values().to_vec();
        let tree = KdTree::build(&reference, n, f);
        Ok(Self { reference, n, f, h, tree })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.f
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.reference[j * self.f..(j + 1) * self.f]
    }

    /// Same tree and reference set, different bandwidth.
    pub fn with_bandwidth(&self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive, got {h}")));
        }
        Ok(Self { h, ..self.clone() })
    }

    /// The `k` reference rows closest to `x` in the max-norm, ordered by
    /// (distance, row index).
    pub fn knn_chebyshev(&self, x: &[f64], k: usize) -> Result<Vec<usize>> {
        Ok(self.knn_with_distances(x, k)?.into_iter().map(|(j, _)| j).collect())
    }

    pub fn knn_with_distances(&self, x: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.n {
            return Err(invalid(format!("asked for {k} neighbours among {} points", self.n)));
        }
        if x.len() != self.f {
            return Err(invalid(format!("query has {} features, index has {}", x.len(), self.f)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("query point must be finite"));
        }
        let mut best: Vec<Candidate> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, x, k, 0.0, &mut best);
        }
        Ok(best.into_iter().map(|c| (c.index, c.dist)).collect())
    }

    fn search(&self, node: usize, x: &[f64], k: usize, bound: f64, best: &mut Vec<Candidate>) {
        if best.len() == k && bound > best[k - 1].dist {
            return;
        }
        match self.tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.tree.order[start..end] {
                    let dist = chebyshev(x, self.point(j));
                    let cand = Candidate { dist, index: j };
                    if best.len() == k && cand.cmp(&best[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = best.partition_point(|c| c.cmp(&cand) == Ordering::Less);
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { dim, value, left, right } => {
                let off = x[dim] - value;
                let (near, far) = if off < 0.0 { (left, right) } else { (right, left) };
                self.search(near, x, k, bound, best);
                self.search(far, x, k, bound.max(off.abs()), best);
            }
        }
    }

    /// `log D(x) = log( (1/N) sum_j (sqrt(2 pi) h)^-F exp(-|x - z_j|^2 / (4h)) )`,
    /// summed over every reference point.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let lse = self.log_kernel_sum(x, None);
        lse - self.log_normalizer()
    }

    /// `ln N + F ln(sqrt(2 pi) h)`.
    pub(crate) fn log_normalizer(&self) -> f64 {
        (self.n as f64).ln() + self.f as f64 * ((2.0 * std::f64::consts::PI).sqrt() * self.h).ln()
    }

    /// Log of `sum_j exp(-|x - z_j|^2 / (4h))`; fills `weights` with the
    /// softmax weights of the same exponents when asked.
    pub(crate) fn log_kernel_sum(&self, x: &[f64], weights: Option<&mut Vec<f64>>) -> f64 {
        let scale = -1.0 / (4.0 * self.h);
        let mut expo = Vec::with_capacity(self.n);
        let mut max = f64::NEG_INFINITY;
        for j in 0..self.n {
            let a = scale * sq_dist(x, self.point(j));
            max = max.max(a);
            expo.push(a);
        }
        let mut sum = 0.0;
        for a in expo.iter_mut() {
            *a = (*a - max).exp();
            sum += *a;
        }
        if let Some(w) = weights {
            w.clear();
            w.extend(expo.iter().map(|e| e / sum));
        }
        max + sum.ln()
    }
}

pub(crate) fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
