//! Normalized-cut segmentation of a pixel affinity matrix.
//!
//! The affinity `S` is turned into the symmetric normalized Laplacian
//! `L = I - D^{-1/2} S D^{-1/2}`; the eigenvectors belonging to its `k`
//! smallest eigenvalues embed every pixel in `R^k`, rows are projected onto
//! the unit sphere, and seeded k-means groups them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::aggregate::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Grid, Map2};

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_TOLERANCE: f64 = 1e-6;
const EIGEN_MAX_ITERS: usize = 100_000;

/// A hard partition of the pixel grid. Every pixel carries exactly one
/// segment label, so the masks are disjoint and covering by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    pub grid: Grid,
    /// Segment index per pixel in row-major order.
    pub labels: Vec<usize>,
    /// Number of non-empty segments actually produced.
    pub k: usize,
}

impl SegmentSet {
    /// Builds a segment set from arbitrary labels, renumbering them densely
    /// in order of first appearance.
    pub fn from_labels(grid: Grid, labels: &[usize]) -> Result<Self> {
        if labels.len() != grid.0 * grid.1 {
            return Err(Error::Shape(format!("{} labels for grid {grid:?}", labels.len())));
        }
        let mut remap = std::collections::HashMap::new();
        let dense = labels
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Ok(SegmentSet {
            grid,
            labels: dense,
            k: remap.len(),
        })
    }

    pub fn mask(&self, segment: usize) -> Map2 {
        let (h, w) = self.grid;
        Map2::from_shape_fn(
            (h, w),
            |(y, x)| {
                if self.labels[y * w + x] == segment {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn masks(&self) -> Vec<Map2> {
        (0..self.k).map(|s| self.mask(s)).collect()
    }

    pub fn pixels_of(&self, segment: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == segment)
            .map(|(p, _)| p)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Segments `grid` into at most `k` regions. Clusters that come out empty are
/// dropped; the realized count is `SegmentSet::k`.
pub fn spectral_segment(sim: &SimilarityMatrix, grid: Grid, k: usize, seed: u64) -> Result<SegmentSet> {
    let n = sim.side();
    if n != grid.0 * grid.1 {
        return Err(Error::Shape(format!(
            "similarity side {n} does not match grid {grid:?}"
        )));
    }
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 segments, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("{k} segments requested for {n} pixels")));
    }

    let embedding = spectral_embedding(sim, k)?;
    let labels = kmeans(&embedding, n, k, seed);
    SegmentSet::from_labels(grid, &labels)
}

/// Row-normalized eigenvectors of the `k` smallest Laplacian eigenvalues,
/// as an `n x k` row-major buffer.
fn spectral_embedding(sim: &SimilarityMatrix, k: usize) -> Result<Vec<f64>> {
    let s = sim.matrix();
    let n = s.nrows();
    let inv_sqrt_deg: Vec<f64> = s
        .outer_iter()
        .map(|row| {
            let d: f64 = row.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let norm = inv_sqrt_deg[i] * s[[i, j]] * inv_sqrt_deg[j];
        if i == j {
            1.0 - norm
        } else {
            -norm
        }
    });
    let eig = SymmetricEigen::try_new(lap, f64::EPSILON, EIGEN_MAX_ITERS).ok_or(Error::EigenNoConvergence(n))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let mut emb = vec![0.0; n * k];
    for (c, &col) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(col);
        // fix the sign so the embedding does not depend on solver whims
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            emb[i * k + c] = sign * v[i];
        }
    }
    for row in emb.chunks_mut(k) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(emb)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns a cluster per point;
/// nearest-center ties go to the lower cluster index.
fn kmeans(points: &[f64], n: usize, k: usize, seed: u64) -> Vec<usize> {
    let dim = points.len() / n;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // rounding can walk past the last positive weight
            if d2[chosen] == 0.0 {
                chosen = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centers[start..start + dim]));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, label) in labels.iter_mut().enumerate() {
            let p = point(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(p, &centers[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            *label = best.0;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let center = &mut centers[c * dim..(c + 1) * dim];
            let mut moved = 0.0;
            for (x, s) in center.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let nx = s / counts[c] as f64;
                moved += (nx - *x) * (nx - *x);
                *x = nx;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    labels
}
