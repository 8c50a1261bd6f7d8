//! Seeded k-means: k-means++ initialization followed by Lloyd iterations.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Lloyd iteration cap used by the spectral pipelines.
pub const DEFAULT_MAX_ITER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub seed: u64,
    /// Independent seedings; the lowest-SSE run wins.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            seed,
            restarts: 1,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    /// k×p.
    pub centroids: DMatrix<f64>,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// SSE after every completed Lloyd iteration.
    pub sse_history: Vec<f64>,
}

/// Unit-normalizes every row; all-zero rows pass through unchanged.
pub fn normalize_rows(u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for i in 0..u.nrows() {
        let norm = u.row(i).norm();
        if norm > 0.0 {
            out.row_mut(i).unscale_mut(norm);
        }
    }
    out
}

/// Row-major copy so distance loops run over contiguous memory.
struct Points {
    data: Vec<f64>,
    n: usize,
    p: usize,
}

impl Points {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            data.extend(m.row(i).iter());
        }
        Self { data, n, p }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[f64], p: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(p).enumerate() {
        let d = dist2(x, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, each next one drawn with
/// probability proportional to the squared distance to the closest chosen
/// centroid. Returns the indices of the chosen points.
pub fn kmeans_plus_plus_indices<R: Rng>(
    points: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    seed_indices(&Points::from_matrix(points), k, rng)
}

fn seed_indices<R: Rng>(pts: &Points, k: usize, rng: &mut R) -> Vec<usize> {
    let n = pts.n;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| dist2(pts.row(i), pts.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target ≥ acc; fall back to the last positive weight.
            pick.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // All remaining mass is zero (duplicate points): pick any unchosen index.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, slot) in closest.iter_mut().enumerate() {
            *slot = slot.min(dist2(pts.row(i), pts.row(next)));
        }
    }
    chosen
}

pub fn kmeans(points: &DMatrix<f64>, k: usize, cfg: &KMeansConfig) -> Result<ClusteringResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(invalid(format!("cannot form {k} clusters from {n} points")));
    }
    if cfg.max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(invalid("k-means input has non-finite entries"));
    }
    let pts = Points::from_matrix(points);
    let mut best: Option<ClusteringResult> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[restart as u64]));
        let run = lloyd(&pts, k, cfg.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd<R: Rng>(pts: &Points, k: usize, max_iter: usize, rng: &mut R) -> ClusteringResult {
    let (n, p) = (pts.n, pts.p);
    let mut centroids: Vec<f64> = seed_indices(pts, k, rng)
        .into_iter()
        .flat_map(|i| pts.row(i).to_vec())
        .collect();
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(pts.row(i), &centroids, p);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        repair_empty_clusters(&mut labels, &mut dists, pts, k);
        if !changed && iterations > 1 {
            converged = true;
            history.push(sse(pts, &labels, &centroids));
            break;
        }
        centroids = update_centroids(pts, &labels, &centroids, k);
        history.push(sse(pts, &labels, &centroids));
    }

    let total = *history.last().expect("at least one iteration");
    ClusteringResult {
        labels,
        centroids: DMatrix::from_row_slice(k, p, &centroids),
        sse: total,
        iterations,
        converged,
        sse_history: history,
    }
}

/// Any empty cluster takes over the point farthest from its own centroid.
fn repair_empty_clusters(labels: &mut [usize], dists: &mut [f64], pts: &Points, k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        // Donor must keep at least one member.
        let far = (0..pts.n)
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("k <= n guarantees a donor");
        labels[far] = empty;
        dists[far] = 0.0;
    }
}

fn update_centroids(pts: &Points, labels: &[usize], old: &[f64], k: usize) -> Vec<f64> {
    let p = pts.p;
    let mut sums = vec![0.0; k * p];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums[l * p..(l + 1) * p].iter_mut().zip(pts.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums[c * p..(c + 1) * p].copy_from_slice(&old[c * p..(c + 1) * p]);
        } else {
            sums[c * p..(c + 1) * p]
                .iter_mut()
                .for_each(|s| *s /= counts[c] as f64);
        }
    }
    sums
}

fn sse(pts: &Points, labels: &[usize], centroids: &[f64]) -> f64 {
    let p = pts.p;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| dist2(pts.row(i), &centroids[l * p..(l + 1) * p]))
        .sum()
}

/// Within-cluster SSE of an arbitrary labelling against its own cluster means.
pub fn within_cluster_sse(points: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let pts = Points::from_matrix(points);
    let zeros = vec![0.0; k * pts.p];
    let centroids = update_centroids(&pts, labels, &zeros, k);
    sse(&pts, labels, &centroids)
}
