//! Lloyd's k-means with uniform random initialisation.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{sq_dist, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Seed each round's clustering with the previous round's centroids.
    pub warm_start: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { max_iter: 100, tol: 1e-6, restarts: 1, warm_start: false }
    }
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix, out: &mut [usize]) {
    for (i, p) in points.iter_rows().enumerate() {
        out[i] = nearest(p, centroids).0;
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &Matrix, centroids: &Matrix, assignments: &mut [usize]) {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (i, p) in points.iter_rows().enumerate() {
            let from = assignments[i];
            if sizes[from] <= 1 {
                continue;
            }
            let d = sq_dist(p, centroids.row(from));
            if pick.map_or(true, |(_, best)| d > best) {
                pick = Some((i, d));
            }
        }
        if let Some((i, _)) = pick {
            sizes[assignments[i]] -= 1;
            assignments[i] = c;
            sizes[c] += 1;
        }
    }
}

fn update(points: &Matrix, assignments: &[usize], previous: &Matrix) -> Matrix {
    let k = previous.rows();
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter_rows().zip(assignments) {
        for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
            *s += v;
        }
        counts[a] += 1;
    }
    for c in 0..k {
        let n = counts[c];
        let row = sums.row_mut(c);
        if n == 0 {
            row.copy_from_slice(previous.row(c));
        } else {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn inertia(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

/// Lloyd iterations from the given initial centroids.
pub fn kmeans_with_init(points: &Matrix, init: Matrix, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    if points.rows() == 0 {
        return Err(Error::Empty("k-means points"));
    }
    if init.rows() == 0 || init.cols() != points.cols() {
        return Err(Error::shape("initial centroids do not match the points"));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("tol must be non-negative"));
    }
    let mut centroids = init;
    let mut assignments = vec![0usize; points.rows()];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter {
        assign(points, &centroids, &mut assignments);
        repair_empty(points, &centroids, &mut assignments);
        let next = update(points, &assignments, &centroids);
        let shift = next
            .iter_rows()
            .zip(centroids.iter_rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations = it;
        if shift <= tol {
            converged = true;
            break;
        }
    }
    assign(points, &centroids, &mut assignments);
    let inertia = inertia(points, &centroids, &assignments);
    Ok(KMeansResult { centroids, assignments, inertia, iterations, converged })
}

/// k-means with `k` distinct points sampled uniformly as the initial centroids.
/// With fewer points than `k`, every point becomes its own centroid.
pub fn kmeans(points: &Matrix, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Empty("k-means points"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("tol must be non-negative"));
    }
    if n <= k {
        return Ok(KMeansResult {
            centroids: points.clone(),
            assignments: (0..n).collect(),
            inertia: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = seeds::rng(seed);
    let mut picks = index::sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    kmeans_with_init(points, points.select_rows(&picks), max_iter, tol)
}

/// Best (lowest inertia) of `restarts` independent runs.
pub fn kmeans_restarts(
    points: &Matrix,
    k: usize,
    max_iter: usize,
    tol: f64,
    restarts: usize,
    seed: u64,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let res = kmeans(points, k, max_iter, tol, seeds::derive(seed, &[r as u64]))?;
        if best.as_ref().map_or(true, |b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}
