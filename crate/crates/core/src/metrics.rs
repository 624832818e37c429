//! Evaluation measures: masked RMSE, principal angles, column correlations,
//! edge recovery, k-means and clustering accuracy.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{EdgeSet, Mask, PrecisionGraph};

/// E1–E8 plus clustering accuracy for one fit. Absent entries were not
/// measured for the task at hand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<Vec<f64>>,
    pub e4: Option<Vec<f64>>,
    pub e5: Option<f64>,
    pub e6: Option<f64>,
    pub e7: Option<usize>,
    pub e8: Option<usize>,
    pub clustering_accuracy: Option<f64>,
    /// Noise ratio or keep fraction the metrics were measured at.
    pub level: Option<f64>,
}

/// RMSE over the entries selected by `o`.
pub fn masked_rmse(y: &DMatrix<f64>, recon: &DMatrix<f64>, o: &Mask) -> Result<f64> {
    if y.shape() != recon.shape() || y.shape() != o.shape() {
        return Err(Error::dims(format!(
            "y {:?}, reconstruction {:?}, selection {:?}",
            y.shape(),
            recon.shape(),
            o.shape()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((a, b), &keep) in y.iter().zip(recon.iter()).zip(o.iter()) {
        if keep {
            total += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySelection);
    }
    Ok((total / count as f64).sqrt())
}

/// RMSE over every entry.
pub fn rmse(y: &DMatrix<f64>, recon: &DMatrix<f64>) -> Result<f64> {
    masked_rmse(y, recon, &DMatrix::from_element(y.nrows(), y.ncols(), true))
}

/// Largest principal angle between the column spaces of `m1` and `m2`.
pub fn subspace_angle(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<f64> {
    if m1.nrows() != m2.nrows() {
        return Err(Error::dims(format!("{} rows vs {} rows", m1.nrows(), m2.nrows())));
    }
    let mut q1 = linalg::orthonormal_basis(m1)?;
    let mut q2 = linalg::orthonormal_basis(m2)?;
    if q1.ncols() < q2.ncols() {
        std::mem::swap(&mut q1, &mut q2);
    }
    let cross = q1.transpose() * &q2;
    let residual = &q2 - &q1 * &cross;
    let sin = residual.singular_values().max().min(1.0);
    let cos = cross.singular_values().min().min(1.0);
    Ok(sin.atan2(cos).clamp(0.0, std::f64::consts::FRAC_PI_2))
}

/// Pearson correlation of every column pair `(i, j)`, `i < j`, in
/// lexicographic order.
pub fn column_correlations(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let rows = m.nrows() as f64;
    let centered: Vec<_> = (0..m.ncols())
        .map(|j| {
            let col = m.column(j);
            let mean = col.sum() / rows;
            let c = col.add_scalar(-mean);
            let norm = c.norm();
            let scale = col.amax();
            if !(norm > f64::EPSILON * scale * rows.sqrt()) {
                return Err(Error::ZeroVariance(norm / rows.sqrt()));
            }
            Ok(c / norm)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(m.ncols() * m.ncols().saturating_sub(1) / 2);
    for i in 0..centered.len() {
        for j in (i + 1)..centered.len() {
            out.push(centered[i].dot(&centered[j]).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Number of true edges kept after ranking by `|Θ_true|` (top
/// `ceil(top_fraction · |E|)`) that are also edges of `g_est`.
pub fn edge_recovery<G: EdgeSet>(g_true: &PrecisionGraph, g_est: &G, top_fraction: f64) -> Result<usize> {
    if g_true.dim() != g_est.dim() {
        return Err(Error::dims(format!("graphs over {} and {} nodes", g_true.dim(), g_est.dim())));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::invalid(format!("top fraction {top_fraction} outside (0, 1]")));
    }
    let theta = g_true.theta();
    let mut edges: Vec<(usize, usize)> = g_true.support().iter().copied().collect();
    edges.sort_by(|&(a, b), &(c, d)| theta[(c, d)].abs().total_cmp(&theta[(a, b)].abs()).then((a, b).cmp(&(c, d))));
    let keep = (top_fraction * edges.len() as f64 - 1e-9).ceil() as usize;
    Ok(edges.iter().take(keep).filter(|&&(i, j)| g_est.contains_edge(i, j)).count())
}

/// Number of true edges considered at `top_fraction`.
pub fn kept_edges(g_true: &PrecisionGraph, top_fraction: f64) -> usize {
    (top_fraction * g_true.support().len() as f64 - 1e-9).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2)).sum()
}

fn plus_plus_seed(points: &DMatrix<f64>, clusters: usize, rng: &mut StdRng) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centroids = DMatrix::zeros(clusters, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..clusters {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in best.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>) -> KMeans {
    let (n, dim) = points.shape();
    let clusters = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for c in 0..clusters {
                let d = sq_dist(points, i, &centroids, c);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if *label != best.1 {
                *label = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(clusters, dim);
        let mut counts = vec![0usize; clusters];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += points.row(i);
            counts[l] += 1;
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                centroids.row_mut(c).copy_from(&(sums.row(c) / counts[c] as f64));
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points, a, &centroids, labels[a]).total_cmp(&sq_dist(points, b, &centroids, labels[b]))
                    })
                    .expect("non-empty input");
                centroids.row_mut(c).copy_from(&points.row(far));
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points, i, &centroids, labels[i])).sum();
    KMeans { labels, centroids, inertia }
}

/// Lloyd's algorithm from k-means++ seeds; best of 10 restarts by inertia.
pub fn kmeans_fit(points: &DMatrix<f64>, clusters: usize, seed: u64) -> Result<KMeans> {
    let n = points.nrows();
    if clusters == 0 || clusters > n {
        return Err(Error::invalid(format!("{clusters} clusters for {n} points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, plus_plus_seed(points, clusters, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(points: &DMatrix<f64>, clusters: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kmeans_fit(points, clusters, seed)?.labels)
}

/// Best agreement fraction over one-to-one label matchings.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dims(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptySelection);
    }
    let index = |labels: &[usize]| {
        let mut ids: Vec<usize> = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let (pids, tids) = (index(pred), index(truth));
    let size = pids.len().max(tids.len());
    let mut counts = Matrix::new(size, size, 0i64);
    for (p, t) in pred.iter().zip(truth) {
        let r = pids.binary_search(p).expect("indexed");
        let c = tids.binary_search(t).expect("indexed");
        counts[(r, c)] += 1;
    }
    let (matched, _) = kuhn_munkres(&counts);
    Ok(matched as f64 / pred.len() as f64)
}
