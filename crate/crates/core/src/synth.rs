//! Synthetic ground truth: sparse precision graphs, matrix-normal factors,
//! noisy observations, observation masks and graph-structured mixtures.
//!
//! Every generator is a pure function of its arguments and `seed`.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DataMatrix, Mask, PrecisionGraph};

/// Ground truth plus its noisy observation `y_no = y_gt + E`.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub y_gt: DataMatrix,
    pub y_no: DataMatrix,
    pub x_gt: DMatrix<f64>,
    pub w_gt: DMatrix<f64>,
    pub a_gt: PrecisionGraph,
    pub b_gt: PrecisionGraph,
    pub sigma_n: f64,
    pub seed: u64,
}

fn gaussian(rows: usize, cols: usize, rng: &mut StdRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn diagonally_dominant(d: usize, weights: &[((usize, usize), f64)]) -> Result<PrecisionGraph> {
    let mut theta = DMatrix::zeros(d, d);
    for &((i, j), w) in weights {
        theta[(i, j)] = w;
        theta[(j, i)] = w;
    }
    for i in 0..d {
        theta[(i, i)] = theta.row(i).iter().map(|v| v.abs()).sum::<f64>() + 0.5;
    }
    PrecisionGraph::new(theta)
}

fn pair_from_index(d: usize, mut idx: usize) -> (usize, usize) {
    let mut i = 0;
    while idx >= d - 1 - i {
        idx -= d - 1 - i;
        i += 1;
    }
    (i, i + 1 + idx)
}

/// Random-support precision with `round(edge_fraction · d(d−1)/2)` edges
/// (at least one), weights of magnitude `U[0.4, 1]` and random sign, and
/// diagonal `Σ_j |Θ_ij| + 0.5`.
pub fn gen_sparse_precision(d: usize, edge_fraction: f64, seed: u64) -> Result<PrecisionGraph> {
    if d < 2 {
        return Err(Error::invalid("precision graphs need at least two nodes"));
    }
    if !(edge_fraction > 0.0 && edge_fraction <= 1.0) {
        return Err(Error::invalid(format!("edge fraction {edge_fraction} outside (0, 1]")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let total = d * (d - 1) / 2;
    let m = ((edge_fraction * total as f64).round() as usize).clamp(1, total);
    let mut chosen = index::sample(&mut rng, total, m).into_vec();
    chosen.sort_unstable();
    let weights: Vec<_> = chosen
        .into_iter()
        .map(|idx| {
            let magnitude = rng.random_range(0.4..=1.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (pair_from_index(d, idx), sign * magnitude)
        })
        .collect();
    diagonally_dominant(d, &weights)
}

/// Draw from `MN(0, row_prec⁻¹, col_prec⁻¹)`; `None` means identity.
pub fn sample_matrix_normal(
    rows: usize,
    cols: usize,
    row_prec: Option<&PrecisionGraph>,
    col_prec: Option<&PrecisionGraph>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    sample_matrix_normal_with(rows, cols, row_prec, col_prec, &mut StdRng::seed_from_u64(seed))
}

fn sample_matrix_normal_with(
    rows: usize,
    cols: usize,
    row_prec: Option<&PrecisionGraph>,
    col_prec: Option<&PrecisionGraph>,
    rng: &mut StdRng,
) -> Result<DMatrix<f64>> {
    for (g, d, side) in [(row_prec, rows, "row"), (col_prec, cols, "column")] {
        if let Some(g) = g {
            if g.theta().nrows() != d {
                return Err(Error::dims(format!("{side} precision is {0}x{0}, expected {d}", g.theta().nrows())));
            }
        }
    }
    let mut z = gaussian(rows, cols, rng);
    if let Some(a) = row_prec {
        z = linalg::inv_sqrt_spd(a.theta())? * z;
    }
    if let Some(b) = col_prec {
        z *= linalg::inv_sqrt_spd(b.theta())?;
    }
    Ok(z)
}

/// Sparse `A_gt`, `B_gt`; `X_gt ~ MN(0, A_gt⁻¹, I)`, `W_gt ~ MN(0, B_gt⁻¹, I)`;
/// `Y_gt = X_gt W_gtᵀ`; iid noise with `σ_n = sigma_ratio · std(Y_gt)`.
pub fn gen_instance(n: usize, p: usize, k: usize, sigma_ratio: f64, edge_fraction: f64, seed: u64) -> Result<SyntheticInstance> {
    if k == 0 || k > n.min(p) {
        return Err(Error::invalid(format!("rank {k} outside 1..={}", n.min(p))));
    }
    if !(sigma_ratio >= 0.0) || !sigma_ratio.is_finite() {
        return Err(Error::invalid("noise ratio must be finite and non-negative"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let a_gt = gen_sparse_precision(n, edge_fraction, rng.random())?;
    let b_gt = gen_sparse_precision(p, edge_fraction, rng.random())?;
    let x_gt = sample_matrix_normal_with(n, k, Some(&a_gt), None, &mut rng)?;
    let w_gt = sample_matrix_normal_with(p, k, Some(&b_gt), None, &mut rng)?;
    let y = &x_gt * w_gt.transpose();
    let sigma_n = sigma_ratio * linalg::entry_std(&y);
    let noisy = if sigma_n > 0.0 { &y + gaussian(n, p, &mut rng) * sigma_n } else { y.clone() };
    Ok(SyntheticInstance {
        y_gt: DataMatrix::new(y)?,
        y_no: DataMatrix::new(noisy)?,
        x_gt,
        w_gt,
        a_gt,
        b_gt,
        sigma_n,
        seed,
    })
}

/// Uniform mask with exactly `round(keep_fraction · n · p)` observed entries
/// and every row and column observed at least once.
pub fn gen_mask(n: usize, p: usize, keep_fraction: f64, seed: u64) -> Result<Mask> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let total = n * p;
    let count = (keep_fraction * total as f64).round() as usize;
    if count == 0 || count < n.max(p) {
        return Err(Error::DegenerateMask(format!("{count} entries cannot cover {n} rows and {p} columns")));
    }
    if count == total {
        return Ok(DMatrix::from_element(n, p, true));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..100 {
        let mut mask = DMatrix::from_element(n, p, false);
        for idx in index::sample(&mut rng, total, count) {
            mask[(idx % n, idx / n)] = true;
        }
        let rows_ok = (0..n).all(|i| mask.row(i).iter().any(|&b| b));
        let cols_ok = (0..p).all(|j| mask.column(j).iter().any(|&b| b));
        if rows_ok && cols_ok {
            return Ok(mask);
        }
    }
    Err(Error::DegenerateMask(format!("100 draws of {count}/{total} entries left a row or column empty")))
}

/// Settings for [`gen_cluster_instance`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub points: usize,
    pub features: usize,
    pub clusters: usize,
    pub rank: usize,
    /// Standard deviation of the cluster centroids in factor space.
    pub separation: f64,
    /// Edge density of the within-cluster sample graph.
    pub within_edge_fraction: f64,
    pub noise_ratio: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            points: 500,
            features: 50,
            clusters: 5,
            rank: 5,
            separation: 1.0,
            within_edge_fraction: 0.05,
            noise_ratio: 2.0,
        }
    }
}

/// Labeled mixture whose sample precision is block structured along the
/// clusters.
#[derive(Debug, Clone)]
pub struct ClusterInstance {
    pub y: DataMatrix,
    pub labels: Vec<usize>,
    pub a_gt: PrecisionGraph,
    pub x_gt: DMatrix<f64>,
}

/// Points get balanced random labels; `A_gt` links random pairs inside each
/// cluster with attractive (negative) weights, so latent rows of the same
/// cluster are positively correlated. `X_gt` adds centroid offsets to a
/// `MN(0, A_gt⁻¹, I)` draw; features are a random `W` plus iid noise.
pub fn gen_cluster_instance(spec: &ClusterSpec, seed: u64) -> Result<ClusterInstance> {
    let ClusterSpec { points, features, clusters, rank, separation, within_edge_fraction, noise_ratio } = *spec;
    if clusters == 0 || clusters > points {
        return Err(Error::invalid(format!("{clusters} clusters for {points} points")));
    }
    if rank == 0 || rank > points.min(features) {
        return Err(Error::invalid(format!("rank {rank} outside 1..={}", points.min(features))));
    }
    if !(within_edge_fraction > 0.0 && within_edge_fraction <= 1.0) {
        return Err(Error::invalid("within-cluster edge fraction outside (0, 1]"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..points).map(|i| i % clusters).collect();
    labels.shuffle(&mut rng);

    let mut weights = Vec::new();
    for c in 0..clusters {
        let members: Vec<usize> = (0..points).filter(|&i| labels[i] == c).collect();
        let m = members.len();
        if m < 2 {
            continue;
        }
        let total = m * (m - 1) / 2;
        let count = ((within_edge_fraction * total as f64).round() as usize).clamp(1, total);
        for idx in index::sample(&mut rng, total, count) {
            let (a, b) = pair_from_index(m, idx);
            let (i, j) = (members[a].min(members[b]), members[a].max(members[b]));
            weights.push(((i, j), -rng.random_range(0.4..=1.0)));
        }
    }
    let a_gt = diagonally_dominant(points, &weights)?;
    let centroids = gaussian(clusters, rank, &mut rng) * separation;
    let mut x_gt = sample_matrix_normal_with(points, rank, Some(&a_gt), None, &mut rng)?;
    for i in 0..points {
        let mut row = x_gt.row_mut(i);
        row += centroids.row(labels[i]);
    }
    let w = gaussian(features, rank, &mut rng);
    let clean = &x_gt * w.transpose();
    let sigma = noise_ratio * linalg::entry_std(&clean);
    let y = if sigma > 0.0 { &clean + gaussian(points, features, &mut rng) * sigma } else { clean };
    Ok(ClusterInstance { y: DataMatrix::new(y)?, labels, a_gt, x_gt })
}
