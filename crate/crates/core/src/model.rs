//! Shared data types, normalization utilities and graph constructions.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Observation mask, `true` marks an observed entry.
pub type Mask = DMatrix<bool>;

/// Dense `n × p` observation with an optional mask.
///
/// Unobserved entries are overwritten with `0.0` on construction so nothing
/// downstream can depend on whatever the caller stored there.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    mask: Option<Mask>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix"));
        }
        Ok(Self { values, mask: None })
    }

    pub fn with_mask(mut values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        if mask.shape() != values.shape() {
            return Err(Error::dims(format!(
                "mask is {:?} but values are {:?}",
                mask.shape(),
                values.shape()
            )));
        }
        for (v, &observed) in values.iter_mut().zip(mask.iter()) {
            if observed {
                if !v.is_finite() {
                    return Err(Error::NonFinite("observed data entry"));
                }
            } else {
                *v = 0.0;
            }
        }
        if mask.iter().all(|&m| m) {
            return Ok(Self { values, mask: None });
        }
        Ok(Self { values, mask: Some(mask) })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Raw values; unobserved entries read as zero.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[(i, j)])
    }

    pub fn observed_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.values.len(), |m| m.iter().filter(|&&b| b).count())
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / self.values.len().max(1) as f64
    }

    /// Observed entries from the data, everything else from `fill`.
    pub fn filled_with(&self, fill: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.mask {
            None => self.values.clone(),
            Some(mask) => DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
                if mask[(i, j)] {
                    self.values[(i, j)]
                } else {
                    fill[(i, j)]
                }
            }),
        }
    }

    /// Restrict the observed set further (entries outside `keep` become missing).
    pub fn restricted(&self, keep: &Mask) -> Result<Self> {
        if keep.shape() != self.shape() {
            return Err(Error::dims("restriction mask shape differs from data"));
        }
        let mask = DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            keep[(i, j)] && self.is_observed(i, j)
        });
        Self::with_mask(self.values.clone(), mask)
    }
}

/// Low-rank factors `X (n×k)` and `W (p×k)`; `x_scale`/`w_scale` are the
/// entry-wise standard deviations used when the factors were last normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub x_scale: f64,
    pub w_scale: f64,
}

impl FactorPair {
    pub fn new(x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != w.ncols() || x.ncols() == 0 {
            return Err(Error::dims(format!(
                "factor ranks differ or are zero: X has {} columns, W has {}",
                x.ncols(),
                w.ncols()
            )));
        }
        Ok(Self { x, w, x_scale: 1.0, w_scale: 1.0 })
    }

    pub fn rank(&self) -> usize {
        self.x.ncols()
    }

    /// `X Wᵀ`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.x * self.w.transpose()
    }
}

/// Anything that exposes an undirected edge set over `dim()` nodes.
pub trait EdgeSet {
    fn dim(&self) -> usize;
    fn contains_edge(&self, i: usize, j: usize) -> bool;
    fn edge_count(&self) -> usize;
}

/// Symmetric positive-definite precision matrix with its off-diagonal support.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionGraph {
    theta: DMatrix<f64>,
    support: BTreeSet<(usize, usize)>,
}

impl PrecisionGraph {
    /// Validates symmetry (1e-12 relative) and positive definiteness, then
    /// exactly symmetrizes and records the support.
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if !theta.is_square() {
            return Err(Error::dims(format!("precision is {}x{}", theta.nrows(), theta.ncols())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("precision matrix"));
        }
        if linalg::relative_asymmetry(&theta) > 1e-12 {
            return Err(Error::invalid("precision matrix is not symmetric"));
        }
        let theta = linalg::symmetrize(&theta);
        if !linalg::is_positive_definite(&theta) {
            return Err(Error::NotPositiveDefinite("precision graph"));
        }
        let support = support_of(&theta);
        Ok(Self { theta, support })
    }

    pub fn identity(d: usize) -> Self {
        Self { theta: DMatrix::identity(d, d), support: BTreeSet::new() }
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_theta(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    pub fn is_diagonal(&self) -> bool {
        self.support.is_empty()
    }

    pub fn log_det(&self) -> Result<f64> {
        linalg::log_det_spd(&self.theta)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        linalg::inv_spd(&self.theta)
    }
}

impl EdgeSet for PrecisionGraph {
    fn dim(&self) -> usize {
        self.theta.nrows()
    }

    fn contains_edge(&self, i: usize, j: usize) -> bool {
        self.support.contains(&(i.min(j), i.max(j)))
    }

    fn edge_count(&self) -> usize {
        self.support.len()
    }
}

fn support_of(theta: &DMatrix<f64>) -> BTreeSet<(usize, usize)> {
    let d = theta.nrows();
    let mut support = BTreeSet::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if theta[(i, j)] != 0.0 {
                support.insert((i, j));
            }
        }
    }
    support
}

/// Combinatorial Laplacian `L = D − G` of a graph with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianGraph {
    lap: DMatrix<f64>,
    weights: BTreeMap<(usize, usize), f64>,
}

impl LaplacianGraph {
    /// Builds the Laplacian from `(i, j) → w` with `w ≥ 0`. Zero weights are dropped.
    pub fn from_weights(d: usize, weights: impl IntoIterator<Item = ((usize, usize), f64)>) -> Result<Self> {
        let mut lap = DMatrix::zeros(d, d);
        let mut kept = BTreeMap::new();
        for ((a, b), w) in weights {
            if a == b || a >= d || b >= d {
                return Err(Error::invalid(format!("bad Laplacian edge ({a}, {b}) for d = {d}")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("edge ({a}, {b}) has weight {w}")));
            }
            if w == 0.0 {
                continue;
            }
            let (i, j) = (a.min(b), a.max(b));
            *kept.entry((i, j)).or_insert(0.0) += w;
        }
        for (&(i, j), &w) in &kept {
            lap[(i, j)] -= w;
            lap[(j, i)] -= w;
            lap[(i, i)] += w;
            lap[(j, j)] += w;
        }
        Ok(Self { lap, weights: kept })
    }

    pub fn empty(d: usize) -> Self {
        Self { lap: DMatrix::zeros(d, d), weights: BTreeMap::new() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.lap
    }

    pub fn weights(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.weights
    }
}

impl EdgeSet for LaplacianGraph {
    fn dim(&self) -> usize {
        self.lap.nrows()
    }

    fn contains_edge(&self, i: usize, j: usize) -> bool {
        self.weights.contains_key(&(i.min(j), i.max(j)))
    }

    fn edge_count(&self) -> usize {
        self.weights.len()
    }
}

/// ALS update form for the factor blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `X ← (YW − λ1·A·X_old)(WᵀW + εI)⁻¹`, falling back to the exact block
    /// minimizer for any step that would raise the objective.
    #[default]
    FixedPoint,
    /// Exact block minimizer (Sylvester solve through eigendecompositions).
    Exact,
}

/// How an estimated precision is rescaled before it enters the ALS updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionScaling {
    /// `D^{-1/2} Θ D^{-1/2}` with `D = diag(Θ)`: unit diagonal, so a diagonal
    /// estimate becomes exactly the identity.
    #[default]
    UnitDiagonal,
    /// Single positive scalar making the mean diagonal one.
    UnitMeanDiagonal,
}

/// Variance term of the Laplacian-plus-identity precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2 {
    Fixed(f64),
    Optimize,
}

impl Default for Sigma2 {
    fn default() -> Self {
        Sigma2::Optimize
    }
}

/// Model and solver settings.
///
/// `eta1`/`eta2` are the l1 weights as they appear in the objective; the
/// thresholding level handed to the precision estimator is `eta / k`.
/// `jitter` is relative: the covariance ridge is `jitter · tr(S) / d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    pub jitter: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub update_rule: UpdateRule,
    pub precision_scaling: PrecisionScaling,
    pub sigma2: Sigma2,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 1,
            lambda1: 1.0,
            lambda2: 1.0,
            eta1: 0.0,
            eta2: 0.0,
            epsilon: 1e-8,
            jitter: 1e-6,
            max_outer: 50,
            max_inner: 100,
            tol_outer: 1e-5,
            tol_inner: 1e-6,
            update_rule: UpdateRule::FixedPoint,
            precision_scaling: PrecisionScaling::UnitDiagonal,
            sigma2: Sigma2::Optimize,
        }
    }
}

impl Hyperparams {
    pub fn with_rank(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("epsilon", self.epsilon),
            ("jitter", self.jitter),
        ];
        if self.k == 0 {
            return Err(Error::invalid("rank k must be at least 1"));
        }
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("iteration caps must be positive"));
        }
        if !(self.tol_outer > 0.0) || !(self.tol_inner > 0.0) {
            return Err(Error::invalid("tolerances must be strictly positive"));
        }
        if let Sigma2::Fixed(s) = self.sigma2 {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("fixed sigma2 must be positive"));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, n: usize, p: usize) -> Result<()> {
        self.validate()?;
        if self.k > n.min(p) {
            return Err(Error::invalid(format!(
                "rank {} exceeds min(n, p) = {}",
                self.k,
                n.min(p)
            )));
        }
        Ok(())
    }
}

/// Divides `m` by the standard deviation of all of its entries.
pub fn normalize_factor(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("factor normalization"));
    }
    let s = linalg::entry_std(m);
    if s < 1e-15 {
        return Err(Error::ZeroVariance(s));
    }
    Ok((m / s, s))
}

/// Rescales by a positive scalar so the mean diagonal entry is one.
pub fn normalize_precision(g: &PrecisionGraph) -> PrecisionGraph {
    let d = g.theta.nrows();
    let scale = d as f64 / g.theta.trace();
    PrecisionGraph { theta: &g.theta * scale, support: g.support.clone() }
}

/// Congruence `D^{-1/2} Θ D^{-1/2}`; the diagonal becomes exactly one and
/// signs and support are unchanged.
pub fn normalize_precision_unit_diagonal(g: &PrecisionGraph) -> PrecisionGraph {
    let d = g.theta.nrows();
    let inv_sqrt: Vec<f64> = (0..d).map(|i| 1.0 / g.theta[(i, i)].sqrt()).collect();
    let theta = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            g.theta[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
        }
    });
    PrecisionGraph { theta, support: g.support.clone() }
}

pub fn scale_precision(g: &PrecisionGraph, scaling: PrecisionScaling) -> PrecisionGraph {
    match scaling {
        PrecisionScaling::UnitDiagonal => normalize_precision_unit_diagonal(g),
        PrecisionScaling::UnitMeanDiagonal => normalize_precision(g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Columns,
}

/// Binary k-nearest-neighbour graph over the rows (or columns) of `y`.
///
/// A point links to every other point at distance no greater than its
/// `num_neighbors`-th nearest, so exact ties are all kept, and the adjacency
/// is the union of both directions. With a mask, distances use mutually
/// observed coordinates rescaled to the full dimension; pairs sharing no
/// coordinate are never neighbours.
pub fn knn_graph(y: &DataMatrix, num_neighbors: usize, axis: Axis) -> Result<LaplacianGraph> {
    let values = match axis {
        Axis::Rows => y.values().clone(),
        Axis::Columns => y.values().transpose(),
    };
    let observed = |i: usize, j: usize| match axis {
        Axis::Rows => y.is_observed(i, j),
        Axis::Columns => y.is_observed(j, i),
    };
    let (d, dim) = values.shape();
    if num_neighbors == 0 || num_neighbors >= d {
        return Err(Error::invalid(format!(
            "num_neighbors = {num_neighbors} must lie in 1..{d}"
        )));
    }
    for i in 0..d {
        if !(0..dim).any(|c| observed(i, c)) {
            return Err(Error::DegenerateInput(format!("{axis:?} entry {i} has no observed values")));
        }
    }

    let mut dist = DMatrix::from_element(d, d, f64::INFINITY);
    for i in 0..d {
        for j in (i + 1)..d {
            let mut total = 0.0;
            let mut shared = 0usize;
            for c in 0..dim {
                if observed(i, c) && observed(j, c) {
                    let diff = values[(i, c)] - values[(j, c)];
                    total += diff * diff;
                    shared += 1;
                }
            }
            if shared > 0 {
                let dij = (total * dim as f64 / shared as f64).sqrt();
                dist[(i, j)] = dij;
                dist[(j, i)] = dij;
            }
        }
    }

    let mut edges = BTreeSet::new();
    for i in 0..d {
        let mut others: Vec<(f64, usize)> =
            (0..d).filter(|&j| j != i).map(|j| (dist[(i, j)], j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cutoff = others[num_neighbors - 1].0;
        if !cutoff.is_finite() {
            // Fewer than `num_neighbors` comparable points: keep the finite ones.
            for &(dij, j) in others.iter().take_while(|(dij, _)| dij.is_finite()) {
                let _ = dij;
                edges.insert((i.min(j), i.max(j)));
            }
            continue;
        }
        for &(_, j) in others.iter().take_while(|(dij, _)| *dij <= cutoff) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    LaplacianGraph::from_weights(d, edges.into_iter().map(|e| (e, 1.0)))
}

/// `m mᵀ / k + jitter · I` for a `d × k` matrix.
pub fn empirical_covariance(m: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let k = m.ncols().max(1) as f64;
    let mut s = m * m.transpose() / k;
    for i in 0..s.nrows() {
        s[(i, i)] += jitter;
    }
    linalg::symmetrize(&s)
}
