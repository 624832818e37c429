use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::als::{inner_als_with, objective_floor, quadratic_objective, Penalty, StepStats};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    empirical_covariance, normalize_factor, scale_precision, DataMatrix, FactorPair, Hyperparams,
    LaplacianGraph, PrecisionGraph,
};
use crate::precision::{laplacian_constrained_glasso_with, threshold_glasso, LaplacianGlassoOptions};

/// Which precision estimator the outer loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Thresholded closed-form graphical lasso.
    #[default]
    Plain,
    /// Laplacian plus scaled identity.
    LaplacianPlus,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub factors: FactorPair,
    pub a: PrecisionGraph,
    pub b: PrecisionGraph,
    /// Full objective after every ALS sweep.
    pub objective_trace: Vec<f64>,
    /// Number of ALS sweeps, equal to `objective_trace.len()`.
    pub iterations: usize,
    pub converged: bool,
    /// Length of each inner-loop segment of `objective_trace`.
    pub segments: Vec<usize>,
    /// Fixed Laplacian penalties, for fits that use them.
    pub laplacians: Option<(LaplacianGraph, LaplacianGraph)>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// `(start, end)` index ranges of each inner loop in the trace.
    pub fn segment_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }
}

/// Full objective: quadratic part plus `(λ/2)(−k ln|Θ| + η‖Θ‖₁,off)` for each side.
pub fn lgmd_objective(
    y: &DataMatrix,
    f: &FactorPair,
    a: &PrecisionGraph,
    b: &PrecisionGraph,
    h: &Hyperparams,
) -> Result<f64> {
    let (n, p) = y.shape();
    if f.x.shape() != (n, f.rank()) || f.w.shape() != (p, f.rank()) || a.theta().nrows() != n || b.theta().nrows() != p {
        return Err(Error::dims("objective operands do not match the data shape"));
    }
    let quad = quadratic_objective(y, f, &Penalty::from(a), &Penalty::from(b), h.lambda1, h.lambda2);
    Ok(quad + graph_terms(a, b, f.rank(), h)?)
}

fn graph_terms(a: &PrecisionGraph, b: &PrecisionGraph, k: usize, h: &Hyperparams) -> Result<f64> {
    let side = |g: &PrecisionGraph, lambda: f64, eta: f64| -> Result<f64> {
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let logdet = linalg::log_det_spd(g.theta())?;
        let l1 = if eta == 0.0 { 0.0 } else { eta * linalg::l1_off_diagonal(g.theta()) };
        Ok(0.5 * lambda * (l1 - k as f64 * logdet))
    };
    Ok(side(a, h.lambda1, h.eta1)? + side(b, h.lambda2, h.eta2)?)
}

#[cfg(feature = "parallel")]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA,
    B: FnOnce() -> RB,
{
    (a(), b())
}

/// Rank-k SVD start `X = U_k`, `W = V_k Σ_k`; masked input uses the
/// zero-filled matrix divided by the observed fraction.
pub fn initial_factors(y: &DataMatrix, k: usize) -> Result<FactorPair> {
    let m = if y.is_masked() { y.values() / y.observed_fraction() } else { y.values().clone() };
    let (u, s, v) = linalg::truncated_svd(&m, k)?;
    let w = DMatrix::from_fn(v.nrows(), k, |r, c| v[(r, c)] * s[c]);
    FactorPair::new(u, w)
}

/// Per-column diagonal rescaling `X ← XD`, `W ← WD⁻¹` that exactly minimizes
/// the two quadratic penalties while leaving `XWᵀ` unchanged.
fn balance(f: &mut FactorPair, qa: &Penalty, qb: &Penalty, h: &Hyperparams) {
    if h.lambda1 <= 0.0 || h.lambda2 <= 0.0 {
        return;
    }
    let ax = qa.matrix() * &f.x;
    let bw = qb.matrix() * &f.w;
    for j in 0..f.rank() {
        let sx = ax.column(j).dot(&f.x.column(j));
        let sw = bw.column(j).dot(&f.w.column(j));
        if sx > 0.0 && sw > 0.0 {
            let c = (h.lambda2 * sw / (h.lambda1 * sx)).powf(0.25);
            if c.is_finite() && c > 0.0 {
                f.x.column_mut(j).scale_mut(c);
                f.w.column_mut(j).scale_mut(1.0 / c);
            }
        }
    }
}

enum Strategy {
    Learned(Variant),
    Fixed { qa: Penalty, qb: Penalty },
}

#[derive(Default)]
struct SideState {
    weights: Option<Vec<f64>>,
    sigma2: Option<f64>,
}

struct SideEstimate {
    graph: PrecisionGraph,
    diagnostics: Vec<(&'static str, f64)>,
    state: SideState,
}

fn estimate_side(
    factor: &DMatrix<f64>,
    eta: f64,
    h: &Hyperparams,
    variant: Variant,
    state: SideState,
) -> Result<SideEstimate> {
    let (normalized, _) = normalize_factor(factor)?;
    let k = factor.ncols() as f64;
    let s = empirical_covariance(&normalized, h.jitter);
    match variant {
        Variant::Plain => {
            let est = threshold_glasso(&s, eta / k)?;
            let graph = scale_precision(&est.graph, h.precision_scaling);
            let edges = graph.support().len() as f64;
            Ok(SideEstimate { graph, diagnostics: vec![("shift", est.shift), ("edges", edges)], state })
        }
        Variant::LaplacianPlus => {
            let opts = LaplacianGlassoOptions {
                max_iter: 5_000,
                init_weights: state.weights,
                init_sigma2: state.sigma2,
                ..LaplacianGlassoOptions::default()
            };
            let fit = laplacian_constrained_glasso_with(&s, eta / k, h.sigma2, &opts)?;
            let d = s.nrows();
            let mut weights = Vec::with_capacity(d * d.saturating_sub(1) / 2);
            for i in 0..d {
                for j in (i + 1)..d {
                    weights.push(fit.graph.weights().get(&(i, j)).copied().unwrap_or(0.0));
                }
            }
            let graph = scale_precision(&fit.precision()?, h.precision_scaling);
            let edges = graph.support().len() as f64;
            let diagnostics = vec![
                ("sigma2", fit.sigma2),
                ("edges", edges),
                ("estimator_converged", if fit.converged { 1.0 } else { 0.0 }),
            ];
            Ok(SideEstimate { graph, diagnostics, state: SideState { weights: Some(weights), sigma2: Some(fit.sigma2) } })
        }
    }
}

fn drive(y: &DataMatrix, h: &Hyperparams, strategy: Strategy) -> Result<FitResult> {
    let (n, p) = y.shape();
    h.validate_for(n, p)?;
    let mut f = initial_factors(y, h.k)?;
    let mut a = PrecisionGraph::identity(n);
    let mut b = PrecisionGraph::identity(p);
    let (mut qa, mut qb) = match &strategy {
        Strategy::Fixed { qa, qb } => (qa.clone(), qb.clone()),
        Strategy::Learned(_) => (Penalty::identity(n), Penalty::identity(p)),
    };
    let mut states = (SideState::default(), SideState::default());
    let mut trace = Vec::new();
    let mut segments = Vec::new();
    let mut stats = StepStats::default();
    let mut diagnostics = BTreeMap::new();
    let mut prev: Option<f64> = None;
    let mut converged = false;
    let mut outer = 0;
    let floor = objective_floor(y);

    while outer < h.max_outer {
        outer += 1;
        let mut constant = 0.0;
        if let Strategy::Learned(variant) = strategy {
            let (sa, sb) = std::mem::take(&mut states);
            let (ea, eb) = join(
                || estimate_side(&f.x, h.eta1, h, variant, sa),
                || estimate_side(&f.w, h.eta2, h, variant, sb),
            );
            let (ea, eb) = (ea?, eb?);
            for (prefix, est) in [("a", &ea), ("b", &eb)] {
                for (key, value) in &est.diagnostics {
                    diagnostics.insert(format!("{prefix}_{key}"), *value);
                }
            }
            if let (Some(sa), Some(sb)) = (diagnostics.get("a_shift"), diagnostics.get("b_shift")) {
                let worst = sa.max(*sb).max(diagnostics.get("max_shift").copied().unwrap_or(0.0));
                diagnostics.insert("max_shift".into(), worst);
            }
            a = ea.graph;
            b = eb.graph;
            states = (ea.state, eb.state);
            qa = Penalty::from(&a);
            qb = Penalty::from(&b);
            constant = graph_terms(&a, &b, h.k, h)?;
        }
        balance(&mut f, &qa, &qb, h);
        let inner = inner_als_with(y, &f, &qa, &qb, h)?;
        f = inner.factors;
        stats.fixed_point_steps += inner.stats.fixed_point_steps;
        stats.exact_fallbacks += inner.stats.exact_fallbacks;
        segments.push(inner.trace.len());
        trace.extend(inner.trace.iter().map(|q| q + constant));
        let obj = *trace.last().expect("inner loop runs at least once");
        if let Some(before) = prev {
            if (before - obj).abs() <= h.tol_outer * before.abs().max(floor) {
                converged = true;
                break;
            }
        }
        prev = Some(obj);
    }

    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective trace"));
    }
    diagnostics.insert("outer_iterations".into(), outer as f64);
    diagnostics.insert("fixed_point_steps".into(), stats.fixed_point_steps as f64);
    diagnostics.insert("exact_fallbacks".into(), stats.exact_fallbacks as f64);
    diagnostics.insert("final_objective".into(), *trace.last().unwrap_or(&f64::NAN));
    let laplacians = None;
    Ok(FitResult { factors: f, a, b, iterations: trace.len(), objective_trace: trace, converged, segments, laplacians, diagnostics })
}

/// Learns sample and feature precision graphs alongside the factors.
pub fn fit_lgmd(y: &DataMatrix, h: &Hyperparams, variant: Variant) -> Result<FitResult> {
    drive(y, h, Strategy::Learned(variant))
}

/// Ridge-regularized factorization; the driver with `A = B = I` held fixed.
pub fn fit_pmf(y: &DataMatrix, h: &Hyperparams) -> Result<FitResult> {
    let (n, p) = y.shape();
    drive(y, h, Strategy::Fixed { qa: Penalty::identity(n), qb: Penalty::identity(p) })
}

/// Dual graph-regularized factorization with fixed Laplacian penalties.
pub fn fit_dgrmd(
    y: &DataMatrix,
    h: &Hyperparams,
    l_sample: &LaplacianGraph,
    l_feature: &LaplacianGraph,
) -> Result<FitResult> {
    let (n, p) = y.shape();
    if l_sample.matrix().nrows() != n || l_feature.matrix().nrows() != p {
        return Err(Error::dims(format!(
            "Laplacians are {}x{} and {}x{} for a {n}x{p} matrix",
            l_sample.matrix().nrows(),
            l_sample.matrix().nrows(),
            l_feature.matrix().nrows(),
            l_feature.matrix().nrows()
        )));
    }
    let strategy = Strategy::Fixed { qa: Penalty::new(l_sample.matrix().clone()), qb: Penalty::new(l_feature.matrix().clone()) };
    let mut fit = drive(y, h, strategy)?;
    fit.laplacians = Some((l_sample.clone(), l_feature.clone()));
    Ok(fit)
}

/// Truncated SVD: `X = U_k Σ_k`, `W = V_k`.
pub fn fit_pca(y: &DataMatrix, k: usize) -> Result<FitResult> {
    if y.is_masked() {
        return Err(Error::invalid("PCA baseline needs a fully observed matrix"));
    }
    let (u, s, v) = linalg::truncated_svd(y.values(), k)?;
    let x = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, c)] * s[c]);
    let factors = FactorPair::new(x, v)?;
    let residual = 0.5 * (y.values() - factors.reconstruction()).norm_squared();
    let (n, p) = y.shape();
    Ok(FitResult {
        factors,
        a: PrecisionGraph::identity(n),
        b: PrecisionGraph::identity(p),
        objective_trace: vec![residual],
        iterations: 1,
        converged: true,
        segments: vec![1],
        laplacians: None,
        diagnostics: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{knn_graph, Axis};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{rngs::StdRng, Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut StdRng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(d: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let m = gaussian(d, d, rng);
        &m * m.transpose() / d as f64 + DMatrix::identity(d, d)
    }

    fn trace_is_segment_monotone(fit: &FitResult) {
        let floor = fit.objective_trace.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-12;
        assert_eq!(fit.objective_trace.len(), fit.iterations);
        assert!(fit.objective_trace.iter().all(|v| v.is_finite()));
        for r in fit.segment_ranges() {
            let seg = &fit.objective_trace[r];
            for pair in seg.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10 * pair[0].abs().max(floor));
            }
        }
    }

    #[test]
    fn objective_trivial_cases() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = gaussian(4, 2, &mut rng);
        let w = gaussian(3, 2, &mut rng);
        let y = DataMatrix::new(&x * w.transpose()).unwrap();
        let f = FactorPair::new(x.clone(), w.clone()).unwrap();
        let h = Hyperparams { k: 2, lambda1: 0.3, lambda2: 0.7, ..Hyperparams::default() };
        let obj = lgmd_objective(&y, &f, &PrecisionGraph::identity(4), &PrecisionGraph::identity(3), &h).unwrap();
        assert_relative_eq!(obj, 0.15 * x.norm_squared() + 0.35 * w.norm_squared(), epsilon = 1e-12);

        let noisy = DataMatrix::new(gaussian(4, 3, &mut rng)).unwrap();
        let h0 = Hyperparams { k: 2, lambda1: 0.0, lambda2: 0.0, ..Hyperparams::default() };
        let obj = lgmd_objective(&noisy, &f, &PrecisionGraph::identity(4), &PrecisionGraph::identity(3), &h0).unwrap();
        assert_relative_eq!(obj, 0.5 * (noisy.values() - &x * w.transpose()).norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn objective_matches_termwise_recomputation() {
        let mut rng = StdRng::seed_from_u64(2);
        let (n, p, k) = (3, 3, 2);
        let y = gaussian(n, p, &mut rng);
        let x = gaussian(n, k, &mut rng);
        let w = gaussian(p, k, &mut rng);
        let a = random_spd(n, &mut rng);
        let b = random_spd(p, &mut rng);
        let h = Hyperparams { k, lambda1: 0.8, lambda2: 1.3, eta1: 0.4, eta2: 0.25, ..Hyperparams::default() };

        let mut fid = 0.0;
        for i in 0..n {
            for j in 0..p {
                let mut r = y[(i, j)];
                for c in 0..k {
                    r -= x[(i, c)] * w[(j, c)];
                }
                fid += r * r;
            }
        }
        let quad = |q: &DMatrix<f64>, m: &DMatrix<f64>| {
            let mut t = 0.0;
            for c in 0..k {
                for i in 0..q.nrows() {
                    for j in 0..q.nrows() {
                        t += m[(i, c)] * q[(i, j)] * m[(j, c)];
                    }
                }
            }
            t
        };
        // 3×3 determinant by cofactor expansion.
        let det3 = |m: &DMatrix<f64>| {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        };
        let off = |m: &DMatrix<f64>| {
            let mut t = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        t += m[(i, j)].abs();
                    }
                }
            }
            t
        };
        let expected = 0.5 * fid
            + 0.4 * (quad(&a, &x) - 2.0 * det3(&a).ln() + 0.4 * off(&a))
            + 0.65 * (quad(&b, &w) - 2.0 * det3(&b).ln() + 0.25 * off(&b));

        let got = lgmd_objective(
            &DataMatrix::new(y).unwrap(),
            &FactorPair::new(x, w).unwrap(),
            &PrecisionGraph::new(a).unwrap(),
            &PrecisionGraph::new(b).unwrap(),
            &h,
        )
        .unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn noiseless_unregularized_fit_is_exact() {
        let mut rng = StdRng::seed_from_u64(3);
        let y = gaussian(20, 3, &mut rng) * gaussian(3, 15, &mut rng);
        let data = DataMatrix::new(y.clone()).unwrap();
        let h = Hyperparams { k: 3, lambda1: 0.0, lambda2: 0.0, ..Hyperparams::default() };
        let fit = fit_lgmd(&data, &h, Variant::Plain).unwrap();
        let rel = (&y - fit.factors.reconstruction()).norm() / y.norm();
        assert!(rel < 1e-8, "relative error {rel}");
        trace_is_segment_monotone(&fit);
    }

    #[test]
    fn large_eta_lgmd_equals_pmf() {
        let mut rng = StdRng::seed_from_u64(4);
        let y = DataMatrix::new(gaussian(12, 10, &mut rng)).unwrap();
        let h = Hyperparams { k: 3, lambda1: 0.5, lambda2: 0.5, eta1: 1e6, eta2: 1e6, ..Hyperparams::default() };
        let lgmd = fit_lgmd(&y, &h, Variant::Plain).unwrap();
        let pmf = fit_pmf(&y, &h).unwrap();
        assert!(lgmd.a.support().is_empty() && lgmd.b.support().is_empty());
        assert_relative_eq!(lgmd.final_objective(), pmf.final_objective(), max_relative = 1e-6);
        assert_eq!(pmf.a, PrecisionGraph::identity(12));
    }

    #[test]
    fn pmf_matches_gradient_descent_reference() {
        let mut rng = StdRng::seed_from_u64(5);
        let (n, p, k, lam) = (10, 8, 2, 0.4);
        let y = gaussian(n, p, &mut rng);
        let h = Hyperparams { k, lambda1: lam, lambda2: lam, tol_outer: 1e-12, tol_inner: 1e-13, max_inner: 2000, ..Hyperparams::default() };
        let fit = fit_pmf(&DataMatrix::new(y.clone()).unwrap(), &h).unwrap();

        // Plain gradient descent from a small random start.
        let mut x = gaussian(n, k, &mut rng) * 0.1;
        let mut w = gaussian(p, k, &mut rng) * 0.1;
        let obj = |x: &DMatrix<f64>, w: &DMatrix<f64>| {
            0.5 * (&y - x * w.transpose()).norm_squared() + 0.5 * lam * (x.norm_squared() + w.norm_squared())
        };
        for _ in 0..200_000 {
            let r = x.clone() * w.transpose() - &y;
            let gx = &r * &w + &x * lam;
            let gw = r.transpose() * &x + &w * lam;
            x -= gx * 0.01;
            w -= gw * 0.01;
        }
        assert_relative_eq!(fit.final_objective(), obj(&x, &w), max_relative = 1e-4);
    }

    #[test]
    fn pmf_huge_lambda_kills_factors() {
        let mut rng = StdRng::seed_from_u64(6);
        let y = DataMatrix::new(gaussian(8, 6, &mut rng)).unwrap();
        let h = Hyperparams { k: 2, lambda1: 1e6, lambda2: 1e6, ..Hyperparams::default() };
        let fit = fit_pmf(&y, &h).unwrap();
        assert!(fit.factors.x.amax() < 1e-6 && fit.factors.w.amax() < 1e-6);
    }

    #[test]
    fn pmf_exact_recovery_without_regularization() {
        let mut rng = StdRng::seed_from_u64(7);
        let y = gaussian(9, 2, &mut rng) * gaussian(2, 7, &mut rng);
        let h = Hyperparams { k: 2, lambda1: 0.0, lambda2: 0.0, ..Hyperparams::default() };
        let fit = fit_pmf(&DataMatrix::new(y.clone()).unwrap(), &h).unwrap();
        assert!((&y - fit.factors.reconstruction()).norm() / y.norm() < 1e-8);
    }

    #[test]
    fn dgrmd_with_empty_graphs_is_unregularized_als() {
        let mut rng = StdRng::seed_from_u64(8);
        let y = DataMatrix::new(gaussian(10, 7, &mut rng)).unwrap();
        let h = Hyperparams { k: 2, lambda1: 3.0, lambda2: 3.0, ..Hyperparams::default() };
        let fit = fit_dgrmd(&y, &h, &LaplacianGraph::empty(10), &LaplacianGraph::empty(7)).unwrap();
        let h0 = Hyperparams { lambda1: 0.0, lambda2: 0.0, ..h.clone() };
        let plain = fit_pmf(&y, &h0).unwrap();
        assert!((fit.factors.reconstruction() - plain.factors.reconstruction()).amax() < 1e-10);
    }

    #[test]
    fn dgrmd_huge_lambda_equalizes_connected_rows() {
        let mut rng = StdRng::seed_from_u64(9);
        let y = DataMatrix::new(gaussian(8, 6, &mut rng)).unwrap();
        let l = LaplacianGraph::from_weights(8, [((0, 1), 1.0), ((1, 2), 1.0), ((5, 6), 1.0)]).unwrap();
        let h = Hyperparams { k: 2, lambda1: 1e7, lambda2: 0.0, ..Hyperparams::default() };
        let fit = fit_dgrmd(&y, &h, &l, &LaplacianGraph::empty(6)).unwrap();
        let x = &fit.factors.x;
        let scale = x.amax().max(1.0);
        for (i, j) in [(0, 1), (1, 2), (5, 6)] {
            assert!((x.row(i) - x.row(j)).amax() / scale < 1e-4);
        }
        trace_is_segment_monotone(&fit);
    }

    #[test]
    fn pca_examples() {
        let eye = DataMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let fit = fit_pca(&eye, 3).unwrap();
        assert!((fit.factors.reconstruction() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);

        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = DVector::from_vec(vec![3.0, 1.0]);
        let fit = fit_pca(&DataMatrix::new(&a * b.transpose()).unwrap(), 1).unwrap();
        assert!(fit.final_objective() < 1e-24);

        let mut rng = StdRng::seed_from_u64(10);
        let y = gaussian(30, 20, &mut rng);
        let fit = fit_pca(&DataMatrix::new(y.clone()).unwrap(), 5).unwrap();
        let sv = y.singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sorted[5..].iter().map(|s| s * s).sum();
        assert_relative_eq!(2.0 * fit.final_objective(), tail, max_relative = 1e-10);
        assert!(fit_pca(&DataMatrix::with_mask(y, DMatrix::from_element(30, 20, true).map(|_| rng.random_bool(0.9))).unwrap(), 2).is_err());
    }

    #[test]
    fn masked_fit_ignores_unobserved_values() {
        let mut rng = StdRng::seed_from_u64(11);
        let base = gaussian(15, 12, &mut rng);
        let mask = DMatrix::from_fn(15, 12, |i, j| (i * 7 + j * 3) % 5 != 0);
        let mut perturbed = base.clone();
        for j in 0..12 {
            for i in 0..15 {
                if !mask[(i, j)] {
                    perturbed[(i, j)] = 1e3 * rng.random::<f64>();
                }
            }
        }
        let h = Hyperparams { k: 2, lambda1: 0.5, lambda2: 0.5, eta1: 0.1, eta2: 0.1, ..Hyperparams::default() };
        let f1 = fit_lgmd(&DataMatrix::with_mask(base, mask.clone()).unwrap(), &h, Variant::Plain).unwrap();
        let f2 = fit_lgmd(&DataMatrix::with_mask(perturbed, mask).unwrap(), &h, Variant::Plain).unwrap();
        assert_eq!(f1.factors, f2.factors);
        assert_eq!(f1.objective_trace, f2.objective_trace);
        assert_eq!(f1.a, f2.a);
        trace_is_segment_monotone(&f1);
    }

    #[test]
    fn scale_consistency() {
        let mut rng = StdRng::seed_from_u64(12);
        let y = gaussian(12, 9, &mut rng);
        let h = Hyperparams { k: 2, lambda1: 0.6, lambda2: 0.4, eta1: 0.05, eta2: 0.05, ..Hyperparams::default() };
        let base = fit_lgmd(&DataMatrix::new(y.clone()).unwrap(), &h, Variant::Plain).unwrap();
        for c in [4.0, 3.0] {
            let hc = Hyperparams { lambda1: h.lambda1 * c, lambda2: h.lambda2 * c, ..h.clone() };
            let scaled = fit_lgmd(&DataMatrix::new(&y * c).unwrap(), &hc, Variant::Plain).unwrap();
            let expected = base.factors.reconstruction() * c;
            let rel = (scaled.factors.reconstruction() - &expected).norm() / expected.norm();
            assert!(rel < 1e-6, "c = {c}: relative difference {rel}");
        }
    }

    #[test]
    fn laplacian_plus_fit_runs_and_is_segment_monotone() {
        let mut rng = StdRng::seed_from_u64(13);
        let y = DataMatrix::new(gaussian(12, 10, &mut rng)).unwrap();
        let h = Hyperparams { k: 2, lambda1: 0.5, lambda2: 0.5, eta1: 0.01, eta2: 0.01, max_outer: 5, ..Hyperparams::default() };
        let fit = fit_lgmd(&y, &h, Variant::LaplacianPlus).unwrap();
        trace_is_segment_monotone(&fit);
        for g in [&fit.a, &fit.b] {
            let t = g.theta();
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    if i != j {
                        assert!(t[(i, j)] <= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn knn_graphs_plug_into_dgrmd() {
        let mut rng = StdRng::seed_from_u64(14);
        let y = DataMatrix::new(gaussian(10, 8, &mut rng)).unwrap();
        let ls = knn_graph(&y, 3, Axis::Rows).unwrap();
        let lf = knn_graph(&y, 3, Axis::Columns).unwrap();
        let fit = fit_dgrmd(&y, &Hyperparams { k: 2, ..Hyperparams::default() }, &ls, &lf).unwrap();
        trace_is_segment_monotone(&fit);
        assert!(fit.laplacians.is_some());
    }
}
