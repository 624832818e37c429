//! Sparse precision estimation.
//!
//! Three estimators live here:
//!
//! * [`threshold_glasso`]: the closed-form approximation to the graphical
//!   lasso obtained by soft-thresholding the covariance. It is exact when the
//!   thresholded support is acyclic and the usual sign-consistency conditions
//!   hold, and costs one pass over the support.
//! * [`glasso_oracle`]: a plain proximal-gradient graphical lasso used to
//!   validate the closed form on small problems.
//! * [`laplacian_constrained_glasso`]: the estimator behind the `+` variant,
//!   where the precision is restricted to `L + I/σ²` with `L` a graph
//!   Laplacian, solved by projected gradient ascent on the edge weights.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LaplacianGraph, PrecisionGraph, Sigma2};

/// Covariance soft-thresholded at `λ` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCovariance {
    pub sigma_res: DMatrix<f64>,
    pub support: BTreeSet<(usize, usize)>,
}

/// Closed-form estimate plus the diagonal shift (if any) that was needed to
/// make it positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEstimate {
    pub graph: PrecisionGraph,
    pub shift: f64,
}

fn check_square_symmetric(s: &DMatrix<f64>, what: &str) -> Result<()> {
    if !s.is_square() {
        return Err(Error::dims(format!("{what}: {}x{} is not square", s.nrows(), s.ncols())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance input"));
    }
    if linalg::relative_asymmetry(s) > 1e-10 {
        return Err(Error::invalid(format!("{what}: covariance is not symmetric")));
    }
    Ok(())
}

pub fn residual_threshold(sigma: &DMatrix<f64>, lam: f64) -> ResidualCovariance {
    let d = sigma.nrows();
    let mut sigma_res = DMatrix::zeros(d, d);
    let mut support = BTreeSet::new();
    for i in 0..d {
        sigma_res[(i, i)] = sigma[(i, i)];
        for j in (i + 1)..d {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            if v.abs() > lam {
                let r = v - lam * v.signum();
                sigma_res[(i, j)] = r;
                sigma_res[(j, i)] = r;
                support.insert((i, j));
            }
        }
    }
    ResidualCovariance { sigma_res, support }
}

const SHIFT_LADDER: [f64; 10] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8];

/// Closed-form thresholded graphical lasso.
pub fn threshold_glasso(s: &DMatrix<f64>, eta: f64) -> Result<ThresholdEstimate> {
    check_square_symmetric(s, "threshold_glasso")?;
    if !(eta >= 0.0) {
        return Err(Error::invalid(format!("eta must be non-negative, got {eta}")));
    }
    let d = s.nrows();
    if let Some(i) = (0..d).find(|&i| !(s[(i, i)] > 0.0)) {
        return Err(Error::invalid(format!("covariance diagonal entry {i} is not positive")));
    }
    let res = residual_threshold(s, eta);

    let mut theta = DMatrix::zeros(d, d);
    let mut diag_sum = vec![0.0; d];
    for &(i, j) in &res.support {
        let r = res.sigma_res[(i, j)];
        let denom = s[(i, i)] * s[(j, j)] - r * r;
        if denom <= 1e-12 {
            return Err(Error::NearSingularPair { i, j, value: denom });
        }
        theta[(i, j)] = -r / denom;
        theta[(j, i)] = -r / denom;
        diag_sum[i] += r * r / denom;
        diag_sum[j] += r * r / denom;
    }
    for i in 0..d {
        theta[(i, i)] = (1.0 + diag_sum[i]) / s[(i, i)];
    }

    for &shift in &SHIFT_LADDER {
        let mut candidate = theta.clone();
        for i in 0..d {
            candidate[(i, i)] += shift;
        }
        if linalg::is_positive_definite(&candidate) {
            return Ok(ThresholdEstimate { graph: PrecisionGraph::new(candidate)?, shift });
        }
    }
    Err(Error::NotPositiveDefinite("thresholded precision beyond repair"))
}

/// Result of the proximal-gradient graphical lasso.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub graph: PrecisionGraph,
    /// `ln|Θ| − tr(SΘ) − η‖Θ‖₁,off` after every accepted iteration.
    pub trace: Vec<f64>,
    pub kkt_residual: f64,
}

impl OracleFit {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial point")
    }
}

/// `ln|Θ| − tr(SΘ) − η‖Θ‖₁,off`, or `None` if `Θ` is not PD.
pub fn glasso_objective(s: &DMatrix<f64>, theta: &DMatrix<f64>, eta: f64) -> Option<f64> {
    let logdet = linalg::log_det_spd(theta).ok()?;
    Some(logdet - s.component_mul(theta).sum() - eta * linalg::l1_off_diagonal(theta))
}

fn soft_threshold_off_diagonal(m: &mut DMatrix<f64>, t: f64) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..d {
            if i != j {
                let v = m[(i, j)];
                m[(i, j)] = v.signum() * (v.abs() - t).max(0.0);
            }
        }
    }
}

fn glasso_kkt(s: &DMatrix<f64>, theta: &DMatrix<f64>, eta: f64) -> Result<f64> {
    let w = linalg::inv_spd(theta)?;
    let d = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let g = s[(i, j)] - w[(i, j)];
            let v = if i == j {
                g.abs()
            } else if theta[(i, j)] != 0.0 {
                (g + eta * theta[(i, j)].signum()).abs()
            } else {
                (g.abs() - eta).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Dense graphical lasso by proximal gradient with backtracking.
///
/// Stops once the relative objective change drops below `tol` and the KKT
/// residual is below `10·tol`.
pub fn glasso_oracle(s: &DMatrix<f64>, eta: f64, tol: f64) -> Result<OracleFit> {
    glasso_oracle_with_cap(s, eta, tol, 200_000)
}

pub fn glasso_oracle_with_cap(s: &DMatrix<f64>, eta: f64, tol: f64, max_iter: usize) -> Result<OracleFit> {
    check_square_symmetric(s, "glasso_oracle")?;
    if !(tol > 0.0) || !(eta >= 0.0) {
        return Err(Error::invalid("glasso_oracle needs eta ≥ 0 and tol > 0"));
    }
    let s = linalg::symmetrize(s);
    if !linalg::is_positive_definite(&s) && eta == 0.0 {
        return Err(Error::NotPositiveDefinite("unpenalized glasso needs a PD covariance"));
    }
    let d = s.nrows();
    let mut theta = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 / s[(i, i)].max(1e-12) } else { 0.0 });
    let mut obj = glasso_objective(&s, &theta, eta).ok_or(Error::NotPositiveDefinite("oracle start"))?;
    let mut trace = vec![obj];
    let mut grad = &s - linalg::inv_spd(&theta)?;
    let mut step = 1.0 / (linalg::inv_spd(&theta)?.amax().powi(2)).max(1e-12);
    step = step.min(1.0);
    let smooth = |t: &DMatrix<f64>| -> Option<f64> {
        Some(-linalg::log_det_spd(t).ok()? + s.component_mul(t).sum())
    };

    for _ in 0..max_iter {
        let f_cur = smooth(&theta).expect("current iterate is PD");
        let mut t = step;
        let (next, next_obj) = loop {
            let mut cand = &theta - &grad * t;
            soft_threshold_off_diagonal(&mut cand, t * eta);
            let cand = linalg::symmetrize(&cand);
            if let Some(f_new) = smooth(&cand) {
                let delta = &cand - &theta;
                let model = f_cur + grad.component_mul(&delta).sum() + delta.norm_squared() / (2.0 * t);
                if f_new <= model + 1e-12 * f_cur.abs().max(1.0) {
                    let full = -f_new - eta * linalg::l1_off_diagonal(&cand);
                    break (cand, full);
                }
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NotConverged { solver: "glasso_oracle line search", iterations: trace.len(), residual: t });
            }
        };
        let new_grad = &s - linalg::inv_spd(&next)?;
        // Barzilai–Borwein guess for the next step.
        let ds = &next - &theta;
        let dg = &new_grad - &grad;
        let curv = ds.component_mul(&dg).sum();
        step = if curv > 0.0 { (ds.norm_squared() / curv).clamp(1e-10, 1e6) } else { (t * 2.0).min(1e6) };

        let rel = (next_obj - obj).abs() / obj.abs().max(1.0);
        theta = next;
        grad = new_grad;
        obj = next_obj;
        trace.push(obj);
        if rel < tol {
            let kkt = glasso_kkt(&s, &theta, eta)?;
            if kkt < 10.0 * tol {
                return Ok(OracleFit { graph: PrecisionGraph::new(theta)?, trace, kkt_residual: kkt });
            }
        }
    }
    let kkt = glasso_kkt(&s, &theta, eta)?;
    Err(Error::NotConverged { solver: "glasso_oracle", iterations: max_iter, residual: kkt })
}

#[derive(Debug, Clone)]
pub struct LaplacianGlassoOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient norm is below `tol_per_node · d`.
    pub tol_per_node: f64,
    /// Starting edge weights in `(0,1), (0,2), …, (1,2), …` order.
    pub init_weights: Option<Vec<f64>>,
    pub init_sigma2: Option<f64>,
}

impl Default for LaplacianGlassoOptions {
    fn default() -> Self {
        Self { max_iter: 50_000, tol_per_node: 1e-6, init_weights: None, init_sigma2: None }
    }
}

#[derive(Debug, Clone)]
pub struct LaplacianFit {
    pub graph: LaplacianGraph,
    pub sigma2: f64,
    pub objective: f64,
    /// Objective after every accepted weight step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
}

impl LaplacianFit {
    /// `L + I/σ²`.
    pub fn precision(&self) -> Result<PrecisionGraph> {
        let d = self.graph.matrix().nrows();
        PrecisionGraph::new(self.graph.matrix() + DMatrix::identity(d, d) / self.sigma2)
    }
}

struct EdgeProblem<'a> {
    s: &'a DMatrix<f64>,
    rho: f64,
    edges: Vec<(usize, usize)>,
    /// `s_ii + s_jj − 2 s_ij` per edge.
    cost: Vec<f64>,
    trace_s: f64,
}

impl EdgeProblem<'_> {
    fn laplacian(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.s.nrows();
        let mut l = DMatrix::zeros(d, d);
        for (&(i, j), &we) in self.edges.iter().zip(w) {
            if we != 0.0 {
                l[(i, j)] -= we;
                l[(j, i)] -= we;
                l[(i, i)] += we;
                l[(j, j)] += we;
            }
        }
        l
    }

    fn theta(&self, w: &[f64], tau: f64) -> DMatrix<f64> {
        let mut t = self.laplacian(w);
        for i in 0..t.nrows() {
            t[(i, i)] += tau;
        }
        t
    }

    /// `ln|Θ| − tr(SΘ) − ρ‖Θ‖₁` with the l1 norm over every entry.
    fn objective(&self, w: &[f64], tau: f64) -> Option<f64> {
        let d = self.s.nrows() as f64;
        let logdet = linalg::log_det_spd(&self.theta(w, tau)).ok()?;
        let linear: f64 = w.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        let wsum: f64 = w.iter().sum();
        Some(logdet - linear - tau * self.trace_s - self.rho * (4.0 * wsum + d * tau))
    }

    fn gradient(&self, w: &[f64], tau: f64) -> Result<Vec<f64>> {
        let inv = linalg::inv_spd(&self.theta(w, tau))?;
        Ok(self
            .edges
            .iter()
            .zip(&self.cost)
            .map(|(&(i, j), c)| inv[(i, i)] + inv[(j, j)] - 2.0 * inv[(i, j)] - c - 4.0 * self.rho)
            .collect())
    }

    /// Exact maximizer over `τ = 1/σ²` for fixed weights: solves
    /// `Σ 1/(μ_i + τ) = tr(S) + ρ d` over the Laplacian spectrum `μ`.
    fn best_tau(&self, w: &[f64]) -> f64 {
        let (mu, _) = linalg::sym_eigen(&self.laplacian(w));
        let target = self.trace_s + self.rho * self.s.nrows() as f64;
        let f = |tau: f64| mu.iter().map(|&m| 1.0 / (m.max(0.0) + tau)).sum::<f64>() - target;
        let (mut lo, mut hi) = (1e-300f64, 1.0f64);
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        if lo == 1e-300 {
            lo = hi;
            while f(lo) < 0.0 && lo > 1e-300 {
                hi = lo;
                lo *= 0.5;
            }
        }
        // Bisection in log space; f is strictly decreasing.
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        (lo * hi).sqrt()
    }
}

fn projected_gradient_norm(w: &[f64], g: &[f64]) -> f64 {
    w.iter()
        .zip(g)
        .map(|(&we, &ge)| {
            let moved = (we + ge).max(0.0) - we;
            moved * moved
        })
        .sum::<f64>()
        .sqrt()
}

/// Laplacian-constrained graphical lasso with default options; fails with
/// [`Error::NotConverged`] if the iteration cap is hit.
pub fn laplacian_constrained_glasso(s: &DMatrix<f64>, rho: f64, sigma2: Sigma2) -> Result<LaplacianFit> {
    let fit = laplacian_constrained_glasso_with(s, rho, sigma2, &LaplacianGlassoOptions::default())?;
    if !fit.converged {
        return Err(Error::NotConverged {
            solver: "laplacian_constrained_glasso",
            iterations: fit.iterations,
            residual: fit.projected_gradient_norm,
        });
    }
    Ok(fit)
}

/// Same estimator with explicit options. Hitting the cap is reported through
/// `converged = false` rather than an error.
pub fn laplacian_constrained_glasso_with(
    s: &DMatrix<f64>,
    rho: f64,
    sigma2: Sigma2,
    opts: &LaplacianGlassoOptions,
) -> Result<LaplacianFit> {
    check_square_symmetric(s, "laplacian_constrained_glasso")?;
    if !(rho >= 0.0) {
        return Err(Error::invalid("rho must be non-negative"));
    }
    let s = linalg::symmetrize(s);
    let d = s.nrows();
    let mut edges = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    let mut cost = Vec::with_capacity(edges.capacity());
    for i in 0..d {
        for j in (i + 1)..d {
            edges.push((i, j));
            cost.push(s[(i, i)] + s[(j, j)] - 2.0 * s[(i, j)]);
        }
    }
    let problem = EdgeProblem { s: &s, rho, edges, cost, trace_s: s.trace() };

    let mut w = match &opts.init_weights {
        Some(init) if init.len() == problem.edges.len() => init.iter().map(|v| v.max(0.0)).collect(),
        Some(init) => {
            return Err(Error::dims(format!(
                "{} initial weights for {} candidate edges",
                init.len(),
                problem.edges.len()
            )))
        }
        None => vec![0.0; problem.edges.len()],
    };
    let optimize_tau = matches!(sigma2, Sigma2::Optimize);
    let mut tau = match sigma2 {
        Sigma2::Fixed(v) => {
            if !(v > 0.0) {
                return Err(Error::invalid("sigma2 must be positive"));
            }
            1.0 / v
        }
        Sigma2::Optimize => opts.init_sigma2.map_or_else(|| problem.best_tau(&w), |v| 1.0 / v),
    };

    let tol = opts.tol_per_node * d as f64;
    let mut obj = problem.objective(&w, tau).ok_or(Error::NotPositiveDefinite("Laplacian start"))?;
    let mut trace = vec![obj];
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut pg_norm = f64::INFINITY;

    for iter in 0..opts.max_iter {
        if optimize_tau {
            tau = problem.best_tau(&w);
            obj = problem.objective(&w, tau).ok_or(Error::NotPositiveDefinite("Laplacian τ update"))?;
        }
        let g = problem.gradient(&w, tau)?;
        pg_norm = projected_gradient_norm(&w, &g);
        if pg_norm < tol || problem.edges.is_empty() {
            return finish(&problem, w, tau, obj, trace, iter, true, pg_norm);
        }
        if let Some((pw, pgrad)) = &prev {
            let mut sy = 0.0;
            let mut ss = 0.0;
            for e in 0..w.len() {
                let ds = w[e] - pw[e];
                let dy = g[e] - pgrad[e];
                ss += ds * ds;
                sy += ds * dy;
            }
            // Ascent on a concave function: curvature along the step is −sy.
            if sy < 0.0 {
                step = (ss / -sy).clamp(1e-12, 1e12);
            }
        }
        let mut t = step;
        let (next_w, next_obj) = loop {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(&we, &ge)| (we + t * ge).max(0.0)).collect();
            let ascent: f64 = cand.iter().zip(&w).zip(&g).map(|((c, we), ge)| (c - we) * ge).sum();
            if let Some(f_new) = problem.objective(&cand, tau) {
                if f_new >= obj + 1e-4 * ascent {
                    break (cand, f_new);
                }
            }
            t *= 0.5;
            if t < 1e-30 {
                return finish(&problem, w, tau, obj, trace, iter, false, pg_norm);
            }
        };
        prev = Some((w, g));
        w = next_w;
        obj = next_obj;
        trace.push(obj);
        step = t.max(step * 0.5);
    }
    finish(&problem, w, tau, obj, trace, opts.max_iter, false, pg_norm)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &EdgeProblem<'_>,
    w: Vec<f64>,
    tau: f64,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    projected_gradient_norm: f64,
) -> Result<LaplacianFit> {
    let d = problem.s.nrows();
    let graph = LaplacianGraph::from_weights(d, problem.edges.iter().copied().zip(w))?;
    Ok(LaplacianFit { graph, sigma2: 1.0 / tau, objective, trace, iterations, converged, projected_gradient_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::model::EdgeSet;

    fn two_by_two(off: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, off, off, 1.0])
    }

    #[test]
    fn residual_threshold_examples() {
        let r = residual_threshold(&two_by_two(0.5), 0.2);
        assert_relative_eq!(r.sigma_res[(0, 1)], 0.3, epsilon = 1e-15);
        assert!(r.support.contains(&(0, 1)));
        assert!(residual_threshold(&two_by_two(0.5), 0.5).support.is_empty());
        let s = DMatrix::from_row_slice(3, 3, &[2.0, -0.4, 0.1, -0.4, 1.0, 0.3, 0.1, 0.3, 1.5]);
        assert_eq!(residual_threshold(&s, 0.0).sigma_res, s);
    }

    #[test]
    fn threshold_identity_is_identity() {
        for eta in [0.0, 0.3, 5.0] {
            let est = threshold_glasso(&DMatrix::identity(4, 4), eta).unwrap();
            assert_eq!(est.graph.theta(), &DMatrix::<f64>::identity(4, 4));
            assert_eq!(est.shift, 0.0);
        }
    }

    #[test]
    fn threshold_two_by_two_closed_form() {
        let est = threshold_glasso(&two_by_two(0.5), 0.2).unwrap();
        let t = est.graph.theta();
        assert_relative_eq!(t[(0, 1)], -0.3 / 0.91, epsilon = 1e-14);
        assert_relative_eq!(t[(0, 0)], 1.0 + 0.09 / 0.91, epsilon = 1e-14);
        assert_relative_eq!(t[(1, 1)], 1.0 + 0.09 / 0.91, epsilon = 1e-14);
        let oracle = glasso_oracle(&two_by_two(0.5), 0.2, 1e-12).unwrap();
        for (a, b) in t.iter().zip(oracle.graph.theta().iter()) {
            assert!((a - b).abs() <= 0.05 * b.abs());
        }
    }

    #[test]
    fn threshold_large_eta_is_inverse_diagonal() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, -0.1, 0.4, 0.5, 0.2, -0.1, 0.2, 4.0]);
        let est = threshold_glasso(&s, 0.41).unwrap();
        assert!(est.graph.is_diagonal());
        for i in 0..3 {
            assert_eq!(est.graph.theta()[(i, i)], 1.0 / s[(i, i)]);
        }
    }

    #[test]
    fn threshold_near_singular_pair() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(threshold_glasso(&s, 0.0), Err(Error::NearSingularPair { .. })));
    }

    #[test]
    fn threshold_repairs_indefinite_output() {
        // Dense strong correlations violate the acyclic regime.
        let s = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.9 });
        let est = threshold_glasso(&s, 0.05).unwrap();
        assert!(est.shift > 0.0);
        assert!(linalg::is_positive_definite(est.graph.theta()));
    }

    #[test]
    fn oracle_unpenalized_inverts() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let fit = glasso_oracle(&s, 0.0, 1e-12).unwrap();
        let inv = s.clone().try_inverse().unwrap();
        assert!((fit.graph.theta() - inv).amax() < 1e-6);
        let fit = glasso_oracle(&DMatrix::identity(3, 3), 0.7, 1e-10).unwrap();
        assert!((fit.graph.theta() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn oracle_recovers_chain_support() {
        let mut theta = DMatrix::identity(4, 4) * 1.5;
        for i in 0..3 {
            theta[(i, i + 1)] = -0.6;
            theta[(i + 1, i)] = -0.6;
        }
        let s = theta.clone().try_inverse().unwrap();
        let fit = glasso_oracle(&s, 0.02, 1e-12).unwrap();
        let support: Vec<_> = fit.graph.support().iter().copied().collect();
        assert_eq!(support, vec![(0, 1), (1, 2), (2, 3)]);
        for pair in fit.trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn laplacian_kills_edges_for_isotropic_covariance() {
        let s = DMatrix::identity(4, 4) * 2.0;
        let fit = laplacian_constrained_glasso(&s, 1.0, Sigma2::Optimize).unwrap();
        assert_eq!(fit.graph.edge_count(), 0);
        let fit = laplacian_constrained_glasso(&s, 1.0, Sigma2::Fixed(2.0)).unwrap();
        assert_eq!(fit.graph.edge_count(), 0);
        assert!(fit.precision().is_ok());
    }

    #[test]
    fn laplacian_single_edge_recovery() {
        let true_w = 0.8;
        let l_true = LaplacianGraph::from_weights(3, [((0, 1), true_w)]).unwrap();
        let theta = l_true.matrix() + DMatrix::identity(3, 3);
        let s = theta.try_inverse().unwrap();
        let s = linalg::symmetrize(&s);
        let fit = laplacian_constrained_glasso(&s, 0.0, Sigma2::Fixed(1.0)).unwrap();

        // Exhaustive 1-D search over the single weight with the others at zero.
        let objective = |w: f64| {
            let l = LaplacianGraph::from_weights(3, [((0, 1), w)]).unwrap();
            let t = l.matrix() + DMatrix::identity(3, 3);
            glasso_like(&s, &t)
        };
        let mut best = (0.0, f64::NEG_INFINITY);
        for step in 0..=40_000 {
            let w = step as f64 * 5e-5;
            let v = objective(w);
            if v > best.1 {
                best = (w, v);
            }
        }
        let w01 = fit.graph.weights().get(&(0, 1)).copied().unwrap_or(0.0);
        assert!((w01 - true_w).abs() < 1e-3, "w01 = {w01}");
        assert!((best.0 - true_w).abs() < 1e-3);
        assert!(fit.graph.weights().iter().filter(|(e, _)| **e != (0, 1)).all(|(_, w)| *w < 1e-3));
    }

    fn glasso_like(s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        linalg::log_det_spd(t).unwrap() - s.component_mul(t).sum()
    }

    #[test]
    fn laplacian_trace_is_non_decreasing() {
        let s = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.5, 0.2, 0.1, 0.5, 1.2, 0.4, 0.0, 0.2, 0.4, 0.9, 0.3, 0.1, 0.0, 0.3, 1.1,
        ]);
        let fit = laplacian_constrained_glasso(&s, 0.01, Sigma2::Fixed(1.0)).unwrap();
        for pair in fit.trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12);
        }
        assert!(fit.precision().is_ok());
    }
}
