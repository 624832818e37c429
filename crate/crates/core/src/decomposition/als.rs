use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DataMatrix, FactorPair, Hyperparams, PrecisionGraph, UpdateRule};

/// Symmetric PSD quadratic penalty `tr(Xᵀ Q X)` with a lazily cached
/// eigendecomposition for the exact block solve.
#[derive(Debug, Clone)]
pub struct Penalty {
    matrix: DMatrix<f64>,
    identity: bool,
    eigen: std::cell::OnceCell<(DVector<f64>, DMatrix<f64>)>,
}

impl Penalty {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let identity = matrix == DMatrix::identity(matrix.nrows(), matrix.ncols());
        Self { matrix, identity, eigen: std::cell::OnceCell::new() }
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn eigen(&self) -> &(DVector<f64>, DMatrix<f64>) {
        self.eigen.get_or_init(|| linalg::sym_eigen(&self.matrix))
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.identity {
            x.clone()
        } else {
            &self.matrix * x
        }
    }

    fn quad(&self, x: &DMatrix<f64>) -> f64 {
        if self.identity {
            x.norm_squared()
        } else {
            linalg::quad_trace(&self.matrix, x)
        }
    }
}

impl From<&PrecisionGraph> for Penalty {
    fn from(g: &PrecisionGraph) -> Self {
        Penalty::new(g.theta().clone())
    }
}

/// `½‖Y − XWᵀ‖²` over observed entries.
pub fn fidelity(y: &DataMatrix, f: &FactorPair) -> f64 {
    let recon = f.reconstruction();
    let mut total = 0.0;
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            if y.is_observed(i, j) {
                let r = y.values()[(i, j)] - recon[(i, j)];
                total += r * r;
            }
        }
    }
    0.5 * total
}

/// `½‖Y − XWᵀ‖²_O + (λ1/2) tr(XᵀQaX) + (λ2/2) tr(WᵀQbW)`.
pub fn quadratic_objective(
    y: &DataMatrix,
    f: &FactorPair,
    qa: &Penalty,
    qb: &Penalty,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let mut total = fidelity(y, f);
    if lambda1 != 0.0 {
        total += 0.5 * lambda1 * qa.quad(&f.x);
    }
    if lambda2 != 0.0 {
        total += 0.5 * lambda2 * qb.quad(&f.w);
    }
    total
}

fn check_shapes(y: &DataMatrix, f: &FactorPair, a: usize, b: usize) -> Result<()> {
    let (n, p) = y.shape();
    if f.x.nrows() != n || f.w.nrows() != p || a != n || b != p || f.x.ncols() != f.w.ncols() {
        return Err(Error::dims(format!(
            "Y is {n}x{p}, X is {:?}, W is {:?}, A is {a}x{a}, B is {b}x{b}",
            f.x.shape(),
            f.w.shape()
        )));
    }
    Ok(())
}

/// Objective values below this are rounding noise for `y`.
pub(crate) fn objective_floor(y: &DataMatrix) -> f64 {
    (1e-14 * 0.5 * y.values().norm_squared()).max(f64::MIN_POSITIVE)
}

/// Counters describing how the last sweeps were taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub fixed_point_steps: usize,
    pub exact_fallbacks: usize,
}

/// Which factor a half-step updates; the W step is the X step on the
/// transposed problem.
#[derive(Clone, Copy)]
enum Side {
    X,
    W,
}

struct HalfStep<'a> {
    data: DMatrix<f64>,
    penalty: &'a Penalty,
    lambda: f64,
}

/// One update of `target` (rows = data rows) against the fixed `other`
/// factor, minimizing `½‖data − target·otherᵀ‖² + (λ/2) tr(targetᵀ Q target)`.
fn fixed_point_update(
    step: &HalfStep<'_>,
    target: &DMatrix<f64>,
    other: &DMatrix<f64>,
    epsilon: f64,
) -> Option<DMatrix<f64>> {
    let k = other.ncols();
    let mut gram = other.transpose() * other;
    let tr = gram.trace();
    let eps = if tr > 0.0 { epsilon * tr / k as f64 } else { epsilon };
    for c in 0..k {
        gram[(c, c)] += eps;
    }
    let mut rhs = &step.data * other;
    if step.lambda != 0.0 {
        rhs -= step.penalty.apply(target) * step.lambda;
    }
    let chol = gram.cholesky()?;
    let solved = chol.solve(&rhs.transpose()).transpose();
    solved.iter().all(|v| v.is_finite()).then_some(solved)
}

/// Exact block minimizer through `Q = PΛPᵀ` and `otherᵀother = VMVᵀ`.
/// Components whose curvature vanishes keep their current value.
fn exact_update(step: &HalfStep<'_>, target: &DMatrix<f64>, other: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let gram = other.transpose() * other;
    let (m, v) = linalg::sym_eigen(&gram);
    let rhs = &step.data * other;
    let scale = m.amax().max(if step.lambda != 0.0 { step.lambda } else { 0.0 });
    let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);

    let (rotated_rhs, rotated_old, lam, p) = if step.penalty.identity || step.lambda == 0.0 {
        let ones = DVector::from_element(target.nrows(), if step.penalty.identity { 1.0 } else { 0.0 });
        (&rhs * &v, target * &v, ones, None)
    } else {
        let (lam, p) = step.penalty.eigen();
        (p.transpose() * &rhs * &v, p.transpose() * target * &v, lam.clone(), Some(p))
    };
    let mut sol = rotated_old.clone();
    for j in 0..m.len() {
        for i in 0..sol.nrows() {
            let denom = m[j] + step.lambda * lam[i].max(0.0);
            if denom > floor {
                sol[(i, j)] = rotated_rhs[(i, j)] / denom;
            }
        }
    }
    let back = match p {
        Some(p) => p * sol * v.transpose(),
        None => sol * v.transpose(),
    };
    back.iter().all(|x| x.is_finite()).then_some(back)
}

fn fill(y: &DataMatrix, f: &FactorPair) -> DMatrix<f64> {
    if y.is_masked() {
        y.filled_with(&f.reconstruction())
    } else {
        y.values().clone()
    }
}

/// One X-then-W sweep; returns the quadratic objective at the new point.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep(
    y: &DataMatrix,
    f: &mut FactorPair,
    qa: &Penalty,
    qb: &Penalty,
    h: &Hyperparams,
    current: f64,
    stats: &mut StepStats,
) -> Result<f64> {
    let mut obj = current;
    for side in [Side::X, Side::W] {
        let filled = fill(y, f);
        let (step, target, other) = match side {
            Side::X => (HalfStep { data: filled, penalty: qa, lambda: h.lambda1 }, &f.x, &f.w),
            Side::W => (HalfStep { data: filled.transpose(), penalty: qb, lambda: h.lambda2 }, &f.w, &f.x),
        };
        let mut accepted = None;
        if h.update_rule == UpdateRule::FixedPoint {
            if let Some(cand) = fixed_point_update(&step, target, other, h.epsilon) {
                let mut trial = f.clone();
                match side {
                    Side::X => trial.x = cand,
                    Side::W => trial.w = cand,
                }
                let value = quadratic_objective(y, &trial, qa, qb, h.lambda1, h.lambda2);
                if value.is_finite() && value <= obj {
                    accepted = Some((trial, value));
                    stats.fixed_point_steps += 1;
                }
            }
            if accepted.is_none() {
                stats.exact_fallbacks += 1;
            }
        }
        let (next, value) = match accepted {
            Some(pair) => pair,
            None => {
                let cand = exact_update(&step, target, other).ok_or(Error::NonFinite("ALS update"))?;
                let mut trial = f.clone();
                match side {
                    Side::X => trial.x = cand,
                    Side::W => trial.w = cand,
                }
                let value = quadratic_objective(y, &trial, qa, qb, h.lambda1, h.lambda2);
                if !value.is_finite() {
                    return Err(Error::NonFinite("ALS objective"));
                }
                (trial, value)
            }
        };
        *f = next;
        obj = value;
    }
    Ok(obj)
}

/// One ALS sweep (X then W) with the given precisions.
pub fn als_step(
    y: &DataMatrix,
    f: &FactorPair,
    a: &PrecisionGraph,
    b: &PrecisionGraph,
    h: &Hyperparams,
) -> Result<FactorPair> {
    let (qa, qb) = (Penalty::from(a), Penalty::from(b));
    als_step_with(y, f, &qa, &qb, h)
}

pub fn als_step_with(
    y: &DataMatrix,
    f: &FactorPair,
    qa: &Penalty,
    qb: &Penalty,
    h: &Hyperparams,
) -> Result<FactorPair> {
    check_shapes(y, f, qa.matrix.nrows(), qb.matrix.nrows())?;
    let mut next = f.clone();
    let current = quadratic_objective(y, f, qa, qb, h.lambda1, h.lambda2);
    sweep(y, &mut next, qa, qb, h, current, &mut StepStats::default())?;
    Ok(next)
}

/// Outcome of an inner ALS loop.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub factors: FactorPair,
    /// Quadratic objective after each sweep.
    pub trace: Vec<f64>,
    pub entry_objective: f64,
    pub converged: bool,
    pub stats: StepStats,
}

/// Repeats [`als_step`] until the relative change of the quadratic
/// objective drops below `tol_inner` or `max_inner` sweeps are done.
pub fn inner_als(
    y: &DataMatrix,
    f: &FactorPair,
    a: &PrecisionGraph,
    b: &PrecisionGraph,
    h: &Hyperparams,
) -> Result<FactorPair> {
    Ok(inner_als_with(y, f, &Penalty::from(a), &Penalty::from(b), h)?.factors)
}

pub fn inner_als_with(
    y: &DataMatrix,
    f: &FactorPair,
    qa: &Penalty,
    qb: &Penalty,
    h: &Hyperparams,
) -> Result<InnerOutcome> {
    check_shapes(y, f, qa.matrix.nrows(), qb.matrix.nrows())?;
    let mut factors = f.clone();
    let entry = quadratic_objective(y, f, qa, qb, h.lambda1, h.lambda2);
    let mut obj = entry;
    let mut trace = Vec::new();
    let mut stats = StepStats::default();
    let mut converged = false;
    let floor = objective_floor(y);
    for _ in 0..h.max_inner {
        let next = sweep(y, &mut factors, qa, qb, h, obj, &mut stats)?;
        trace.push(next);
        let rel = (obj - next).abs() / obj.abs().max(floor);
        obj = next;
        if rel < h.tol_inner {
            converged = true;
            break;
        }
    }
    Ok(InnerOutcome { factors, trace, entry_objective: entry, converged, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random(rows: usize, cols: usize, rng: &mut StdRng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(d: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let m = random(d, d, rng);
        &m * m.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn scalar_example() {
        let y = DataMatrix::new(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let f = FactorPair::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let h = Hyperparams { k: 1, lambda1: 0.0, lambda2: 0.0, epsilon: 0.0, ..Hyperparams::default() };
        let a = PrecisionGraph::identity(1);
        let next = als_step(&y, &f, &a, &a, &h).unwrap();
        assert_relative_eq!(next.x[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(next.w[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_rule_with_identity_is_ridge_als() {
        let mut rng = StdRng::seed_from_u64(7);
        let (n, p, k, lam) = (9, 7, 3, 0.7);
        let y = DataMatrix::new(random(n, p, &mut rng)).unwrap();
        let f = FactorPair::new(random(n, k, &mut rng), random(p, k, &mut rng)).unwrap();
        let h = Hyperparams { k, lambda1: lam, lambda2: lam, update_rule: UpdateRule::Exact, ..Hyperparams::default() };

        // Separately coded ridge ALS: X = YW(WᵀW + λI)⁻¹, W = YᵀX(XᵀX + λI)⁻¹.
        let ridge = |data: &DMatrix<f64>, other: &DMatrix<f64>| {
            let g = other.transpose() * other + DMatrix::identity(k, k) * lam;
            data * other * g.try_inverse().unwrap()
        };
        let x1 = ridge(y.values(), &f.w);
        let w1 = ridge(&y.values().transpose(), &x1);

        let next = als_step(&y, &f, &PrecisionGraph::identity(n), &PrecisionGraph::identity(p), &h).unwrap();
        assert!((next.x - x1).amax() < 1e-10);
        assert!((next.w - w1).amax() < 1e-10);
    }

    #[test]
    fn exact_rule_matches_dense_sylvester_solve() {
        let mut rng = StdRng::seed_from_u64(11);
        let (n, p, k) = (5, 4, 2);
        let y = DataMatrix::new(random(n, p, &mut rng)).unwrap();
        let f = FactorPair::new(random(n, k, &mut rng), random(p, k, &mut rng)).unwrap();
        let a = random_spd(n, &mut rng);
        let h = Hyperparams { k, lambda1: 0.9, lambda2: 0.0, update_rule: UpdateRule::Exact, ..Hyperparams::default() };
        let next = als_step_with(&y, &f, &Penalty::new(a.clone()), &Penalty::identity(p), &h).unwrap();

        // vec(X G + λ A X) = (G ⊗ I + λ I ⊗ A) vec(X) = vec(Y W).
        let g = f.w.transpose() * &f.w;
        let mut system = DMatrix::zeros(n * k, n * k);
        for c1 in 0..k {
            for c2 in 0..k {
                for r in 0..n {
                    system[(c1 * n + r, c2 * n + r)] += g[(c2, c1)];
                }
            }
            for r1 in 0..n {
                for r2 in 0..n {
                    system[(c1 * n + r1, c1 * n + r2)] += 0.9 * a[(r1, r2)];
                }
            }
        }
        let rhs = y.values() * &f.w;
        let sol = system.lu().solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
        let x = DMatrix::from_column_slice(n, k, sol.as_slice());
        assert!((next.x - x).amax() < 1e-9);
    }

    #[test]
    fn zero_data_shrinks_monotonically() {
        let mut rng = StdRng::seed_from_u64(3);
        let y = DataMatrix::new(DMatrix::zeros(6, 5)).unwrap();
        let mut f = FactorPair::new(random(6, 2, &mut rng), random(5, 2, &mut rng)).unwrap();
        let h = Hyperparams { k: 2, lambda1: 0.5, lambda2: 0.5, max_inner: 1, ..Hyperparams::default() };
        let (a, b) = (PrecisionGraph::identity(6), PrecisionGraph::identity(5));
        let mut norm = f.x.norm() + f.w.norm();
        for _ in 0..10 {
            f = inner_als(&y, &f, &a, &b, &h).unwrap();
            let next = f.x.norm() + f.w.norm();
            assert!(next <= norm + 1e-12);
            norm = next;
        }
        assert!(norm < 1e-3);
    }

    #[test]
    fn converged_input_returns_after_one_step() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = random(6, 2, &mut rng);
        let w = random(4, 2, &mut rng);
        let y = DataMatrix::new(&x * w.transpose()).unwrap();
        let h = Hyperparams { k: 2, lambda1: 0.0, lambda2: 0.0, ..Hyperparams::default() };
        let out = inner_als_with(&y, &FactorPair::new(x, w).unwrap(), &Penalty::identity(6), &Penalty::identity(4), &h).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.converged);
    }

    #[test]
    fn inner_loop_never_increases_with_general_precisions() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let (n, p, k) = (8, 6, 2);
            let y = DataMatrix::new(random(n, p, &mut rng)).unwrap();
            let f = FactorPair::new(random(n, k, &mut rng) * 3.0, random(p, k, &mut rng) * 0.1).unwrap();
            let h = Hyperparams { k, lambda1: 5.0, lambda2: 5.0, ..Hyperparams::default() };
            let out = inner_als_with(&y, &f, &Penalty::new(random_spd(n, &mut rng)), &Penalty::new(random_spd(p, &mut rng)), &h).unwrap();
            let mut prev = out.entry_objective;
            for &v in &out.trace {
                assert!(v <= prev * (1.0 + 1e-10));
                prev = v;
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let y = DataMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let f = FactorPair::new(DMatrix::zeros(2, 1), DMatrix::zeros(3, 1)).unwrap();
        let h = Hyperparams::with_rank(1);
        assert!(matches!(
            als_step(&y, &f, &PrecisionGraph::identity(3), &PrecisionGraph::identity(3), &h),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
