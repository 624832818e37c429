//! Two-dimensional search over `(λ1, λ2)` in log space.
//!
//! Random search draws log-uniform pairs. The surrogate mode starts with a
//! few random probes, then fits a Gaussian-kernel interpolant (with its
//! kriging variance) to the standardized scores and probes the point of a
//! 64×64 grid with the largest expected improvement. Either way the result
//! is the best pair actually evaluated.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::config::TuneStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `None` when the fit behind the probe failed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub lambda1: f64,
    pub lambda2: f64,
    pub score: Option<f64>,
    pub history: Vec<Probe>,
}

const GRID: usize = 64;

/// Log-space box `[lo, hi]` for each coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub lambda1: [f64; 2],
    pub lambda2: [f64; 2],
}

impl SearchBox {
    fn to_lambdas(self, u: [f64; 2]) -> (f64, f64) {
        let map = |b: [f64; 2], t: f64| (b[0].ln() + t * (b[1].ln() - b[0].ln())).exp();
        (map(self.lambda1, u[0]), map(self.lambda2, u[1]))
    }
}

/// Minimizes `score` over the box with `budget` evaluations.
pub fn search(
    bounds: SearchBox,
    budget: usize,
    strategy: TuneStrategy,
    seed: u64,
    mut score: impl FnMut(f64, f64) -> Option<f64>,
) -> TuneOutcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut probes: Vec<([f64; 2], Option<f64>)> = Vec::with_capacity(budget);
    let warmup = match strategy {
        TuneStrategy::Random => budget,
        TuneStrategy::Surrogate => budget.min((budget / 3).max(4)),
    };
    for step in 0..budget.max(1) {
        let u = if step < warmup {
            [rng.random::<f64>(), rng.random::<f64>()]
        } else {
            next_by_expected_improvement(&probes).unwrap_or_else(|| [rng.random::<f64>(), rng.random::<f64>()])
        };
        let (l1, l2) = bounds.to_lambdas(u);
        let s = score(l1, l2).filter(|v| v.is_finite());
        probes.push((u, s));
    }
    let history: Vec<Probe> = probes
        .iter()
        .map(|&(u, s)| {
            let (lambda1, lambda2) = bounds.to_lambdas(u);
            Probe { lambda1, lambda2, score: s }
        })
        .collect();
    let best = history
        .iter()
        .filter(|p| p.score.is_some())
        .min_by(|a, b| a.score.unwrap().total_cmp(&b.score.unwrap()))
        .copied()
        .unwrap_or(history[0]);
    TuneOutcome { lambda1: best.lambda1, lambda2: best.lambda2, score: best.score, history }
}

fn kernel(a: [f64; 2], b: [f64; 2], length: f64) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    (-d2 / (2.0 * length * length)).exp()
}

struct Kriging {
    points: Vec<[f64; 2]>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    length: f64,
}

impl Kriging {
    fn fit(points: Vec<[f64; 2]>, values: &DVector<f64>, length: f64) -> Option<Self> {
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(points[i], points[j], length) + if i == j { 1e-6 } else { 0.0 });
        let chol = k.cholesky()?;
        let alpha = chol.solve(values);
        Some(Self { points, chol, alpha, length })
    }

    /// Leave-one-out squared error via the inverse-kernel shortcut.
    fn loo_error(&self) -> f64 {
        let inv = self.chol.inverse();
        (0..self.points.len()).map(|i| (self.alpha[i] / inv[(i, i)]).powi(2)).sum()
    }

    fn predict(&self, u: [f64; 2]) -> (f64, f64) {
        let kv = DVector::from_iterator(self.points.len(), self.points.iter().map(|&p| kernel(u, p, self.length)));
        let mean = kv.dot(&self.alpha);
        let var = (1.0 - kv.dot(&self.chol.solve(&kv))).max(0.0);
        (mean, var)
    }
}

fn next_by_expected_improvement(probes: &[([f64; 2], Option<f64>)]) -> Option<[f64; 2]> {
    let ok: Vec<([f64; 2], f64)> = probes.iter().filter_map(|&(u, s)| s.map(|v| (u, v))).collect();
    if ok.len() < 2 {
        return None;
    }
    let n = ok.len();
    let mean = ok.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sd = (ok.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let y = DVector::from_iterator(n, ok.iter().map(|p| (p.1 - mean) / scale));
    let points: Vec<[f64; 2]> = ok.iter().map(|p| p.0).collect();
    let model = [0.1, 0.2, 0.4]
        .into_iter()
        .filter_map(|len| Kriging::fit(points.clone(), &y, len))
        .min_by(|a, b| a.loo_error().total_cmp(&b.loo_error()))?;
    let best = y.min();

    let std_normal = Normal::standard();
    let mut choice = None;
    let mut best_ei = f64::NEG_INFINITY;
    for i in 0..GRID {
        for j in 0..GRID {
            let u = [(i as f64 + 0.5) / GRID as f64, (j as f64 + 0.5) / GRID as f64];
            if probes.iter().any(|&(p, _)| (p[0] - u[0]).abs() < 0.5 / GRID as f64 && (p[1] - u[1]).abs() < 0.5 / GRID as f64) {
                continue;
            }
            let (mu, var) = model.predict(u);
            let sigma = var.sqrt();
            let ei = if sigma < 1e-12 {
                (best - mu).max(0.0)
            } else {
                let z = (best - mu) / sigma;
                (best - mu) * std_normal.cdf(z) + sigma * std_normal.pdf(z)
            };
            if ei > best_ei {
                best_ei = ei;
                choice = Some(u);
            }
        }
    }
    choice
}
