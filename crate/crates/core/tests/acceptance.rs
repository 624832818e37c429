//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::io::Write;
use std::time::Instant;

use lgmd::decomposition::{fit_lgmd, fit_pmf, gpca_postprocess, inner_als_with, Penalty, Variant};
use lgmd::harness::{run_experiment, tune_hyperparams, DataSource, ExperimentConfig, ExperimentReport, Method, Task, TuneScope};
use lgmd::linalg::truncated_svd;
use lgmd::metrics::{edge_recovery, kept_edges};
use lgmd::model::{knn_graph, Axis, DataMatrix, FactorPair, Hyperparams, PrecisionGraph, Sigma2};
use lgmd::precision::{glasso_oracle, laplacian_constrained_glasso_with, threshold_glasso, LaplacianGlassoOptions};
use lgmd::synth::{gen_instance, gen_sparse_precision, sample_matrix_normal, ClusterSpec};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Written to the stderr handle directly so the line survives output capture.
fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn gaussian(rows: usize, cols: usize, rng: &mut StdRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_spd(d: usize, rng: &mut StdRng) -> DMatrix<f64> {
    let g = gaussian(d, d, rng);
    &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
}

/// Chain or star precision with random signs, as a correlation-scaled
/// covariance.
fn tree_covariance(d: usize, star: bool, rng: &mut StdRng) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(d, d);
    for v in 1..d {
        let u = if star { 0 } else { v - 1 };
        let w = rng.random_range(0.3..0.9) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        theta[(u, v)] = w;
        theta[(v, u)] = w;
    }
    for i in 0..d {
        theta[(i, i)] = theta.row(i).iter().map(|x: &f64| x.abs()).sum::<f64>() + 0.3;
    }
    let sigma = theta.try_inverse().unwrap();
    let scale: Vec<f64> = (0..d).map(|i| 1.0 / sigma[(i, i)].sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| sigma[(i, j)] * scale[i] * scale[j])
}

#[test]
fn thresholding_agrees_with_glasso_oracle_on_trees() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    let mut agree = 0;
    let total = 50;
    for case in 0..total {
        let d = rng.random_range(5..=20);
        let s = tree_covariance(d, case % 2 == 1, &mut rng);
        // Sparse regime: η between the (d−1)-th and d-th largest |S_ij|.
        let mut off: Vec<f64> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).map(|(i, j)| s[(i, j)].abs()).collect();
        off.sort_by(|a, b| b.total_cmp(a));
        let eta = 0.5 * (off[d - 2] + off[d - 1]);
        let fast = threshold_glasso(&s, eta).unwrap();
        let oracle = glasso_oracle(&s, eta, 1e-12).unwrap();
        let same_support = fast.graph.support() == oracle.graph.support();
        let values_close = fast.graph.support().iter().all(|&(i, j)| {
            let (a, b) = (fast.graph.theta()[(i, j)], oracle.graph.theta()[(i, j)]);
            (a - b).abs() <= 0.1 * b.abs()
        });
        if same_support && values_close {
            agree += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "threshold/oracle agreement",
        agree * 10 >= total * 9 && secs < 30.0,
        format!("{agree}/{total} instances agree (need ≥ 90%), {secs:.1}s"),
    );
}

#[test]
fn lgmd_with_empty_graphs_reduces_to_pmf() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut edges = 0;
    for seed in 0..10 {
        let inst = gen_instance(50, 40, 5, 0.5, 0.06, 100 + seed).unwrap();
        let h = Hyperparams { eta1: 1e6, eta2: 1e6, ..Hyperparams::with_rank(5) };
        let lgmd = fit_lgmd(&inst.y_no, &h, Variant::Plain).unwrap();
        let pmf = fit_pmf(&inst.y_no, &h).unwrap();
        edges += lgmd.a.support().len() + lgmd.b.support().len();
        let rel = (lgmd.final_objective() - pmf.final_objective()).abs() / pmf.final_objective().abs();
        worst = worst.max(rel);
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "PMF degeneracy",
        worst <= 1e-6 && edges == 0 && secs < 60.0,
        format!("max relative objective gap {worst:.2e}, {edges} edges left, {secs:.1}s"),
    );
}

fn cell_values(report: &ExperimentReport, method: Method, level: f64, metric: &str) -> Vec<f64> {
    let mut rows: Vec<_> = report.records_for(method, level).collect();
    rows.sort_by_key(|r| r.repetition);
    rows.iter()
        .map(|r| match metric {
            "e1" => r.metrics.e1,
            "e5" => r.metrics.e5,
            "e6" => r.metrics.e6,
            _ => unreachable!(),
        })
        .map(|v| v.unwrap_or(f64::NAN))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn lgmd_subspace_angles_beat_baselines() {
    let started = Instant::now();
    let ratios = [0.1, 0.5, 1.0];
    let cfg = ExperimentConfig {
        task: Task::Denoise,
        methods: vec![Method::Pca, Method::Dgrmd, Method::Lgmd],
        sweep: ratios.to_vec(),
        repetitions: 30,
        rank: 20,
        seed: 2024,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for &r in &ratios {
        for metric in ["e5", "e6"] {
            let [pca, dgrmd, lgmd] = [Method::Pca, Method::Dgrmd, Method::Lgmd].map(|m| mean(&cell_values(&report, m, r, metric)));
            ok &= lgmd <= pca && lgmd <= dgrmd;
            lines.push(format!("{metric}@{r}: lgmd {lgmd:.4} pca {pca:.4} dgrmd {dgrmd:.4}"));
        }
    }
    let lg = cell_values(&report, Method::Lgmd, 0.5, "e5");
    let pc = cell_values(&report, Method::Pca, 0.5, "e5");
    let wins = lg.iter().zip(&pc).filter(|(a, b)| a < b).count();
    ok &= wins * 10 >= lg.len() * 7;
    let secs = started.elapsed().as_secs_f64();
    ok &= secs < 1200.0;
    verdict(
        "subspace-angle ordering",
        ok,
        format!("{}; paired E5 wins at 0.5: {wins}/{}; {secs:.0}s", lines.join("; "), lg.len()),
    );
}

#[test]
fn completion_error_falls_with_more_observations() {
    let started = Instant::now();
    let keeps = [0.3, 0.5, 0.8];
    let methods = [Method::Pmf, Method::Dgrmd, Method::Lgmd];
    let cfg = ExperimentConfig {
        task: Task::Complete,
        methods: methods.to_vec(),
        sweep: keeps.to_vec(),
        repetitions: 30,
        noise_ratio: 0.0,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for m in methods {
        let series: Vec<Vec<f64>> = keeps.iter().map(|&k| cell_values(&report, m, k, "e1")).collect();
        let means: Vec<f64> = series.iter().map(|v| mean(v)).collect();
        let mut pairs = 0;
        let mut monotone = 0;
        for w in series.windows(2) {
            for (lo, hi) in w[0].iter().zip(&w[1]) {
                pairs += 1;
                monotone += usize::from(hi <= lo);
            }
        }
        ok &= means.windows(2).all(|w| w[1] <= w[0]) && monotone * 10 >= pairs * 8;
        lines.push(format!("{} means {:.4}/{:.4}/{:.4} monotone {monotone}/{pairs}", m.name(), means[0], means[1], means[2]));
    }
    let lgmd = mean(&cell_values(&report, Method::Lgmd, 0.3, "e1"));
    let pmf = mean(&cell_values(&report, Method::Pmf, 0.3, "e1"));
    ok &= lgmd <= pmf;
    let secs = started.elapsed().as_secs_f64();
    ok &= secs < 1200.0;
    verdict(
        "completion robustness",
        ok,
        format!("{}; keep 0.3 lgmd {lgmd:.4} vs pmf {pmf:.4}; {secs:.0}s", lines.join("; ")),
    );
}

#[test]
fn learned_graph_recovers_significant_edges() {
    let cfg = ExperimentConfig {
        task: Task::Structure,
        methods: vec![Method::Lgmd],
        sweep: vec![0.1],
        noise_ratio: 0.3,
        seed: 99,
        ..ExperimentConfig::default()
    };
    let tuned = tune_hyperparams(&cfg, cfg.tune_budget).unwrap();
    let h = cfg.solver_hyperparams(tuned.lambda1, tuned.lambda2);
    let seeds = 30;
    let (mut lgmd_e7, mut knn_e7, mut rate_10, mut rate_30) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let inst = gen_instance(100, 100, 20, 0.3, 0.06, 5000 + seed).unwrap();
        let fit = fit_lgmd(&inst.y_no, &h, Variant::Plain).unwrap();
        let knn = knn_graph(&inst.y_no, cfg.knn_neighbors, Axis::Rows).unwrap();
        let at_10 = edge_recovery(&inst.a_gt, &fit.a, 0.1).unwrap() as f64;
        let at_30 = edge_recovery(&inst.a_gt, &fit.a, 0.3).unwrap() as f64;
        lgmd_e7 += at_10 / seeds as f64;
        knn_e7 += edge_recovery(&inst.a_gt, &knn, 0.1).unwrap() as f64 / seeds as f64;
        rate_10 += at_10 / kept_edges(&inst.a_gt, 0.1) as f64 / seeds as f64;
        rate_30 += at_30 / kept_edges(&inst.a_gt, 0.3) as f64 / seeds as f64;
    }
    verdict(
        "structure recovery",
        lgmd_e7 >= knn_e7 && rate_10 >= rate_30,
        format!("E7@0.1 lgmd {lgmd_e7:.2} vs kNN {knn_e7:.2}; lgmd rate @0.1 {rate_10:.3} vs @0.3 {rate_30:.3}"),
    );
}

#[test]
fn gpca_satisfies_its_constraints() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..=15);
        let p = rng.random_range(3..=15);
        let k = rng.random_range(1..=n.min(p));
        let y = gaussian(n, p, &mut rng);
        let a = PrecisionGraph::new(random_spd(n, &mut rng)).unwrap();
        let b = PrecisionGraph::new(random_spd(p, &mut rng)).unwrap();
        let g = gpca_postprocess(&y, &a, &b, k).unwrap();
        let q = a.covariance().unwrap();
        let r = b.covariance().unwrap();
        let eye = DMatrix::<f64>::identity(k, k);
        worst = worst.max((g.u.transpose() * &q * &g.u - &eye).norm());
        worst = worst.max((g.v.transpose() * &r * &g.v - &eye).norm());
    }
    let mut svd_gap = 0.0f64;
    for _ in 0..20 {
        let (n, p) = (rng.random_range(3..=15), rng.random_range(3..=15));
        let k = rng.random_range(1..=n.min(p));
        let y = gaussian(n, p, &mut rng);
        let g = gpca_postprocess(&y, &PrecisionGraph::identity(n), &PrecisionGraph::identity(p), k).unwrap();
        let (u, s, v) = truncated_svd(&y, k).unwrap();
        for c in 0..k {
            let sign = g.u.column(c).dot(&u.column(c)).signum();
            svd_gap = svd_gap.max((g.u.column(c) * sign - u.column(c)).amax());
            svd_gap = svd_gap.max((g.v.column(c) * sign - v.column(c)).amax());
            svd_gap = svd_gap.max((g.d[c] - s[c]).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "GPCA contract",
        worst < 1e-8 && svd_gap < 1e-8 && secs < 10.0,
        format!("max constraint deviation {worst:.2e}, identity-metric gap to SVD {svd_gap:.2e}, {secs:.1}s"),
    );
}

#[test]
fn inner_loop_never_increases_the_objective() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(17);
    let mut worst = f64::NEG_INFINITY;
    for run in 0..1000 {
        let n = rng.random_range(2..=50);
        let p = rng.random_range(2..=50);
        let k = rng.random_range(1..=n.min(p).min(8));
        let values = gaussian(n, k, &mut rng) * gaussian(k, p, &mut rng) + gaussian(n, p, &mut rng) * rng.random_range(0.0..1.0);
        let y = if run % 3 == 0 {
            let mut mask = DMatrix::from_fn(n, p, |_, _| rng.random_bool(0.7));
            for i in 0..n {
                mask[(i, i % p)] = true;
            }
            for j in 0..p {
                mask[(j % n, j)] = true;
            }
            DataMatrix::with_mask(values, mask).unwrap()
        } else {
            DataMatrix::new(values).unwrap()
        };
        let qa = Penalty::new(random_spd(n, &mut rng));
        let qb = Penalty::new(random_spd(p, &mut rng));
        let f = FactorPair::new(gaussian(n, k, &mut rng), gaussian(p, k, &mut rng)).unwrap();
        let h = Hyperparams {
            lambda1: 10f64.powf(rng.random_range(-2.0..2.0)),
            lambda2: 10f64.powf(rng.random_range(-2.0..2.0)),
            max_inner: 30,
            ..Hyperparams::with_rank(k)
        };
        let out = inner_als_with(&y, &f, &qa, &qb, &h).unwrap();
        let exit = *out.trace.last().unwrap();
        worst = worst.max((exit - out.entry_objective) / out.entry_objective.abs().max(f64::MIN_POSITIVE));
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "inner-loop monotonicity",
        worst <= 1e-10 && secs < 120.0,
        format!("worst relative rise {worst:.2e} over 1000 runs, {secs:.1}s"),
    );
}

#[test]
fn laplacian_estimator_reaches_one_optimum_from_any_start() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(3..=15);
        let samples = gaussian(d, 3 * d, &mut rng);
        let s = &samples * samples.transpose() / (3 * d) as f64;
        let rho = rng.random_range(0.01..0.2);
        let objectives: Vec<f64> = (0..5)
            .map(|_| {
                let opts = LaplacianGlassoOptions {
                    init_weights: Some((0..d * (d - 1) / 2).map(|_| rng.random_range(0.0..1.0)).collect()),
                    init_sigma2: Some(rng.random_range(0.2..5.0)),
                    ..LaplacianGlassoOptions::default()
                };
                laplacian_constrained_glasso_with(&s, rho, Sigma2::Optimize, &opts).unwrap().objective
            })
            .collect();
        let hi = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = objectives.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max((hi - lo) / hi.abs().max(1e-12));
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "LGMD+ convexity",
        worst <= 1e-4 && secs < 120.0,
        format!("max relative spread {worst:.2e} across 5 starts on 20 problems, {secs:.1}s"),
    );
}

#[test]
fn clustering_accuracy_ordering() {
    let cfg = ExperimentConfig {
        task: Task::Cluster,
        methods: vec![Method::Kmeans, Method::Pmf, Method::Dgrmd, Method::Lgmd],
        data: DataSource::Mixture(ClusterSpec::default()),
        sweep: vec![5.0],
        repetitions: 20,
        rank: ClusterSpec::default().rank,
        tuning: TuneScope::None,
        seed: 31,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let stats: Vec<(Method, f64, f64)> = [Method::Lgmd, Method::Dgrmd, Method::Pmf, Method::Kmeans]
        .into_iter()
        .map(|m| {
            let a = report.aggregate_for(m, 5.0).unwrap();
            (m, a.mean_of("clustering_accuracy").unwrap(), a.stderr_of("clustering_accuracy").unwrap())
        })
        .collect();
    let ok = stats.windows(2).all(|w| w[1].1 - w[0].1 <= w[0].2.max(w[1].2));
    let detail = stats.iter().map(|(m, mu, se)| format!("{} {mu:.4}±{se:.4}", m.name())).collect::<Vec<_>>().join(", ");
    verdict("clustering ordering", ok, detail);
}

#[test]
fn matrix_normal_rows_have_the_requested_covariance() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let a = gen_sparse_precision(4, 0.5, 300 + seed).unwrap();
        let cols = 200_000;
        let x = sample_matrix_normal(4, cols, Some(&a), None, 400 + seed).unwrap();
        let emp = &x * x.transpose() / cols as f64;
        let truth = a.covariance().unwrap();
        worst = worst.max((emp - &truth).norm() / truth.norm());
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "matrix-normal sampler fidelity",
        worst < 0.05 && secs < 30.0,
        format!("max relative Frobenius error {worst:.4} over 5 precisions, {secs:.1}s"),
    );
}
