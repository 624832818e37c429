use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::seq::index;
use rand::SeedableRng;

use super::config::{DataSource, ExperimentConfig, Method, Task, TuneScope};
use super::io::{load_matrix, MatrixFormat};
use super::report::{ExperimentReport, Record, Status};
use super::tune::{search, SearchBox, TuneOutcome};
use crate::decomposition::{fit_dgrmd, fit_lgmd, fit_pca, fit_pmf, gpca_postprocess, Variant};
use crate::error::{Error, Result};
use crate::linalg::truncated_svd;
use crate::metrics::{clustering_accuracy, column_correlations, edge_recovery, kmeans, masked_rmse, rmse, subspace_angle, MetricReport};
use crate::model::{knn_graph, Axis, DataMatrix, EdgeSet, Hyperparams, LaplacianGraph, Mask, PrecisionGraph};
use crate::synth::{gen_cluster_instance, gen_instance, gen_mask, ClusterSpec, SyntheticInstance};

/// Graph a method estimated for one side of the data.
#[derive(Debug, Clone)]
pub enum EstimatedGraph {
    Precision(PrecisionGraph),
    Laplacian(LaplacianGraph),
}

impl EstimatedGraph {
    pub fn recovered(&self, truth: &PrecisionGraph, top_fraction: f64) -> Result<usize> {
        match self {
            EstimatedGraph::Precision(g) => edge_recovery(truth, g, top_fraction),
            EstimatedGraph::Laplacian(g) => edge_recovery(truth, g, top_fraction),
        }
    }

    pub fn edge_count(&self) -> usize {
        match self {
            EstimatedGraph::Precision(g) => g.edge_count(),
            EstimatedGraph::Laplacian(g) => g.edge_count(),
        }
    }
}

/// Factors as reported for evaluation (after GPCA for the learned-graph
/// methods) and the graphs behind them.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub recon: DMatrix<f64>,
    pub sample_graph: Option<EstimatedGraph>,
    pub feature_graph: Option<EstimatedGraph>,
}

/// Fits one factorization method. `kmeans` has no factors and is rejected.
pub fn fit_method(method: Method, data: &DataMatrix, h: &Hyperparams, knn_neighbors: usize) -> Result<MethodFit> {
    // Fixed-graph fits are reported in the SVD gauge of their reconstruction.
    let plain = |fit: crate::decomposition::FitResult| -> Result<MethodFit> {
        let recon = fit.factors.reconstruction();
        let (u, s, v) = truncated_svd(&recon, h.k)?;
        let x = u * DMatrix::from_diagonal(&s);
        Ok(MethodFit { x, w: v, recon, sample_graph: None, feature_graph: None })
    };
    match method {
        Method::Pca => plain(fit_pca(data, h.k)?),
        Method::Pmf => plain(fit_pmf(data, h)?),
        Method::Dgrmd => {
            let ls = knn_graph(data, knn_neighbors, Axis::Rows)?;
            let lf = knn_graph(data, knn_neighbors, Axis::Columns)?;
            let mut out = plain(fit_dgrmd(data, h, &ls, &lf)?)?;
            out.sample_graph = Some(EstimatedGraph::Laplacian(ls));
            out.feature_graph = Some(EstimatedGraph::Laplacian(lf));
            Ok(out)
        }
        Method::Lgmd | Method::LgmdPlus => {
            let variant = if method == Method::Lgmd { Variant::Plain } else { Variant::LaplacianPlus };
            let fit = fit_lgmd(data, h, variant)?;
            let recon = fit.factors.reconstruction();
            let gpca = gpca_postprocess(&recon, &fit.a, &fit.b, h.k)?;
            let factors = gpca.factors()?;
            Ok(MethodFit {
                recon: factors.reconstruction(),
                x: factors.x,
                w: factors.w,
                sample_graph: Some(EstimatedGraph::Precision(fit.a)),
                feature_graph: Some(EstimatedGraph::Precision(fit.b)),
            })
        }
        Method::Kmeans => Err(Error::invalid("kmeans is not a factorization method")),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for `(purpose, level, repetition)`.
pub fn derive_seed(base: u64, purpose: u64, level: usize, repetition: usize) -> u64 {
    splitmix(splitmix(splitmix(base ^ purpose.wrapping_mul(0xA24B_AED4_963E_E407)) ^ level as u64) ^ repetition as u64)
}

const PURPOSE_CELL: u64 = 1;
const PURPOSE_MASK: u64 = 2;
const PURPOSE_CALIBRATION: u64 = 3;
const PURPOSE_HOLDOUT: u64 = 4;
const PURPOSE_SEARCH: u64 = 5;
const PURPOSE_KMEANS: u64 = 6;

/// Training data, evaluation selection and ground truth for one cell.
struct Cell {
    train: DataMatrix,
    /// Entries scored by E1.
    test: Option<Mask>,
    /// Values E1 is measured against.
    observed: DMatrix<f64>,
    truth: Option<SyntheticInstance>,
    labels: Option<Vec<usize>>,
    clusters: usize,
}

fn load_file(cfg: &ExperimentConfig) -> Result<(DataMatrix, Option<Vec<usize>>)> {
    let DataSource::File(f) = &cfg.data else { unreachable!("checked by caller") };
    let fmt = f.format.unwrap_or_else(|| MatrixFormat::from_path(&f.path));
    let m = load_matrix(&f.path, fmt)?;
    if !f.label_column {
        return Ok((m, None));
    }
    let (n, p) = m.shape();
    if p < 2 {
        return Err(Error::DegenerateInput("label column leaves no features".into()));
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let v = m.values()[(i, p - 1)];
        if !m.is_observed(i, p - 1) || v < 0.0 || v.fract() != 0.0 {
            return Err(Error::DegenerateInput(format!("row {} has an invalid label", i + 1)));
        }
        labels.push(v as usize);
    }
    let features = m.values().columns(0, p - 1).into_owned();
    let data = match m.mask() {
        Some(mask) => DataMatrix::with_mask(features, mask.columns(0, p - 1).into_owned())?,
        None => DataMatrix::new(features)?,
    };
    Ok((data, Some(labels)))
}

/// Keeps `keep` of the observed entries of `data` for training; the rest
/// become the test selection.
fn split_observed(data: &DataMatrix, keep: f64, seed: u64) -> Result<(DataMatrix, Mask)> {
    let (n, p) = data.shape();
    if !data.is_masked() {
        let mask = gen_mask(n, p, keep, seed)?;
        let test = mask.map(|b| !b);
        return Ok((data.restricted(&mask)?, test));
    }
    let observed: Vec<usize> = (0..n * p).filter(|&idx| data.is_observed(idx % n, idx / n)).collect();
    let count = (keep * observed.len() as f64).round() as usize;
    if count == 0 || count == observed.len() {
        return Err(Error::DegenerateMask(format!("keeping {count} of {} observed entries", observed.len())));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut mask = DMatrix::from_element(n, p, false);
    for pick in index::sample(&mut rng, observed.len(), count) {
        let idx = observed[pick];
        mask[(idx % n, idx / n)] = true;
    }
    let test = DMatrix::from_fn(n, p, |i, j| data.is_observed(i, j) && !mask[(i, j)]);
    Ok((data.restricted(&mask)?, test))
}

/// `seed` draws the instance and `mask_seed` the train/test split, so cells
/// of one repetition share their instance across sweep levels.
fn build_cell(
    cfg: &ExperimentConfig,
    level: f64,
    seed: u64,
    mask_seed: u64,
    file: Option<&(DataMatrix, Option<Vec<usize>>)>,
) -> Result<Cell> {
    match (&cfg.data, cfg.task) {
        (DataSource::Synth(s), Task::Denoise | Task::Structure) => {
            let ratio = if cfg.task == Task::Denoise { level } else { cfg.noise_ratio };
            let inst = gen_instance(s.n, s.p, cfg.rank, ratio, s.edge_fraction, seed)?;
            Ok(Cell { train: inst.y_no.clone(), test: None, observed: inst.y_no.values().clone(), truth: Some(inst), labels: None, clusters: 0 })
        }
        (DataSource::Synth(s), Task::Complete) => {
            let inst = gen_instance(s.n, s.p, cfg.rank, cfg.noise_ratio, s.edge_fraction, seed)?;
            let keep = if level >= 1.0 { 1.0 - cfg.holdout_fraction } else { level };
            let (train, test) = split_observed(&inst.y_no, keep, mask_seed)?;
            Ok(Cell { train, test: Some(test), observed: inst.y_no.values().clone(), truth: Some(inst), labels: None, clusters: 0 })
        }
        (DataSource::File(_), Task::Complete) => {
            let (data, _) = file.expect("file data loaded");
            let keep = if level >= 1.0 { 1.0 - cfg.holdout_fraction } else { level };
            let (train, test) = split_observed(data, keep, mask_seed)?;
            Ok(Cell { train, test: Some(test), observed: data.values().clone(), truth: None, labels: None, clusters: 0 })
        }
        (DataSource::Mixture(spec), Task::Cluster) => {
            let spec = ClusterSpec { clusters: level as usize, ..spec.clone() };
            let inst = gen_cluster_instance(&spec, seed)?;
            Ok(Cell { observed: inst.y.values().clone(), train: inst.y, test: None, truth: None, labels: Some(inst.labels), clusters: level as usize })
        }
        (DataSource::File(_), Task::Cluster) => {
            let (data, labels) = file.expect("file data loaded");
            Ok(Cell { train: data.clone(), test: None, observed: data.values().clone(), truth: None, labels: labels.clone(), clusters: level as usize })
        }
        (source, task) => Err(Error::Config(format!("data source {source:?} cannot serve the {} task", task.name()))),
    }
}

/// Held-out RMSE of `method` at `(λ1, λ2)` on `data`, training on the rest.
fn holdout_score<'a>(
    cfg: &'a ExperimentConfig,
    method: Method,
    data: &DataMatrix,
    seed: u64,
) -> Result<impl Fn(f64, f64) -> Option<f64> + 'a> {
    let (train, holdout) = split_observed(data, 1.0 - cfg.holdout_fraction, seed)?;
    let values = data.values().clone();
    Ok(move |l1: f64, l2: f64| {
        let h = cfg.solver_hyperparams(l1, l2);
        let fit = fit_method(method, &train, &h, cfg.knn_neighbors).ok()?;
        masked_rmse(&values, &fit.recon, &holdout).ok()
    })
}

fn tune_on(cfg: &ExperimentConfig, method: Method, data: &DataMatrix, seed: u64) -> Result<TuneOutcome> {
    let score = holdout_score(cfg, method, data, splitmix(seed ^ PURPOSE_HOLDOUT))?;
    let bounds = SearchBox { lambda1: cfg.lambda1_bounds, lambda2: cfg.lambda2_bounds };
    Ok(search(bounds, cfg.tune_budget, cfg.tune_strategy, splitmix(seed ^ PURPOSE_SEARCH), score))
}

fn cluster_accuracy(cfg: &ExperimentConfig, method: Method, cell: &Cell, l1: f64, l2: f64, seed: u64) -> Result<f64> {
    let points = if method == Method::Kmeans {
        cell.train.filled_with(&DMatrix::zeros(cell.train.nrows(), cell.train.ncols()))
    } else {
        // Rows of the SVD gauge of the reconstruction, for every method.
        let fit = fit_method(method, &cell.train, &cfg.solver_hyperparams(l1, l2), cfg.knn_neighbors)?;
        let (u, s, _) = truncated_svd(&fit.recon, cfg.rank)?;
        u * DMatrix::from_diagonal(&s)
    };
    let labels = cell.labels.as_ref().ok_or_else(|| Error::DegenerateInput("clustering needs labels".into()))?;
    let pred = kmeans(&points, cell.clusters, splitmix(seed ^ PURPOSE_KMEANS))?;
    clustering_accuracy(&pred, labels)
}

/// Searches `(λ1, λ2)` for the first tunable method of `cfg` on a
/// calibration draw at the first sweep level, scoring held-out RMSE.
pub fn tune_hyperparams(cfg: &ExperimentConfig, budget: usize) -> Result<TuneOutcome> {
    cfg.validate()?;
    let method = cfg
        .methods
        .iter()
        .copied()
        .find(|m| m.is_tunable())
        .ok_or_else(|| Error::Config("no method with tunable λ".into()))?;
    let file = matches!(cfg.data, DataSource::File(_)).then(|| load_file(cfg)).transpose()?;
    let seed = derive_seed(cfg.seed, PURPOSE_CALIBRATION, 0, 0);
    let cell = build_cell(cfg, cfg.sweep[0], seed, splitmix(seed ^ PURPOSE_MASK), file.as_ref())?;
    let cfg = ExperimentConfig { tune_budget: budget.max(1), ..cfg.clone() };
    tune_on(&cfg, method, &cell.train, seed)
}

fn evaluate(cell: &Cell, fit: &MethodFit, top_fraction: f64, level: f64) -> Result<MetricReport> {
    let mut m = MetricReport { level: Some(level), ..MetricReport::default() };
    if let Some(test) = &cell.test {
        m.e1 = Some(masked_rmse(&cell.observed, &fit.recon, test)?);
    }
    m.e3 = column_correlations(&fit.x).ok();
    m.e4 = column_correlations(&fit.w).ok();
    if let Some(truth) = &cell.truth {
        m.e2 = Some(rmse(truth.y_gt.values(), &fit.recon)?);
        m.e5 = subspace_angle(&truth.x_gt, &fit.x).ok();
        m.e6 = subspace_angle(&truth.w_gt, &fit.w).ok();
        let recovered = |g: &Option<EstimatedGraph>, t: &PrecisionGraph| match g {
            Some(g) => g.recovered(t, top_fraction).map(Some),
            None => Ok(Some(0)),
        };
        m.e7 = recovered(&fit.sample_graph, &truth.a_gt)?;
        m.e8 = recovered(&fit.feature_graph, &truth.b_gt)?;
    }
    Ok(m)
}

struct Unit {
    level_idx: usize,
    repetition: usize,
}

type Lambdas = BTreeMap<(Method, usize), (f64, f64)>;

fn run_unit(cfg: &ExperimentConfig, unit: &Unit, lambdas: &Lambdas, file: Option<&(DataMatrix, Option<Vec<usize>>)>) -> Vec<Record> {
    let structure = cfg.task == Task::Structure;
    let levels: Vec<(usize, f64)> =
        if structure { cfg.sweep.iter().copied().enumerate().collect() } else { vec![(unit.level_idx, cfg.sweep[unit.level_idx])] };
    let build_level = if structure { 0.0 } else { cfg.sweep[unit.level_idx] };
    let instance_seed = derive_seed(cfg.seed, PURPOSE_CELL, 0, unit.repetition);
    let mask_seed = derive_seed(cfg.seed, PURPOSE_MASK, unit.level_idx, unit.repetition);
    let seed = derive_seed(cfg.seed, PURPOSE_CELL, unit.level_idx + 1, unit.repetition);
    let failed = |method: Method, level: f64, msg: String, time: f64| Record {
        method,
        task: cfg.task,
        sweep_value: level,
        repetition: unit.repetition,
        status: Status::Failed,
        error: Some(msg),
        lambda1: None,
        lambda2: None,
        wall_time_s: time,
        metrics: MetricReport { level: Some(level), ..MetricReport::default() },
    };

    let cell = match build_cell(cfg, build_level, instance_seed, mask_seed, file) {
        Ok(c) => c,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .flat_map(|&m| levels.iter().map(move |&(_, v)| (m, v)))
                .map(|(m, v)| failed(m, v, e.to_string(), 0.0))
                .collect();
        }
    };

    let mut out = Vec::new();
    for &method in &cfg.methods {
        let started = std::time::Instant::now();
        let lambda_key_level = if structure { 0 } else { unit.level_idx };
        let (l1, l2) = if !method.is_tunable() {
            (f64::NAN, f64::NAN)
        } else if cfg.tuning == TuneScope::PerCell {
            match tune_on(cfg, method, &cell.train, seed) {
                Ok(t) => (t.lambda1, t.lambda2),
                Err(_) => (cfg.lambda1, cfg.lambda2),
            }
        } else {
            lambdas.get(&(method, lambda_key_level)).copied().unwrap_or((cfg.lambda1, cfg.lambda2))
        };
        let tuned = |v: f64| (!v.is_nan()).then_some(v);

        let result: Result<Vec<(f64, MetricReport)>> = (|| {
            if cfg.task == Task::Cluster {
                let level = levels[0].1;
                let acc = cluster_accuracy(cfg, method, &cell, l1, l2, seed)?;
                return Ok(vec![(level, MetricReport { clustering_accuracy: Some(acc), level: Some(level), ..MetricReport::default() })]);
            }
            let fit = fit_method(method, &cell.train, &cfg.solver_hyperparams(l1, l2), cfg.knn_neighbors)?;
            levels
                .iter()
                .map(|&(_, level)| {
                    let frac = if structure { level } else { cfg.top_fraction };
                    Ok((level, evaluate(&cell, &fit, frac, level)?))
                })
                .collect()
        })();
        let elapsed = started.elapsed().as_secs_f64();
        match result {
            Ok(rows) => out.extend(rows.into_iter().map(|(level, metrics)| Record {
                method,
                task: cfg.task,
                sweep_value: level,
                repetition: unit.repetition,
                status: Status::Ok,
                error: None,
                lambda1: tuned(l1),
                lambda2: tuned(l2),
                wall_time_s: elapsed,
                metrics,
            })),
            Err(e) => out.extend(levels.iter().map(|&(_, v)| failed(method, v, e.to_string(), elapsed))),
        }
    }
    out
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Sync, R: Send>(workers: Option<usize>, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R>(_workers: Option<usize>, items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Runs every `(sweep level, repetition)` cell of `cfg` for every method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let file = matches!(cfg.data, DataSource::File(_)).then(|| load_file(cfg)).transpose()?;

    let mut lambdas = Lambdas::new();
    if cfg.tuning == TuneScope::PerLevel {
        let level_count = if cfg.task == Task::Structure { 1 } else { cfg.sweep.len() };
        let jobs: Vec<(Method, usize)> = cfg
            .methods
            .iter()
            .filter(|m| m.is_tunable())
            .flat_map(|&m| (0..level_count).map(move |l| (m, l)))
            .collect();
        let tuned = parallel_map(cfg.workers, &jobs, |&(method, l)| {
            let seed = derive_seed(cfg.seed, PURPOSE_CALIBRATION, l, 0);
            let level = if cfg.task == Task::Structure { 0.0 } else { cfg.sweep[l] };
            build_cell(cfg, level, seed, splitmix(seed ^ PURPOSE_MASK), file.as_ref()).and_then(|cell| tune_on(cfg, method, &cell.train, seed))
        });
        for (job, outcome) in jobs.iter().zip(tuned) {
            if let Ok(t) = outcome {
                lambdas.insert(*job, (t.lambda1, t.lambda2));
            }
        }
    }

    let units: Vec<Unit> = if cfg.task == Task::Structure {
        (0..cfg.repetitions).map(|r| Unit { level_idx: 0, repetition: r }).collect()
    } else {
        (0..cfg.sweep.len()).flat_map(|l| (0..cfg.repetitions).map(move |r| Unit { level_idx: l, repetition: r })).collect()
    };
    let rows = parallel_map(cfg.workers, &units, |u| run_unit(cfg, u, &lambdas, file.as_ref()));
    let mut records: Vec<Record> = rows.into_iter().flatten().collect();
    let level_pos = |v: f64| cfg.sweep.iter().position(|&s| s == v).unwrap_or(usize::MAX);
    let method_pos = |m: Method| cfg.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (level_pos(r.sweep_value), method_pos(r.method), r.repetition));
    Ok(ExperimentReport::new(cfg.task, records))
}

fn run_task(cfg: &ExperimentConfig, task: Task) -> Result<ExperimentReport> {
    if cfg.task != task {
        return Err(Error::Config(format!("config is for the {} task, not {}", cfg.task.name(), task.name())));
    }
    run_experiment(cfg)
}

pub fn run_denoise(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_task(cfg, Task::Denoise)
}

pub fn run_complete(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_task(cfg, Task::Complete)
}

pub fn run_cluster(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_task(cfg, Task::Cluster)
}

pub fn run_structure(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_task(cfg, Task::Structure)
}
