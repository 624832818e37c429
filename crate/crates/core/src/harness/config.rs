use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::MatrixFormat;
use crate::error::{Error, Result};
use crate::model::{Hyperparams, PrecisionScaling, Sigma2, UpdateRule};
use crate::synth::ClusterSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Sweep over noise ratios; E2–E8 against the ground truth.
    Denoise,
    /// Sweep over keep fractions; E1 on held-out entries.
    Complete,
    /// Sweep over cluster counts; clustering accuracy.
    Cluster,
    /// Sweep over top fractions of true edges at a fixed noise ratio; E7/E8.
    Structure,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Complete => "complete",
            Task::Cluster => "cluster",
            Task::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pca,
    Pmf,
    Dgrmd,
    Lgmd,
    LgmdPlus,
    Kmeans,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Pmf => "pmf",
            Method::Dgrmd => "dgrmd",
            Method::Lgmd => "lgmd",
            Method::LgmdPlus => "lgmd_plus",
            Method::Kmeans => "kmeans",
        }
    }

    /// Whether λ1, λ2 mean anything for this method.
    pub fn is_tunable(self) -> bool {
        matches!(self, Method::Pmf | Method::Dgrmd | Method::Lgmd | Method::LgmdPlus)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSource {
    pub n: usize,
    pub p: usize,
    pub edge_fraction: f64,
}

impl Default for SynthSource {
    fn default() -> Self {
        Self { n: 100, p: 100, edge_fraction: 0.06 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<MatrixFormat>,
    /// Last column holds integer class labels (cluster task).
    #[serde(default)]
    pub label_column: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSource),
    Mixture(ClusterSpec),
    File(FileSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuneStrategy {
    #[default]
    Random,
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuneScope {
    /// Use `lambda1`/`lambda2` as given.
    None,
    /// One search per method and sweep level, on a calibration draw.
    #[default]
    PerLevel,
    /// One search per method and cell.
    PerCell,
}

/// Solver settings shared by all factorization methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
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

impl Default for SolverSettings {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            epsilon: h.epsilon,
            jitter: h.jitter,
            max_outer: h.max_outer,
            max_inner: h.max_inner,
            tol_outer: h.tol_outer,
            tol_inner: h.tol_inner,
            update_rule: h.update_rule,
            precision_scaling: h.precision_scaling,
            sigma2: h.sigma2,
        }
    }
}

/// Everything one experiment run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub methods: Vec<Method>,
    pub data: DataSource,
    pub sweep: Vec<f64>,
    pub repetitions: usize,
    pub rank: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda1_bounds: [f64; 2],
    pub lambda2_bounds: [f64; 2],
    pub eta1: f64,
    pub eta2: f64,
    pub seed: u64,
    pub tuning: TuneScope,
    pub tune_budget: usize,
    pub tune_strategy: TuneStrategy,
    /// Fraction of training entries held out to score λ candidates.
    pub holdout_fraction: f64,
    /// Noise ratio for the complete, cluster-free and structure tasks.
    pub noise_ratio: f64,
    /// Fraction of strongest true edges scored by E7/E8 outside the structure task.
    pub top_fraction: f64,
    pub knn_neighbors: usize,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Denoise,
            methods: vec![Method::Pca, Method::Lgmd],
            data: DataSource::Synth(SynthSource::default()),
            sweep: vec![0.5],
            repetitions: 1,
            rank: 20,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda1_bounds: [1e-1, 1e3],
            lambda2_bounds: [1e-1, 1e3],
            eta1: 1.0,
            eta2: 1.0,
            seed: 0,
            tuning: TuneScope::PerLevel,
            tune_budget: 12,
            tune_strategy: TuneStrategy::Random,
            holdout_fraction: 0.1,
            noise_ratio: 0.0,
            top_fraction: 1.0,
            knn_neighbors: 5,
            workers: None,
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        for (name, [lo, hi]) in [("lambda1_bounds", self.lambda1_bounds), ("lambda2_bounds", self.lambda2_bounds)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 < lower < upper, got [{lo}, {hi}]"));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("eta1", self.eta1), ("eta2", self.eta2), ("noise_ratio", self.noise_ratio)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in (0, 1)".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction must lie in (0, 1]".into());
        }
        if self.tuning != TuneScope::None && self.tune_budget == 0 {
            return bad("tune_budget must be positive when tuning".into());
        }
        if self.knn_neighbors == 0 {
            return bad("knn_neighbors must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        for &v in &self.sweep {
            let ok = match self.task {
                Task::Denoise => v >= 0.0 && v.is_finite(),
                Task::Complete | Task::Structure => v > 0.0 && v <= 1.0,
                Task::Cluster => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return bad(format!("sweep value {v} is invalid for the {} task", self.task.name()));
            }
        }
        if self.methods.contains(&Method::Kmeans) && self.task != Task::Cluster {
            return bad("kmeans is only meaningful for the cluster task".into());
        }
        match (&self.data, self.task) {
            (DataSource::Mixture(_), Task::Cluster) | (DataSource::File(_), _) => {}
            (DataSource::Mixture(_), t) => return bad(format!("mixture data only serves the cluster task, not {}", t.name())),
            (DataSource::Synth(_), Task::Cluster) => return bad("the cluster task needs mixture or labeled file data".into()),
            (DataSource::Synth(s), _) => {
                if s.n < 2 || s.p < 2 || !(s.edge_fraction > 0.0 && s.edge_fraction <= 1.0) {
                    return bad("synth source needs n, p >= 2 and edge_fraction in (0, 1]".into());
                }
                if self.rank > s.n.min(s.p) {
                    return bad(format!("rank {} exceeds min(n, p)", self.rank));
                }
            }
        }
        if let DataSource::File(f) = &self.data {
            if self.task == Task::Cluster && !f.label_column {
                return bad("the cluster task needs label_column = true for file data".into());
            }
            if matches!(self.task, Task::Denoise | Task::Structure) {
                return bad(format!("the {} task needs ground truth, use synth data", self.task.name()));
            }
        }
        self.solver_hyperparams(1.0, 1.0).validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solver_hyperparams(&self, lambda1: f64, lambda2: f64) -> Hyperparams {
        let s = &self.solver;
        Hyperparams {
            k: self.rank,
            lambda1,
            lambda2,
            eta1: self.eta1,
            eta2: self.eta2,
            epsilon: s.epsilon,
            jitter: s.jitter,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            tol_outer: s.tol_outer,
            tol_inner: s.tol_inner,
            update_rule: s.update_rule,
            precision_scaling: s.precision_scaling,
            sigma2: s.sigma2,
        }
    }
}
