//! Experiment plumbing: matrix files, JSON configs, λ search, task runners
//! and reports.

pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod tune;

pub use config::{DataSource, ExperimentConfig, FileSource, Method, SolverSettings, SynthSource, Task, TuneScope, TuneStrategy};
pub use experiment::{
    derive_seed, fit_method, run_cluster, run_complete, run_denoise, run_experiment, run_structure, tune_hyperparams, EstimatedGraph,
    MethodFit,
};
pub use io::{load_matrix, save_matrix, MatrixFormat};
pub use report::{emit_report, write_report_csv, Aggregate, ExperimentReport, Record, ReportFormat, Status, SCHEMA_VERSION};
pub use tune::{search, Probe, SearchBox, TuneOutcome};
