use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use lgmd::harness::{
    emit_report, fit_method, run_experiment, save_matrix, tune_hyperparams, write_report_csv, DataSource, EstimatedGraph,
    ExperimentConfig, ExperimentReport, FileSource, MatrixFormat, Method, ReportFormat, Status, Task, TuneScope,
    TuneStrategy, SCHEMA_VERSION,
};
use lgmd::metrics::masked_rmse;
use lgmd::model::DataMatrix;
use lgmd::synth::{gen_cluster_instance, gen_instance, gen_mask, ClusterSpec};
use lgmd::Error;

#[derive(Parser)]
#[command(name = "lgmd", version, about = "Learnable graph-regularized matrix decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance (or labeled mixture) as matrix files.
    Synth(SynthArgs),
    /// Fit one method to a matrix file and write its factors and graphs.
    Fit(FitArgs),
    /// Noise-ratio sweep scored against the ground truth.
    Denoise(ExperimentArgs),
    /// Keep-fraction sweep scored on held-out entries.
    Complete(ExperimentArgs),
    /// Cluster-count sweep scored by clustering accuracy.
    Cluster(ExperimentArgs),
    /// Search (λ1, λ2) by held-out masked RMSE.
    Tune(TuneArgs),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (reports) or directory (matrices). Reports default to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv`/`json` for reports, `csv`/`mtx` for matrices.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct Overrides {
    /// Matrix file to use instead of synthetic data.
    #[arg(long)]
    input: Option<PathBuf>,
    /// The last column of --input holds class labels.
    #[arg(long)]
    labels: bool,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    /// none, per_level or per_cell.
    #[arg(long, value_parser = by_name::<TuneScope>)]
    tuning: Option<TuneScope>,
    /// random or surrogate.
    #[arg(long, value_parser = by_name::<TuneStrategy>)]
    strategy: Option<TuneStrategy>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// Task whose data the search runs on.
    #[arg(long, value_parser = by_name::<Task>)]
    task: Option<Task>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled cluster mixture instead of a two-graph instance.
    #[arg(long)]
    mixture: bool,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 20)]
    rank: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_ratio: f64,
    #[arg(long, default_value_t = 0.06)]
    edge_fraction: f64,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// Observed fraction of the noisy matrix; the rest is left missing.
    #[arg(long)]
    keep: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "lgmd")]
    method: Method,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
}

fn by_name<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value '{s}'"))
}

/// An error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Parse { .. }
            | Error::DimensionMismatch(_)
            | Error::ZeroVariance(_)
            | Error::DegenerateInput(_)
            | Error::EmptySelection
            | Error::DegenerateMask(_)
            | Error::RankDeficient
            | Error::Io(_) => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => synth(args),
        Command::Fit(args) => fit(args),
        Command::Denoise(args) => experiment(Task::Denoise, args),
        Command::Complete(args) => experiment(Task::Complete, args),
        Command::Cluster(args) => experiment(Task::Cluster, args),
        Command::Tune(args) => tune(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn base_config(common: &Common) -> Result<(ExperimentConfig, bool), Failure> {
    match &common.config {
        Some(path) => Ok((ExperimentConfig::load(path)?, true)),
        None => Ok((ExperimentConfig::default(), false)),
    }
}

fn build_config(task: Task, base: (ExperimentConfig, bool), common: &Common, o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let (mut cfg, from_file) = base;
    cfg.task = task;
    if !from_file {
        match task {
            Task::Cluster => {
                cfg.data = DataSource::Mixture(ClusterSpec::default());
                cfg.methods = vec![Method::Kmeans, Method::Pmf, Method::Lgmd];
                cfg.sweep = vec![5.0];
                cfg.rank = 5;
            }
            Task::Complete => cfg.methods = vec![Method::Pmf, Method::Lgmd],
            _ => {}
        }
    }
    if let Some(path) = &o.input {
        cfg.data = DataSource::File(FileSource { path: path.clone(), format: None, label_column: o.labels });
    }
    if let Some(v) = &o.methods {
        cfg.methods = v.clone();
    }
    if let Some(v) = &o.sweep {
        cfg.sweep = v.clone();
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = o.$field { cfg.$field = v; })* };
    }
    set!(repetitions, rank, lambda1, lambda2, eta1, eta2, noise_ratio);
    if let Some(v) = o.tuning {
        cfg.tuning = v;
    }
    if let Some(v) = o.strategy {
        cfg.tune_strategy = v;
    }
    if let Some(v) = o.budget {
        cfg.tune_budget = v;
    }
    if o.workers.is_some() {
        cfg.workers = o.workers;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_format(common: &Common) -> Result<ReportFormat, Failure> {
    match &common.format {
        None => Ok(ReportFormat::Csv),
        Some(s) => s.parse().map_err(|_| config_error(format!("report format must be csv or json, got '{s}'"))),
    }
}

fn matrix_format(common: &Common) -> Result<MatrixFormat, Failure> {
    match &common.format {
        None => Ok(MatrixFormat::Csv),
        Some(s) => s.parse().map_err(|_| config_error(format!("matrix format must be csv or mtx, got '{s}'"))),
    }
}

fn experiment(task: Task, args: ExperimentArgs) -> Result<(), Failure> {
    let cfg = build_config(task, base_config(&args.common)?, &args.common, &args.overrides)?;
    let format = report_format(&args.common)?;
    let report = run_experiment(&cfg)?;
    match &args.common.out {
        Some(path) => emit_report(&report, path, format)?,
        None => print_report(&report, format)?,
    }
    let failed = report.records.iter().filter(|r| r.status == Status::Failed).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.records.len());
    }
    if !report.records.is_empty() && failed == report.records.len() {
        let first = report.records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Failure { code: 3, message: format!("every cell failed; first error: {first}") });
    }
    Ok(())
}

fn print_report(report: &ExperimentReport, format: ReportFormat) -> Result<(), Failure> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Csv => write_report_csv(report, &mut buf)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut buf, report).map_err(Error::from)?;
            buf.push(b'\n');
        }
    }
    emit_stdout(&String::from_utf8_lossy(&buf))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit_stdout(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

fn tune(args: TuneArgs) -> Result<(), Failure> {
    let base = base_config(&args.common)?;
    let task = args.task.unwrap_or(base.0.task);
    let cfg = build_config(task, base, &args.common, &args.overrides)?;
    let format = report_format(&args.common)?;
    let method = cfg.methods.iter().copied().find(|m| m.is_tunable()).ok_or_else(|| config_error("no tunable method selected"))?;
    let outcome = tune_hyperparams(&cfg, cfg.tune_budget)?;
    if outcome.score.is_none() {
        return Err(Failure { code: 3, message: "every probe failed".into() });
    }
    let text = match format {
        ReportFormat::Json => {
            let value = json!({
                "schema_version": SCHEMA_VERSION,
                "method": method.name(),
                "lambda1": outcome.lambda1,
                "lambda2": outcome.lambda2,
                "score": outcome.score,
                "history": outcome.history,
            });
            serde_json::to_string_pretty(&value).map_err(Error::from)? + "\n"
        }
        ReportFormat::Csv => {
            let mut s = String::from("probe,lambda1,lambda2,score,best\n");
            for (i, p) in outcome.history.iter().enumerate() {
                let best = p.lambda1 == outcome.lambda1 && p.lambda2 == outcome.lambda2;
                let score = p.score.map(|v| v.to_string()).unwrap_or_default();
                s += &format!("{i},{},{},{score},{}\n", p.lambda1, p.lambda2, best);
            }
            s
        }
    };
    match &args.common.out {
        Some(path) => std::fs::write(path, text).map_err(Error::from)?,
        None => emit_stdout(&text)?,
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path, Failure> {
    let dir = common.out.as_deref().ok_or_else(|| config_error("--out <DIR> is required"))?;
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(dir)
}

fn extension(format: MatrixFormat) -> &'static str {
    match format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::MatrixMarket => "mtx",
    }
}

fn write_dense(dir: &Path, name: &str, m: &DMatrix<f64>, format: MatrixFormat) -> Result<String, Error> {
    let file = format!("{name}.{}", extension(format));
    save_matrix(&dir.join(&file), &DataMatrix::new(m.clone())?, format)?;
    Ok(file)
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> Result<(), Error> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    if args.common.config.is_some() {
        return Err(config_error("synth takes its parameters as flags, not --config"));
    }
    let format = matrix_format(&args.common)?;
    let dir = out_dir(&args.common)?;
    let seed = args.common.seed.unwrap_or(0);
    let mut files = Vec::new();
    let manifest = if args.mixture {
        let spec = ClusterSpec {
            points: args.n,
            features: args.p,
            clusters: args.clusters,
            rank: args.rank,
            noise_ratio: args.noise_ratio,
            ..ClusterSpec::default()
        };
        let inst = gen_cluster_instance(&spec, seed)?;
        let mut labeled = inst.y.values().clone().insert_column(args.p, 0.0);
        for (i, &l) in inst.labels.iter().enumerate() {
            labeled[(i, args.p)] = l as f64;
        }
        files.push(write_dense(dir, "y", &labeled, format)?);
        files.push(write_dense(dir, "x_gt", &inst.x_gt, format)?);
        files.push(write_dense(dir, "a_gt", inst.a_gt.theta(), format)?);
        json!({ "kind": "mixture", "seed": seed, "spec": spec, "label_column": true, "files": files })
    } else {
        let inst = gen_instance(args.n, args.p, args.rank, args.noise_ratio, args.edge_fraction, seed)?;
        let y = match args.keep {
            Some(keep) if keep < 1.0 => {
                let mask = gen_mask(args.n, args.p, keep, seed.wrapping_add(1))?;
                DataMatrix::with_mask(inst.y_no.values().clone(), mask)?
            }
            _ => inst.y_no.clone(),
        };
        let file = format!("y.{}", extension(format));
        save_matrix(&dir.join(&file), &y, format)?;
        files.push(file);
        files.push(write_dense(dir, "y_gt", inst.y_gt.values(), format)?);
        files.push(write_dense(dir, "x_gt", &inst.x_gt, format)?);
        files.push(write_dense(dir, "w_gt", &inst.w_gt, format)?);
        files.push(write_dense(dir, "a_gt", inst.a_gt.theta(), format)?);
        files.push(write_dense(dir, "b_gt", inst.b_gt.theta(), format)?);
        json!({
            "kind": "instance",
            "seed": seed,
            "n": args.n,
            "p": args.p,
            "rank": args.rank,
            "noise_ratio": args.noise_ratio,
            "edge_fraction": args.edge_fraction,
            "keep": args.keep,
            "sigma_n": inst.sigma_n,
            "files": files,
        })
    };
    write_manifest(dir, manifest)?;
    Ok(())
}

fn graph_matrix(g: &EstimatedGraph) -> &DMatrix<f64> {
    match g {
        EstimatedGraph::Precision(p) => p.theta(),
        EstimatedGraph::Laplacian(l) => l.matrix(),
    }
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    if args.method == Method::Kmeans {
        return Err(config_error("kmeans has no factors to fit"));
    }
    let (mut cfg, _) = base_config(&args.common)?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(rank, lambda1, lambda2, eta1, eta2);
    let format = matrix_format(&args.common)?;
    let data = lgmd::harness::load_matrix(&args.input, MatrixFormat::from_path(&args.input))?;
    if cfg.rank == 0 || cfg.rank > data.nrows().min(data.ncols()) {
        return Err(config_error(format!("rank {} does not fit a {}x{} matrix", cfg.rank, data.nrows(), data.ncols())));
    }
    let h = cfg.solver_hyperparams(cfg.lambda1, cfg.lambda2);
    h.validate().map_err(|e| config_error(e.to_string()))?;
    let dir = out_dir(&args.common)?;
    let started = std::time::Instant::now();
    let result = fit_method(args.method, &data, &h, cfg.knn_neighbors)?;
    let elapsed = started.elapsed().as_secs_f64();

    let observed = match data.mask() {
        Some(m) => m.clone(),
        None => DMatrix::from_element(data.nrows(), data.ncols(), true),
    };
    let fit_rmse = masked_rmse(data.values(), &result.recon, &observed)?;
    let mut files = vec![
        write_dense(dir, "x", &result.x, format)?,
        write_dense(dir, "w", &result.w, format)?,
        write_dense(dir, "reconstruction", &result.recon, format)?,
    ];
    let mut edges = serde_json::Map::new();
    for (name, graph) in [("sample_graph", &result.sample_graph), ("feature_graph", &result.feature_graph)] {
        if let Some(g) = graph {
            files.push(write_dense(dir, name, graph_matrix(g), format)?);
            edges.insert(name.into(), json!(g.edge_count()));
        }
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "method": args.method.name(),
        "input": args.input,
        "rows": data.nrows(),
        "cols": data.ncols(),
        "rank": cfg.rank,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "eta1": cfg.eta1,
        "eta2": cfg.eta2,
        "observed_rmse": fit_rmse,
        "edges": edges,
        "wall_time_s": elapsed,
        "files": files,
    });
    write_manifest(dir, summary.clone())?;
    emit_stdout(&(serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n"))
}
