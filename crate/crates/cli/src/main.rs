use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mescf::bounds::{bound_report, BoundContext, KernelClass};
use mescf::distributions::ChiSquared;
use mescf::harness::{
    emit_results, load_csv, reload_trials, run_method, significance_report, subsample_to_min, sweep, DataSource, ExperimentConfig,
    Method, RankMode, TrialTiming,
};
use mescf::optimize::{InitScheme, OptimConfig};
use mescf::synth::{ToyKind, ToyProblem};
use mescf::{Error, Result, SamplePair, TestParams, TestResult};

#[derive(Parser)]
#[command(name = "mescf", version, about = "Linear-time interpretable two-sample tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test on two CSV samples and print the result as JSON.
    Test(TestArgs),
    /// Estimate rejection rates over repeated trials.
    Power(PowerArgs),
    /// Count how often each coordinate of the optimized locations ranks
    /// among the k largest (or smallest).
    Features(FeaturesArgs),
    /// Evaluate the power lower bound and the deviation bound.
    Bound(BoundArgs),
}

/// Optimizer and regularization settings shared by `test` and `power`.
#[derive(Args, Clone)]
struct TuningArgs {
    /// Regularization γ_n; derived from the features when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 0.05)]
    sigma_step: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Bandwidth grid; defaults to median distance × 2^k, k = −4..4.
    #[arg(long, value_delimiter = ',')]
    sigma_grid: Option<Vec<f64>>,
    /// Draw initial locations from random training points.
    #[arg(long)]
    init_random_points: bool,
    /// Permutations for mmd-quad.
    #[arg(long, default_value_t = 400)]
    permutations: usize,
}

impl TuningArgs {
    fn optim(&self) -> OptimConfig {
        OptimConfig {
            max_iters: self.max_iters,
            step_size: self.step_size,
            sigma_step: self.sigma_step,
            tolerance: self.tolerance,
            sigma_grid: self.sigma_grid.clone(),
            init: if self.init_random_points {
                InitScheme::RandomPoints
            } else {
                InitScheme::FittedNormal
            },
            ..OptimConfig::default()
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value = "me-full")]
    method: Method,
    #[arg(long, default_value_t = 5)]
    j: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// The CSV files start with a header row.
    #[arg(long)]
    header: bool,
    /// Subsample the larger sample to the size of the smaller one.
    #[arg(long)]
    subsample_to_min: bool,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct PowerArgs {
    /// Synthetic problem: sg, gmd, gvd or blobs.
    #[arg(long, conflicts_with_all = ["x", "y"], required_unless_present = "x")]
    problem: Option<ToyKind>,
    #[arg(long, requires = "y")]
    x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    y: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    subsample_to_min: bool,
    #[arg(long, default_value = "me-full")]
    method: Method,
    /// Test-half sizes (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n: Vec<usize>,
    /// Dimensions (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "2")]
    d: Vec<usize>,
    /// GMD: number of shifted leading coordinates.
    #[arg(long, default_value_t = 1)]
    shifted_coords: usize,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    j: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON object whose keys override the experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct FeaturesArgs {
    /// JSON-lines trial file written by `power`.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "largest")]
    mode: RankMode,
    /// CSV whose header row names the coordinates.
    #[arg(long)]
    names: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 5)]
    j: usize,
    #[arg(long, default_value_t = 1.0)]
    ctilde: f64,
    #[arg(long)]
    n: usize,
    /// Defaults to n^{-1/4}.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Kernel class: iso or full.
    #[arg(long, default_value = "iso")]
    class: KernelClass,
    /// λ_n values at which to evaluate the lower bound.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Universal constants C1,C2,C3.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    universal: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct TestOutput {
    method: Method,
    #[serde(flatten)]
    result: TestResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<TestParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_test(a: TestArgs) -> Result<()> {
    let (x, y) = (load_csv(&a.x, a.header)?.data, load_csv(&a.y, a.header)?.data);
    let (x, y) = if a.subsample_to_min { subsample_to_min(&x, &y, a.seed) } else { (x, y) };
    let sample = SamplePair::new(x, y)?;
    let mut cfg = ExperimentConfig::toy(a.method, ToyProblem::sg(1), 0, a.j, 1, a.seed);
    cfg.source = DataSource::Files {
        x: a.x,
        y: a.y,
        has_header: a.header,
        subsample_to_min: a.subsample_to_min,
    };
    cfg.alpha = a.alpha;
    cfg.gamma = a.tuning.gamma;
    cfg.optim = a.tuning.optim();
    cfg.permutations = a.tuning.permutations;
    cfg.validate()?;
    let out = run_method(&cfg, &sample, a.seed, &mut TrialTiming::default())?;
    print_json(&TestOutput {
        method: a.method,
        result: out.result,
        theta: out.theta,
        sigma: out.sigma,
    })
}

fn cmd_power(a: PowerArgs) -> Result<()> {
    let source = match (a.problem, a.x, a.y) {
        (Some(kind), _, _) => {
            let p = ToyProblem::new(kind, a.d[0])?.with_shifted_coords(a.shifted_coords);
            DataSource::Toy(p)
        }
        (None, Some(x), Some(y)) => DataSource::Files {
            x,
            y,
            has_header: a.header,
            subsample_to_min: a.subsample_to_min,
        },
        _ => return Err(Error::Config("give either --problem or both --x and --y".into())),
    };
    let mut cfg = ExperimentConfig::toy(a.method, ToyProblem::sg(1), a.n[0], a.j, a.trials, a.seed);
    cfg.source = source;
    cfg.alpha = a.alpha;
    cfg.gamma = a.tuning.gamma;
    cfg.optim = a.tuning.optim();
    cfg.permutations = a.tuning.permutations;
    cfg.workers = a.workers;
    cfg.output = Some(a.out.clone());
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let overrides: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg = cfg.apply_overrides(&overrides)?;
    }
    let (ns, ds) = match &cfg.source {
        DataSource::Toy(p) if p.kind == ToyKind::Blobs => (a.n.clone(), vec![p.d]),
        DataSource::Toy(_) => (a.n.clone(), a.d.clone()),
        DataSource::Files { .. } => (vec![], vec![]),
    };
    let outs = sweep(&cfg, &ns, &ds)?;
    emit_results(&outs, &a.out)?;
    let summaries: Vec<_> = outs.iter().map(|o| &o.summary).collect();
    print_json(&summaries)
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let reports = reload_trials(&a.reports)?;
    let mut report = significance_report(&reports, a.k, a.mode)?;
    if let Some(path) = &a.names {
        let names = names_from_header(path)?;
        report = report.with_names(&names)?;
    }
    print_json(&report)
}

fn names_from_header(path: &PathBuf) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let first = text.lines().next().unwrap_or("");
    Ok(first.split(',').map(|s| s.trim().to_string()).collect())
}

fn cmd_bound(a: BoundArgs) -> Result<()> {
    let gamma = a.gamma.unwrap_or_else(|| (a.n as f64).powf(-0.25));
    let t_alpha = ChiSquared::new(a.j)?.quantile(1.0 - a.alpha)?;
    let mut ctx = BoundContext::new(a.b, a.j, a.ctilde, a.n, gamma, t_alpha, a.delta, a.d)?;
    if let Some(u) = a.universal {
        ctx = ctx.with_universal([u[0], u[1], u[2]])?;
    }
    print_json(&bound_report(&ctx, a.class, &a.lambda)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Power(a) => cmd_power(a),
        Command::Features(a) => cmd_features(a),
        Command::Bound(a) => cmd_bound(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
