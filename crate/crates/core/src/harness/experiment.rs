use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Method};
use super::io::load_csv;
use crate::baselines::{hotelling_t2, mmd_lin, mmd_quad, mmd_width_select, MmdKind, PermutationConfig};
use crate::error::{Error, Result};
use crate::features::TestParams;
use crate::linalg::Matrix;
use crate::optimize::{default_sigma_grid, optimize_full, optimize_grid, split, OptimConfig};
use crate::rng::{stream, streams, trial_seed};
use crate::statistic::{run_test, SamplePair, StatConfig, TestResult};
use crate::synth::sample_problem;

/// Largest tolerated fraction of failed trials.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Wall-clock seconds spent in one trial. Kept out of the JSON-lines
/// output so that it stays byte-identical across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub optimize_secs: f64,
    pub test_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub problem: String,
    /// Test-half size.
    pub n: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<TestParams>,
    /// Kernel width chosen for the MMD baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub timing: TrialTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: Method,
    pub problem: String,
    pub n: usize,
    pub d: usize,
    pub j: usize,
    pub alpha: f64,
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub rejections: usize,
    pub proportion: f64,
    pub stderr: f64,
    pub total_runtime_secs: f64,
}

impl ExperimentSummary {
    /// Rejection proportion over completed trials and its binomial
    /// standard error.
    #[allow(clippy::too_many_arguments)]
    pub fn from_reports(method: Method, problem: &str, n: usize, d: usize, j: usize, alpha: f64, reports: &[TrialReport]) -> Self {
        let completed = reports.iter().filter(|r| r.result.is_some()).count();
        let rejections = reports.iter().filter(|r| r.result.is_some_and(|t| t.reject)).count();
        let (proportion, stderr) = proportion_and_stderr(rejections, completed);
        Self {
            method,
            problem: problem.to_string(),
            n,
            d,
            j,
            alpha,
            trials: reports.len(),
            completed,
            failed: reports.len() - completed,
            rejections,
            proportion,
            stderr,
            total_runtime_secs: reports.iter().map(|r| r.timing.optimize_secs + r.timing.test_secs).sum(),
        }
    }
}

pub fn proportion_and_stderr(successes: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 0.0);
    }
    let p = successes as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub reports: Vec<TrialReport>,
}

/// Data shared by all trials of a file-backed experiment.
enum Prepared<'a> {
    Toy(&'a crate::synth::ToyProblem),
    Files { x: Matrix, y: Matrix, subsample: bool },
}

fn subsample_rows(m: &Matrix, k: usize, seed: u64) -> Matrix {
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.shuffle(&mut stream(seed, streams::SUBSAMPLE));
    idx.truncate(k);
    m.select_rows(&idx)
}

/// Randomly subsamples the larger of two row sets down to the size of the
/// smaller one. Equal sizes are returned unchanged.
pub fn subsample_to_min(x: &Matrix, y: &Matrix, seed: u64) -> (Matrix, Matrix) {
    let k = x.nrows().min(y.nrows());
    if x.nrows() > k {
        (subsample_rows(x, k, seed), y.clone())
    } else if y.nrows() > k {
        (x.clone(), subsample_rows(y, k, seed))
    } else {
        (x.clone(), y.clone())
    }
}

impl Prepared<'_> {
    fn sample(&self, n_test: usize, seed: u64) -> Result<SamplePair> {
        match self {
            Prepared::Toy(p) => Ok(sample_problem(p, 2 * n_test, seed)),
            Prepared::Files { x, y, subsample } => {
                if x.nrows() == y.nrows() {
                    SamplePair::new(x.clone(), y.clone())
                } else if *subsample {
                    let (xs, ys) = subsample_to_min(x, y, seed);
                    SamplePair::new(xs, ys)
                } else {
                    Err(Error::SizeMismatch { x: x.nrows(), y: y.nrows() })
                }
            }
        }
    }

    fn dims(&self, n_test: usize) -> (usize, usize) {
        match self {
            Prepared::Toy(p) => (n_test, p.dim()),
            Prepared::Files { x, y, .. } => (x.nrows().min(y.nrows()) / 2, x.ncols()),
        }
    }
}

/// What one method produced on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub theta: Option<TestParams>,
    pub sigma: Option<f64>,
    pub result: TestResult,
}

/// Splits `sample` with `seed`, tunes on the training half when the method
/// needs it, and tests on the other half. The data source in `config` is
/// ignored.
pub fn run_method(config: &ExperimentConfig, sample: &SamplePair, seed: u64, timing: &mut TrialTiming) -> Result<MethodOutcome> {
    let sp = split(sample, seed)?;
    debug_assert!(sp.is_disjoint(), "train and test halves share rows");
    let (train, test) = (&sp.train, &sp.test);
    let optim = OptimConfig {
        seed,
        ..config.optim.clone()
    };
    let stat_cfg = StatConfig::new(config.gamma, config.alpha)?;
    let started = Instant::now();
    let lap = || started.elapsed().as_secs_f64();

    let outcome = match config.method {
        Method::MeFull | Method::ScfFull | Method::MeGrid | Method::ScfGrid => {
            let kind = config.method.feature_kind().expect("feature method");
            let theta = if matches!(config.method, Method::MeFull | Method::ScfFull) {
                optimize_full(kind, train, config.j, &optim)?.params
            } else {
                optimize_grid(kind, train, config.j, &optim)?
            };
            timing.optimize_secs = lap();
            let result = run_test(kind, &theta, test, &stat_cfg)?;
            MethodOutcome {
                theta: Some(theta),
                sigma: None,
                result,
            }
        }
        Method::MmdLin | Method::MmdQuad => {
            let grid = optim.sigma_grid.clone().unwrap_or_else(|| default_sigma_grid(train));
            let (kind, alpha) = (
                if config.method == Method::MmdLin { MmdKind::Linear } else { MmdKind::Quadratic },
                config.alpha,
            );
            let kernel = mmd_width_select(train, &grid, kind)?;
            timing.optimize_secs = lap();
            let result = match kind {
                MmdKind::Linear => mmd_lin(test, &kernel, alpha)?,
                MmdKind::Quadratic => mmd_quad(test, &kernel, alpha, &PermutationConfig::new(config.permutations, seed)?)?,
            };
            MethodOutcome {
                theta: None,
                sigma: Some(kernel.sigma()),
                result,
            }
        }
        Method::T2 => MethodOutcome {
            theta: None,
            sigma: None,
            result: hotelling_t2(test, config.alpha)?,
        },
    };
    timing.test_secs = lap() - timing.optimize_secs;
    Ok(outcome)
}

/// Runs every trial of one configuration. Trial t uses the seed
/// `trial_seed(master_seed, t)` for data, split, initialization, and
/// permutations, so the reports do not depend on the worker count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let prepared = match &config.source {
        DataSource::Toy(p) => Prepared::Toy(p),
        DataSource::Files {
            x,
            y,
            has_header,
            subsample_to_min,
        } => {
            let (x, y) = (load_csv(x, *has_header)?.data, load_csv(y, *has_header)?.data);
            if x.ncols() != y.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: x.ncols(),
                    got: y.ncols(),
                });
            }
            if x.nrows() != y.nrows() && !subsample_to_min {
                return Err(Error::SizeMismatch { x: x.nrows(), y: y.nrows() });
            }
            Prepared::Files {
                x,
                y,
                subsample: *subsample_to_min,
            }
        }
    };
    let (n, d) = prepared.dims(config.n_test);
    let problem = config.source.label();

    let run_one = |t: usize| {
        let seed = trial_seed(config.master_seed, t as u64);
        let mut timing = TrialTiming {
            trial: t,
            ..TrialTiming::default()
        };
        let outcome = prepared.sample(config.n_test, seed).and_then(|s| run_method(config, &s, seed, &mut timing));
        let mut report = TrialReport {
            trial: t,
            seed,
            method: config.method,
            problem: problem.clone(),
            n,
            d,
            theta: None,
            sigma: None,
            result: None,
            error: None,
            timing,
        };
        match outcome {
            Ok(o) => {
                report.theta = o.theta;
                report.sigma = o.sigma;
                report.result = Some(o.result);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        report
    };

    let reports: Vec<TrialReport> = match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| (0..config.trials).into_par_iter().map(run_one).collect())
        }
        None => (0..config.trials).into_par_iter().map(run_one).collect(),
    };

    let summary = ExperimentSummary::from_reports(config.method, &problem, n, d, config.j, config.alpha, &reports);
    if summary.failed as f64 > MAX_FAILURE_RATE * summary.trials as f64 {
        return Err(Error::TooManyFailures {
            failed: summary.failed,
            trials: summary.trials,
        });
    }
    Ok(ExperimentOutput { summary, reports })
}

/// Runs one experiment per (n_test, d) pair. File sources ignore both lists.
pub fn sweep(base: &ExperimentConfig, ns: &[usize], ds: &[usize]) -> Result<Vec<ExperimentOutput>> {
    let DataSource::Toy(problem) = &base.source else {
        return Ok(vec![run_experiment(base)?]);
    };
    let ns = if ns.is_empty() { vec![base.n_test] } else { ns.to_vec() };
    let ds = if ds.is_empty() { vec![problem.d] } else { ds.to_vec() };
    let mut out = Vec::with_capacity(ns.len() * ds.len());
    for &d in &ds {
        for &n in &ns {
            let mut cfg = base.clone();
            cfg.n_test = n;
            let mut p = problem.clone();
            p.d = d;
            cfg.source = DataSource::Toy(p);
            out.push(run_experiment(&cfg)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ToyProblem;

    fn quick(method: Method, problem: ToyProblem, trials: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::toy(method, problem, 100, 2, trials, 7);
        cfg.permutations = 50;
        cfg.optim.max_iters = 30;
        cfg
    }

    #[test]
    fn single_trial_on_sg() {
        let out = run_experiment(&quick(Method::MeFull, ToyProblem::sg(2), 1)).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.summary.proportion == 0.0 || out.summary.proportion == 1.0);
        assert!(out.reports[0].theta.is_some());
    }

    #[test]
    fn every_method_runs() {
        for m in Method::ALL {
            let out = run_experiment(&quick(m, ToyProblem::gmd(2), 3)).unwrap();
            assert_eq!(out.summary.completed, 3, "{m}");
            assert_eq!(out.reports[0].theta.is_some(), m.feature_kind().is_some());
        }
    }

    #[test]
    fn proportion_edges() {
        assert_eq!(proportion_and_stderr(10, 10), (1.0, 0.0));
        assert_eq!(proportion_and_stderr(0, 0), (0.0, 0.0));
        let (p, se) = proportion_and_stderr(1, 4);
        assert_eq!(p, 0.25);
        assert!((se - (0.25f64 * 0.75 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn failures_are_recorded_and_counted() {
        // n ≤ d makes every Hotelling trial fail
        let cfg = ExperimentConfig::toy(Method::T2, ToyProblem::gmd(20), 5, 1, 4, 1);
        assert!(matches!(run_experiment(&cfg), Err(Error::TooManyFailures { failed: 4, trials: 4 })));
    }

    #[test]
    fn worker_count_does_not_change_reports() {
        let mut a = quick(Method::ScfFull, ToyProblem::gmd(2), 6);
        a.workers = Some(1);
        let mut b = a.clone();
        b.workers = Some(3);
        let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
        let ja: Vec<String> = ra.reports.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let jb: Vec<String> = rb.reports.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        assert_eq!(ja, jb);
    }

    #[test]
    fn null_rate_is_stable_across_master_seeds() {
        let mut cfg = ExperimentConfig::toy(Method::MmdLin, ToyProblem::sg(2), 100, 1, 400, 1);
        cfg.alpha = 0.1;
        let a = run_experiment(&cfg).unwrap().summary;
        cfg.master_seed = 2;
        let b = run_experiment(&cfg).unwrap().summary;
        assert!((a.proportion - b.proportion).abs() <= 3.0 * a.stderr.max(b.stderr) * 2f64.sqrt(), "{a:?} {b:?}");
    }

    #[test]
    fn sweep_visits_every_point() {
        let out = sweep(&quick(Method::MmdLin, ToyProblem::gmd(1), 2), &[20, 40, 60], &[1, 2]).unwrap();
        let points: Vec<(usize, usize)> = out.iter().map(|o| (o.summary.n, o.summary.d)).collect();
        assert_eq!(points, vec![(20, 1), (40, 1), (60, 1), (20, 2), (40, 2), (60, 2)]);
    }
}
