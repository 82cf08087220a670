//! Linear-time two-sample testing with mean-embedding (ME) and smooth
//! characteristic-function (SCF) features.
//!
//! The pipeline: split the sample, tune test locations and the Gaussian
//! bandwidth on the training half, then compute the χ²-calibrated statistic
//! on the test half.

pub mod baselines;
pub mod bounds;
pub mod distributions;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod optimize;
pub mod rng;
pub mod statistic;
pub mod synth;

pub use error::{Error, Result};
pub use features::{feature_matrix, FeatureMapKind, GaussianKernel, TestLocations, TestParams};
pub use linalg::{Cholesky, Matrix};
pub use optimize::{optimize_full, optimize_grid, split, OptimConfig, OptimTrace, SplitSamples};
pub use statistic::{run_test, statistic, SamplePair, StatConfig, TestResult};
pub use synth::{sample_problem, ToyKind, ToyProblem};
