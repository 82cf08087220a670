//! The regularized statistic `n z̄ᵀ(S_n + γI)⁻¹z̄`, its χ² calibration, and
//! the end-to-end ME/SCF test on a fixed θ.

use serde::{Deserialize, Serialize};

use crate::distributions::ChiSquared;
use crate::error::{Error, Result};
use crate::features::{feature_matrix, FeatureMapKind, TestParams};
use crate::linalg::{dot, Cholesky, Matrix};

/// Smallest regularization used when none is given.
pub const DEFAULT_GAMMA: f64 = 1e-5;
/// Regularization is escalated ×10 on factorization failure up to this value.
pub const MAX_GAMMA: f64 = 1e-1;

/// Two equal-size samples; row i of X is paired with row i of Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    x: Matrix,
    y: Matrix,
}

impl SamplePair {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::SizeMismatch {
                x: x.nrows(),
                y: y.nrows(),
            });
        }
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: y.ncols(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_parts(self) -> (Matrix, Matrix) {
        (self.x, self.y)
    }

    /// Applies the same row selection to both samples (keeps pairs intact).
    pub fn select_pairs(&self, indices: &[usize]) -> SamplePair {
        SamplePair {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
        }
    }
}

/// Regularization and significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatConfig {
    /// Starting γ_n; `None` picks `max(1e-5, ε·tr S_n)` from the data.
    pub gamma: Option<f64>,
    pub alpha: f64,
}

impl StatConfig {
    pub fn new(gamma: Option<f64>, alpha: f64) -> Result<Self> {
        if let Some(g) = gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {g}")));
            }
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(Self { gamma, alpha })
    }
}

impl Default for StatConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            alpha: 0.01,
        }
    }
}

/// Outcome of a single test.
///
/// For tests calibrated by a threshold, `reject ⇔ statistic > threshold`.
/// For the permutation test `reject ⇔ p_value < alpha` and the threshold is
/// the empirical (1−α) quantile of the permuted statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    /// χ² degrees of freedom, when the null is χ².
    pub dof: Option<usize>,
}

impl TestResult {
    /// Builds a χ²-calibrated result.
    pub fn chi_squared(statistic: f64, dof: usize, alpha: f64) -> Result<Self> {
        let dist = ChiSquared::new(dof)?;
        let threshold = dist.quantile(1.0 - alpha)?;
        Ok(Self {
            statistic,
            threshold,
            p_value: dist.sf(statistic),
            reject: statistic > threshold,
            dof: Some(dof),
        })
    }
}

/// Intermediate quantities of the statistic, reused by the gradient.
#[derive(Debug, Clone)]
pub(crate) struct StatisticParts {
    pub value: f64,
    /// `w = (S_n + γI)⁻¹ z̄`.
    pub w: Vec<f64>,
    /// `(z_i − z̄)ᵀ w` for every row.
    pub centered_proj: Vec<f64>,
}

pub(crate) fn statistic_parts(features: &Matrix, gamma: f64) -> Result<StatisticParts> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let mean = features.column_means();
    let cov = features.covariance()?.add_diagonal(gamma);
    let w = Cholesky::factor(&cov)?.solve(&mean)?;
    let value = (n as f64 * dot(&mean, &w)).max(0.0);
    let mw = dot(&mean, &w);
    let centered_proj = features.rows().map(|r| dot(r, &w) - mw).collect();
    Ok(StatisticParts {
        value,
        w,
        centered_proj,
    })
}

/// `n z̄ᵀ(S_n + γI)⁻¹z̄` over the rows of an n×J′ feature matrix.
pub fn statistic(features: &Matrix, gamma: f64) -> Result<f64> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = features.column_means();
    if mean.iter().all(|&m| m == 0.0) {
        return Ok(0.0);
    }
    Ok(statistic_parts(features, gamma)?.value)
}

/// Default γ_n for a feature matrix: `max(1e-5, ε·tr S_n)`.
pub fn default_gamma(features: &Matrix) -> f64 {
    let trace = features.covariance().map(|c| c.trace()).unwrap_or(0.0);
    DEFAULT_GAMMA.max(f64::EPSILON * trace)
}

/// Evaluates `f(γ)`, multiplying γ by 10 after each failed factorization
/// until `MAX_GAMMA` is exceeded. Returns the value and the γ that worked.
pub(crate) fn with_gamma_escalation<T>(
    start: f64,
    mut f: impl FnMut(f64) -> Result<T>,
) -> Result<(T, f64)> {
    let mut gamma = start;
    loop {
        match f(gamma) {
            Ok(v) => return Ok((v, gamma)),
            Err(e @ Error::NotPositiveDefinite { .. }) => {
                gamma = if gamma <= 0.0 { DEFAULT_GAMMA } else { gamma * 10.0 };
                if gamma > MAX_GAMMA * (1.0 + 1e-12) {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Statistic with γ chosen per `config` and escalated on failure.
pub fn regularized_statistic(features: &Matrix, gamma: Option<f64>) -> Result<(f64, f64)> {
    let start = gamma.unwrap_or_else(|| default_gamma(features));
    with_gamma_escalation(start, |g| statistic(features, g))
}

/// Feature construction, statistic, and χ²(J′) decision.
pub fn run_test(
    kind: FeatureMapKind,
    params: &TestParams,
    sample: &SamplePair,
    config: &StatConfig,
) -> Result<TestResult> {
    let z = feature_matrix(kind, params, sample)?;
    let (stat, _) = regularized_statistic(&z, config.gamma)?;
    TestResult::chi_squared(stat, kind.feature_dim(params.locations.len()), config.alpha)
}

/// Population counterpart `n μᵀΣ⁻¹μ`.
pub fn population_lambda(mu: &[f64], sigma: &Matrix, n: usize) -> Result<f64> {
    let w = Cholesky::factor(sigma)?.solve(mu)?;
    Ok(n as f64 * dot(mu, &w))
}
