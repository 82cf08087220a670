//! Gaussian kernel and per-observation feature vectors for the ME and SCF
//! tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, Matrix};
use crate::statistic::SamplePair;

/// Default minimum distance between two test locations.
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-6;

/// Isotropic Gaussian kernel `exp(−‖x−y‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    sigma: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Kernel value on two slices known to have equal length.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        (-squared_distance(x, y) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// `k(x, 0)`, the smoothing weight used by the SCF features.
    #[inline]
    pub(crate) fn weight_at_origin(&self, x: &[f64]) -> f64 {
        (-dot(x, x) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

pub fn kernel_eval(kernel: &GaussianKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(kernel.eval_unchecked(x, y))
}

/// J test locations in R^d, stored as a J×d matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLocations {
    points: Matrix,
}

impl TestLocations {
    /// Wraps a J×d matrix. Separation is not checked here: the optimizer
    /// enforces it on its output only.
    pub fn new(points: Matrix) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidParameter("need at least one test location".into()));
        }
        if points.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("test locations"));
        }
        Ok(Self { points })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.points.row(j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.points
    }

    pub fn into_matrix(self) -> Matrix {
        self.points
    }

    /// Smallest pairwise Euclidean distance (∞ for a single location).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.len() {
            for b in (a + 1)..self.len() {
                best = best.min(squared_distance(self.point(a), self.point(b)).sqrt());
            }
        }
        best
    }

    pub fn is_separated(&self, eps: f64) -> bool {
        self.min_separation() >= eps
    }
}

/// θ = (V, σ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestParams {
    pub locations: TestLocations,
    pub kernel: GaussianKernel,
}

impl TestParams {
    pub fn new(locations: TestLocations, kernel: GaussianKernel) -> Self {
        Self { locations, kernel }
    }
}

/// Which feature construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMapKind {
    /// Mean embeddings at spatial locations.
    Me,
    /// Smoothed characteristic function at frequencies.
    Scf,
}

impl FeatureMapKind {
    /// J′: J for ME, 2J for SCF.
    pub fn feature_dim(self, j: usize) -> usize {
        match self {
            FeatureMapKind::Me => j,
            FeatureMapKind::Scf => 2 * j,
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_inputs(locations: &TestLocations, x: &[f64], y: &[f64]) -> Result<()> {
    check_dim(locations.dim(), x.len())?;
    check_dim(locations.dim(), y.len())
}

pub fn me_feature(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(locations, x, y)?;
    let mut out = vec![0.0; locations.len()];
    write_me_row(kernel, locations, x, y, &mut out);
    Ok(out)
}

/// SCF feature with `l̂(x) = k(x, 0)`, laid out `[sin_1, cos_1, sin_2, cos_2, …]`.
pub fn scf_feature(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    scf_feature_weighted(locations, x, y, |p| kernel.weight_at_origin(p))
}

/// SCF feature with an arbitrary smoothing weight `l̂`.
pub fn scf_feature_weighted<W: Fn(&[f64]) -> f64>(
    locations: &TestLocations,
    x: &[f64],
    y: &[f64],
    weight: W,
) -> Result<Vec<f64>> {
    check_inputs(locations, x, y)?;
    let mut out = vec![0.0; 2 * locations.len()];
    write_scf_row(locations, x, y, weight(x), weight(y), &mut out);
    Ok(out)
}

#[inline]
fn write_me_row(kernel: &GaussianKernel, locations: &TestLocations, x: &[f64], y: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let v = locations.point(j);
        *o = kernel.eval_unchecked(x, v) - kernel.eval_unchecked(y, v);
    }
}

#[inline]
fn write_scf_row(locations: &TestLocations, x: &[f64], y: &[f64], lx: f64, ly: f64, out: &mut [f64]) {
    for j in 0..locations.len() {
        let v = locations.point(j);
        let (sx, cx) = dot(x, v).sin_cos();
        let (sy, cy) = dot(y, v).sin_cos();
        out[2 * j] = lx * sx - ly * sy;
        out[2 * j + 1] = lx * cx - ly * cy;
    }
}

/// Stacks z_i for every pair (x_i, y_i) into an n×J′ matrix.
pub fn feature_matrix(kind: FeatureMapKind, params: &TestParams, sample: &SamplePair) -> Result<Matrix> {
    let locs = &params.locations;
    check_dim(locs.dim(), sample.dim())?;
    let n = sample.len();
    let width = kind.feature_dim(locs.len());
    let mut z = Matrix::zeros(n, width);
    for i in 0..n {
        let (x, y) = (sample.x().row(i), sample.y().row(i));
        let out = z.row_mut(i);
        match kind {
            FeatureMapKind::Me => write_me_row(&params.kernel, locs, x, y, out),
            FeatureMapKind::Scf => {
                let k = &params.kernel;
                write_scf_row(locs, x, y, k.weight_at_origin(x), k.weight_at_origin(y), out)
            }
        }
    }
    Ok(z)
}
