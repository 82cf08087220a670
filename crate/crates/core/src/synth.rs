//! Seeded generators for the toy problems: same Gaussian (SG), Gaussian
//! mean difference (GMD), Gaussian variance difference (GVD), and Blobs.
//!
//! | problem | P                 | Q                                |
//! |---------|-------------------|----------------------------------|
//! | SG      | N(0, I_d)         | N(0, I_d)                        |
//! | GMD     | N(0, I_d)         | N((1,0,…,0), I_d)                |
//! | GVD     | N(0, I_d)         | N(0, diag(2,1,…,1))              |
//! | Blobs   | 4×4 grid of stretched Gaussians | 4×4 grid of unit Gaussians |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream, streams};
use crate::statistic::SamplePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Sg,
    Gmd,
    Gvd,
    Blobs,
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::Sg => "sg",
            ToyKind::Gmd => "gmd",
            ToyKind::Gvd => "gvd",
            ToyKind::Blobs => "blobs",
        })
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sg" => Ok(ToyKind::Sg),
            "gmd" => Ok(ToyKind::Gmd),
            "gvd" => Ok(ToyKind::Gvd),
            "blobs" => Ok(ToyKind::Blobs),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }
}

/// Geometry of the Blobs mixtures. The lattice is centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsParams {
    pub grid: usize,
    pub spacing: f64,
    /// Eigenvalue ratio of each P component (Q has ratio 1).
    pub stretch: f64,
    /// Rotation of the stretched axis, radians.
    pub angle: f64,
}

impl Default for BlobsParams {
    fn default() -> Self {
        Self {
            grid: 4,
            spacing: 5.0,
            stretch: 2.0,
            angle: std::f64::consts::FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub kind: ToyKind,
    /// Dimension; ignored (fixed to 2) for Blobs.
    pub d: usize,
    /// GMD only: how many leading coordinates of Q carry a unit mean shift.
    #[serde(default = "one")]
    pub shifted_coords: usize,
    #[serde(default)]
    pub blobs: BlobsParams,
}

fn one() -> usize {
    1
}

impl ToyProblem {
    pub fn new(kind: ToyKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self {
            kind,
            d: if kind == ToyKind::Blobs { 2 } else { d },
            shifted_coords: 1,
            blobs: BlobsParams::default(),
        })
    }

    pub fn sg(d: usize) -> Self {
        Self::new(ToyKind::Sg, d.max(1)).expect("d >= 1")
    }

    pub fn gmd(d: usize) -> Self {
        Self::new(ToyKind::Gmd, d.max(1)).expect("d >= 1")
    }

    pub fn gvd(d: usize) -> Self {
        Self::new(ToyKind::Gvd, d.max(1)).expect("d >= 1")
    }

    pub fn blobs() -> Self {
        Self::new(ToyKind::Blobs, 2).expect("d >= 1")
    }

    pub fn with_shifted_coords(mut self, k: usize) -> Self {
        self.shifted_coords = k;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// H₀ holds only for SG.
    pub fn null_holds(&self) -> bool {
        self.kind == ToyKind::Sg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Equally weighted mixture components of P and Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub p: Vec<GaussianComponent>,
    pub q: Vec<GaussianComponent>,
}

fn lattice_means(params: &BlobsParams) -> Vec<[f64; 2]> {
    let g = params.grid;
    let offset = (g as f64 - 1.0) / 2.0;
    let mut means = Vec::with_capacity(g * g);
    for a in 0..g {
        for b in 0..g {
            means.push([
                params.spacing * (a as f64 - offset),
                params.spacing * (b as f64 - offset),
            ]);
        }
    }
    means
}

/// R · diag(√stretch, 1), so that `L Lᵀ = R diag(stretch, 1) Rᵀ`.
fn stretched_factor(params: &BlobsParams) -> [[f64; 2]; 2] {
    let (s, c) = params.angle.sin_cos();
    let r = params.stretch.sqrt();
    [[c * r, -s], [s * r, c]]
}

pub fn blobs_density_params(problem: &ToyProblem) -> Result<MixtureParams> {
    if problem.kind != ToyKind::Blobs {
        return Err(Error::WrongKind);
    }
    let l = stretched_factor(&problem.blobs);
    let mut cov_p = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            cov_p[(i, j)] = l[i][0] * l[j][0] + l[i][1] * l[j][1];
        }
    }
    let means = lattice_means(&problem.blobs);
    let p = means
        .iter()
        .map(|m| GaussianComponent {
            mean: m.to_vec(),
            cov: cov_p.clone(),
        })
        .collect();
    let q = means
        .iter()
        .map(|m| GaussianComponent {
            mean: m.to_vec(),
            cov: Matrix::identity(2),
        })
        .collect();
    Ok(MixtureParams { p, q })
}

fn gaussian_block<R: Rng>(rng: &mut R, n: usize, d: usize, transform: impl Fn(usize, f64) -> f64) -> Matrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(transform(c, z));
        }
    }
    Matrix::from_vec(n, d, data).expect("finite gaussian draws")
}

fn blobs_block<R: Rng>(rng: &mut R, n: usize, params: &BlobsParams, stretched: bool) -> Matrix {
    let means = lattice_means(params);
    let l = if stretched {
        stretched_factor(params)
    } else {
        [[1.0, 0.0], [0.0, 1.0]]
    };
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let m = means[rng.random_range(0..means.len())];
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        data.push(m[0] + l[0][0] * z0 + l[0][1] * z1);
        data.push(m[1] + l[1][0] * z0 + l[1][1] * z1);
    }
    Matrix::from_vec(n, 2, data).expect("finite blob draws")
}

/// Draws n points from P (as X) and n from Q (as Y); X and Y come from
/// independent streams of `seed`.
pub fn sample_problem(problem: &ToyProblem, n: usize, seed: u64) -> SamplePair {
    let mut rx = stream(seed, streams::SAMPLE_X);
    let mut ry = stream(seed, streams::SAMPLE_Y);
    let d = problem.d;
    let (x, y) = match problem.kind {
        ToyKind::Sg => (
            gaussian_block(&mut rx, n, d, |_, z| z),
            gaussian_block(&mut ry, n, d, |_, z| z),
        ),
        ToyKind::Gmd => {
            let k = problem.shifted_coords;
            (
                gaussian_block(&mut rx, n, d, |_, z| z),
                gaussian_block(&mut ry, n, d, move |c, z| if c < k { z + 1.0 } else { z }),
            )
        }
        ToyKind::Gvd => (
            gaussian_block(&mut rx, n, d, |_, z| z),
            gaussian_block(&mut ry, n, d, |c, z| if c == 0 { z * 2f64.sqrt() } else { z }),
        ),
        ToyKind::Blobs => (
            blobs_block(&mut rx, n, &problem.blobs, true),
            blobs_block(&mut ry, n, &problem.blobs, false),
        ),
    };
    SamplePair::new(x, y).expect("equal sizes by construction")
}
