//! Closed-form evaluators for the power lower bound L(λ_n), the uniform
//! deviation bound on the regularized statistic, and the VC indices of the
//! Gaussian kernel classes.
//!
//! The universal constants C_j have no numeric value in the source results;
//! they default to 1, so every output holds only up to universal constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

pub const UNIVERSAL_CONSTANTS_LABEL: &str = "up to universal constants";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    /// Kernel bound, 1 for the Gaussian kernel.
    pub b: f64,
    pub j: usize,
    /// sup ‖Σ⁻¹‖_F over locations and kernels.
    pub c_tilde: f64,
    pub n: usize,
    pub gamma: f64,
    pub t_alpha: f64,
    pub delta: f64,
    pub d: usize,
    pub universal: [f64; 3],
}

impl BoundContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(b: f64, j: usize, c_tilde: f64, n: usize, gamma: f64, t_alpha: f64, delta: f64, d: usize) -> Result<Self> {
        let ctx = Self {
            b,
            j,
            c_tilde,
            n,
            gamma,
            t_alpha,
            delta,
            d,
            universal: [1.0; 3],
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_universal(mut self, c: [f64; 3]) -> Result<Self> {
        self.universal = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.b, self.c_tilde, self.gamma, self.t_alpha]
            .iter()
            .chain(&self.universal)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.j == 0 || self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("bound context entries must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidProbability(self.delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub c1_bar: f64,
    pub c2_bar: f64,
    pub c3_bar: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
}

pub fn derive_constants(ctx: &BoundContext) -> DerivedConstants {
    let (b, j, c) = (ctx.b, ctx.j as f64, ctx.c_tilde);
    let c1_bar = 4.0 * b * b * j * j.sqrt() * c;
    let c2_bar = 4.0 * b * j.sqrt() * c;
    let c3_bar = 4.0 * b * b * j * c * c;
    DerivedConstants {
        c1_bar,
        c2_bar,
        c3_bar,
        xi1: 1.0 / (9.0 * 8.0 * b * b * c2_bar * c2_bar * j),
        xi2: 24.0 * b * b * c1_bar * j,
        xi3: 9.0 * 32.0 * b.powi(4) * c1_bar * c1_bar * j * j,
        xi4: 32.0 * b.powi(4) * j * j * c1_bar * c1_bar,
    }
}

/// L(λ_n). Values below zero mean the bound is vacuous and are returned as is.
pub fn power_lower_bound(lambda: f64, ctx: &BoundContext) -> f64 {
    let k = derive_constants(ctx);
    let (n, g, t) = (ctx.n as f64, ctx.gamma, ctx.t_alpha);
    let gap = lambda - t;
    let e1 = (-k.xi1 * gap * gap / n).exp();
    let num2 = g * gap * (n - 1.0) - k.xi2 * n;
    let e2 = (-num2 * num2 / (k.xi3 * n * (2.0 * n - 1.0).powi(2))).exp();
    let num3 = gap / 3.0 - k.c3_bar * n * g;
    let e3 = (-num3 * num3 * g * g / k.xi4).exp();
    1.0 - 2.0 * e1 - 2.0 * e2 - 2.0 * e3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelClass {
    Isotropic,
    FullGaussian,
}

impl std::str::FromStr for KernelClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(Self::Isotropic),
            "full" | "full-gaussian" => Ok(Self::FullGaussian),
            other => Err(Error::InvalidParameter(format!("unknown kernel class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcIndices {
    /// Values from the lemma statement.
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    /// Values concluded in the proof, when they differ from the statement.
    pub proof: Option<[usize; 3]>,
    pub note: Option<String>,
}

impl VcIndices {
    pub fn as_array(&self) -> [usize; 3] {
        [self.f1, self.f2, self.f3]
    }
}

pub fn vc_indices(class: KernelClass, d: usize) -> Result<VcIndices> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be >= 1".into()));
    }
    Ok(match class {
        KernelClass::Isotropic => VcIndices {
            f1: d + 4,
            f2: d + 4,
            f3: 2 * d + 4,
            proof: None,
            note: None,
        },
        KernelClass::FullGaussian => {
            let tri = d * (d + 1) / 2;
            let (f1, f2, f3) = (tri + d + 2, (d * (d + 1) + 2) / 2 + d + 2, d * (d + 1) + 2 * d + 3);
            VcIndices {
                f1,
                f2,
                f3,
                proof: Some([tri + d + 3, f2, f3]),
                note: Some("lemma statement gives VC(F1) <= d(d+1)/2+d+2; its proof concludes d(d+1)/2+d+3".into()),
            }
        }
    })
}

/// T_{F_j} for j ∈ {1, 2, 3}.
pub fn tf_term(j: usize, ctx: &BoundContext, vc: usize) -> Result<f64> {
    if !(1..=3).contains(&j) {
        return Err(Error::InvalidParameter(format!("T_F index must be 1, 2 or 3, got {j}")));
    }
    if vc < 2 {
        return Err(Error::InvalidVc(vc));
    }
    let zeta = if j == 1 { 1 } else { 2 };
    let bz = ctx.b.powi(zeta);
    let n = ctx.n as f64;
    let v = vc as f64;
    // log[C·VC·(16e)^VC] without forming the power
    let log_arg = ctx.universal[j - 1].ln() + v.ln() + v * (16.0f64.ln() + 1.0);
    let entropy = 2.0 * log_arg.sqrt() + (2.0 * std::f64::consts::PI * (v - 1.0)).sqrt() / 2.0;
    Ok(16.0 * std::f64::consts::SQRT_2 * bz / n.sqrt() * entropy + bz * (2.0 * (5.0 / ctx.delta).ln() / n).sqrt())
}

/// Right-hand side of the uniform deviation bound on
/// |z̄ᵀ(S_n+γI)⁻¹z̄ − μᵀΣ⁻¹μ|.
pub fn deviation_bound(ctx: &BoundContext, vc: [usize; 3]) -> Result<f64> {
    ctx.validate()?;
    if ctx.n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: ctx.n });
    }
    let k = derive_constants(ctx);
    let (n, g, b, j) = (ctx.n as f64, ctx.gamma, ctx.b, ctx.j as f64);
    let t1 = tf_term(1, ctx, vc[0])?;
    let t2 = tf_term(2, ctx, vc[1])?;
    let t3 = tf_term(3, ctx, vc[2])?;
    Ok(2.0 * t1 * ((2.0 / g) * k.c1_bar * b * j * (2.0 * n - 1.0) / (n - 1.0) + k.c2_bar * j.sqrt())
        + (2.0 / g) * k.c1_bar * j * (t2 + t3)
        + (8.0 / g) * k.c1_bar * b * b * j / (n - 1.0)
        + k.c3_bar * g)
}

/// Plug-in estimate of c̃: ‖(S_n + γI)⁻¹‖_F on a feature matrix.
pub fn plug_in_c_tilde(features: &Matrix, gamma: f64) -> Result<f64> {
    let inv = Cholesky::factor(&features.covariance()?.add_diagonal(gamma))?.inverse()?;
    Ok(inv.frobenius_norm())
}

/// Everything the `bound` command reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub context: BoundContext,
    pub constants: DerivedConstants,
    pub vc: VcIndices,
    pub tf: [f64; 3],
    pub deviation_bound: f64,
    pub lower_bounds: Vec<(f64, f64)>,
}

pub fn bound_report(ctx: &BoundContext, class: KernelClass, lambdas: &[f64]) -> Result<BoundReport> {
    let vc = vc_indices(class, ctx.d)?;
    let arr = vc.as_array();
    Ok(BoundReport {
        label: UNIVERSAL_CONSTANTS_LABEL.to_string(),
        context: ctx.clone(),
        constants: derive_constants(ctx),
        tf: [tf_term(1, ctx, arr[0])?, tf_term(2, ctx, arr[1])?, tf_term(3, ctx, arr[2])?],
        deviation_bound: deviation_bound(ctx, arr)?,
        lower_bounds: lambdas.iter().map(|&l| (l, power_lower_bound(l, ctx))).collect(),
        vc,
    })
}
