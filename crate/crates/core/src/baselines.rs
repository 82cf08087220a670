//! Comparison tests: linear-time MMD, quadratic-time MMD with a permutation
//! null, and Hotelling's T².

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{standard_normal_quantile, standard_normal_sf};
use crate::error::{Error, Result};
use crate::features::GaussianKernel;
use crate::linalg::{Cholesky, Matrix};
use crate::rng::{stream, streams};
use crate::statistic::{SamplePair, TestResult};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub num_permutations: usize,
    pub seed: u64,
}

impl PermutationConfig {
    pub fn new(num_permutations: usize, seed: u64) -> Result<Self> {
        if num_permutations == 0 {
            return Err(Error::InvalidParameter("num_permutations must be >= 1".into()));
        }
        Ok(Self { num_permutations, seed })
    }
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            num_permutations: 400,
            seed: 0,
        }
    }
}

/// Which MMD estimator a width search targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdKind {
    Linear,
    Quadratic,
}

/// h values over the ⌊n/2⌋ disjoint pair blocks.
fn linear_h(sample: &SamplePair, kernel: &GaussianKernel) -> Vec<f64> {
    let (x, y) = (sample.x(), sample.y());
    (0..sample.len() / 2)
        .map(|i| {
            let (a, b) = (2 * i, 2 * i + 1);
            kernel.eval_unchecked(x.row(a), x.row(b)) + kernel.eval_unchecked(y.row(a), y.row(b))
                - kernel.eval_unchecked(x.row(a), y.row(b))
                - kernel.eval_unchecked(x.row(b), y.row(a))
        })
        .collect()
}

fn mean_and_sd(h: &[f64]) -> (f64, f64) {
    let m = h.len() as f64;
    let mean = h.iter().sum::<f64>() / m;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// Linear-time MMD with a normal null whose variance is estimated from the
/// block values. One-sided: large statistics reject.
pub fn mmd_lin(sample: &SamplePair, kernel: &GaussianKernel, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    if sample.len() < 4 {
        return Err(Error::TooFewSamples {
            needed: 4,
            got: sample.len(),
        });
    }
    let h = linear_h(sample, kernel);
    let (stat, sd) = mean_and_sd(&h);
    let se = sd / (h.len() as f64).sqrt();
    let threshold = standard_normal_quantile(1.0 - alpha) * se;
    let p_value = if se > 0.0 {
        standard_normal_sf(stat / se)
    } else if stat > 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(TestResult {
        statistic: stat,
        threshold,
        p_value,
        reject: stat > threshold,
        dof: None,
    })
}

/// Gram matrix of the pooled sample `[X; Y]`.
fn pooled_gram(sample: &SamplePair, kernel: &GaussianKernel) -> Matrix {
    let n = sample.len();
    let row = |i: usize| if i < n { sample.x().row(i) } else { sample.y().row(i - n) };
    let mut k = Matrix::zeros(2 * n, 2 * n);
    for i in 0..2 * n {
        for j in 0..=i {
            let v = kernel.eval_unchecked(row(i), row(j));
            k.row_mut(i)[j] = v;
            k.row_mut(j)[i] = v;
        }
    }
    k
}

/// MMD²_u = Σ_{i≠j} h(z_i, z_j) / (n(n−1)) for the sample whose i-th pair
/// is `(perm[i], perm[n+i])` in the pooled Gram matrix.
fn mmd_u_from_gram(k: &Matrix, total: f64, perm: &[usize]) -> f64 {
    let n = perm.len() / 2;
    let mut in_x = vec![false; 2 * n];
    for &p in &perm[..n] {
        in_x[p] = true;
    }
    let (mut xx, mut xy) = (0.0, 0.0);
    for (i, &xi) in in_x.iter().enumerate() {
        let r: f64 = k.row(i).iter().zip(&in_x).filter(|(_, &b)| b).map(|(v, _)| v).sum();
        if xi {
            xx += r;
        } else {
            xy += r;
        }
    }
    let yy = total - xx - 2.0 * xy;
    let (mut diag, mut paired) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (perm[i], perm[n + i]);
        diag += k[(a, a)] + k[(b, b)];
        paired += k[(a, b)];
    }
    let nf = n as f64;
    (xx + yy - diag - 2.0 * (xy - paired)) / (nf * (nf - 1.0))
}

/// Unbiased quadratic-time MMD² estimate.
pub fn mmd_u_statistic(sample: &SamplePair, kernel: &GaussianKernel) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let k = pooled_gram(sample, kernel);
    let total = k.as_slice().iter().sum();
    let identity: Vec<usize> = (0..2 * n).collect();
    Ok(mmd_u_from_gram(&k, total, &identity))
}

/// Quadratic-time MMD with a permutation null.
///
/// p = (1 + #{b : MMD²_b ≥ MMD²_obs}) / (1 + B); `reject ⇔ p < alpha`. The
/// reported threshold is the empirical (1−α) quantile of the permuted values.
pub fn mmd_quad(sample: &SamplePair, kernel: &GaussianKernel, alpha: f64, perm: &PermutationConfig) -> Result<TestResult> {
    check_alpha(alpha)?;
    let n = sample.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if perm.num_permutations == 0 {
        return Err(Error::InvalidParameter("num_permutations must be >= 1".into()));
    }
    let k = pooled_gram(sample, kernel);
    let total: f64 = k.as_slice().iter().sum();
    let identity: Vec<usize> = (0..2 * n).collect();
    let observed = mmd_u_from_gram(&k, total, &identity);

    let mut null: Vec<f64> = (0..perm.num_permutations as u64)
        .into_par_iter()
        .map(|b| {
            let mut l = identity.clone();
            l.shuffle(&mut stream(perm.seed, streams::PERMUTATION_BASE + b));
            mmd_u_from_gram(&k, total, &l)
        })
        .collect();
    // kernel values are at most 1, so round-off in the sums is absolute
    let tol = 1e-12;
    let exceed = null.iter().filter(|&&v| v >= observed - tol).count();
    let p_value = (1 + exceed) as f64 / (1 + perm.num_permutations) as f64;

    null.sort_unstable_by(f64::total_cmp);
    let q = ((1.0 - alpha) * null.len() as f64).ceil() as usize;
    let threshold = null[q.clamp(1, null.len()) - 1];
    Ok(TestResult {
        statistic: observed,
        threshold,
        p_value,
        reject: p_value < alpha,
        dof: None,
    })
}

/// Picks the grid bandwidth maximizing a power proxy on the training half:
/// `stat/(σ̂_h + 1e-8)` for the linear estimator, MMD²_u for the quadratic
/// one. Ties go to the earliest grid entry.
pub fn mmd_width_select(train: &SamplePair, grid: &[f64], kind: MmdKind) -> Result<GaussianKernel> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty sigma grid".into()));
    }
    let mut best: Option<(f64, GaussianKernel)> = None;
    for &s in grid {
        let kernel = GaussianKernel::new(s)?;
        let proxy = match kind {
            MmdKind::Linear => {
                if train.len() < 4 {
                    return Err(Error::TooFewSamples {
                        needed: 4,
                        got: train.len(),
                    });
                }
                let (stat, sd) = mean_and_sd(&linear_h(train, &kernel));
                stat / (sd + 1e-8)
            }
            MmdKind::Quadratic => mmd_u_statistic(train, &kernel)?,
        };
        if best.is_none_or(|(b, _)| proxy > b) {
            best = Some((proxy, kernel));
        }
    }
    Ok(best.expect("nonempty grid").1)
}

/// Two-sample Hotelling T² = (n/2)(x̄−ȳ)ᵀS_p⁻¹(x̄−ȳ), calibrated by χ²(d).
pub fn hotelling_t2(sample: &SamplePair, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (n, d) = (sample.len(), sample.dim());
    if n <= d || n < 2 {
        return Err(Error::SingularCovariance { n, d });
    }
    let (cx, cy) = (sample.x().covariance()?, sample.y().covariance()?);
    let pooled = Matrix::from_vec(
        d,
        d,
        cx.as_slice().iter().zip(cy.as_slice()).map(|(a, b)| 0.5 * (a + b)).collect(),
    )?;
    let chol = Cholesky::factor(&pooled).map_err(|_| Error::SingularCovariance { n, d })?;
    let diff: Vec<f64> = sample
        .x()
        .column_means()
        .iter()
        .zip(sample.y().column_means())
        .map(|(a, b)| a - b)
        .collect();
    let w = chol.solve(&diff)?;
    let stat = 0.5 * n as f64 * crate::linalg::dot(&diff, &w);
    TestResult::chi_squared(stat.max(0.0), d, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ks_distance;
    use crate::synth::{sample_problem, ToyProblem};

    fn rows(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_samples_give_zero_statistics() {
        let s = sample_problem(&ToyProblem::gmd(2), 20, 1);
        let same = SamplePair::new(s.x().clone(), s.x().clone()).unwrap();
        let k = GaussianKernel::new(1.0).unwrap();
        let lin = mmd_lin(&same, &k, 0.01).unwrap();
        assert_eq!(lin.statistic, 0.0);
        assert!(!lin.reject);
        let quad = mmd_quad(&same, &k, 0.01, &PermutationConfig::new(50, 0).unwrap()).unwrap();
        assert!(quad.statistic.abs() < 1e-12);
        // the permuted values straddle zero, so p sits near 1/2
        assert!(quad.p_value > 0.2 && !quad.reject, "{quad:?}");
        assert!(hotelling_t2(&same, 0.01).unwrap().statistic.abs() < 1e-20);
        assert!(matches!(mmd_lin(&sample_problem(&ToyProblem::gmd(2), 3, 1), &k, 0.01), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn linear_statistic_matches_pair_loop() {
        let s = sample_problem(&ToyProblem::gmd(2), 11, 2);
        let k = GaussianKernel::new(0.8).unwrap();
        let g = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            (-d2 / (2.0 * 0.64)).exp()
        };
        let mut total = 0.0;
        for i in 0..5 {
            let (x1, x2, y1, y2) = (s.x().row(2 * i), s.x().row(2 * i + 1), s.y().row(2 * i), s.y().row(2 * i + 1));
            total += g(x1, x2) + g(y1, y2) - g(x1, y2) - g(x2, y1);
        }
        let r = mmd_lin(&s, &k, 0.05).unwrap();
        assert!((r.statistic - total / 5.0).abs() < 1e-14);
    }

    #[test]
    fn linear_statistic_invariant_to_block_permutation() {
        let s = sample_problem(&ToyProblem::gmd(3), 40, 3);
        let k = GaussianKernel::new(1.2).unwrap();
        let blocks: Vec<usize> = (0..20).rev().collect();
        let idx: Vec<usize> = blocks.iter().flat_map(|&b| [2 * b, 2 * b + 1]).collect();
        let a = mmd_lin(&s, &k, 0.05).unwrap().statistic;
        let b = mmd_lin(&s.select_pairs(&idx), &k, 0.05).unwrap().statistic;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn u_statistic_matches_double_loop() {
        let s = sample_problem(&ToyProblem::gmd(2), 6, 4);
        let k = GaussianKernel::new(1.1).unwrap();
        let g = |a: &[f64], b: &[f64]| kernel_eval_ref(a, b, 1.1);
        let n = 6;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (xi, xj, yi, yj) = (s.x().row(i), s.x().row(j), s.y().row(i), s.y().row(j));
                    sum += g(xi, xj) + g(yi, yj) - g(xi, yj) - g(xj, yi);
                }
            }
        }
        let nn = n as f64;
        let oracle = sum / (nn * (nn - 1.0));
        assert!((mmd_u_statistic(&s, &k).unwrap() - oracle).abs() < 1e-13);
        let r = mmd_quad(&s, &k, 0.05, &PermutationConfig::new(20, 1).unwrap()).unwrap();
        assert!((r.statistic - oracle).abs() < 1e-13);
    }

    fn kernel_eval_ref(a: &[f64], b: &[f64], sigma: f64) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn permutation_p_values_are_super_uniform_under_null() {
        let k = GaussianKernel::new(1.0).unwrap();
        let p: Vec<f64> = (0..500)
            .map(|t| {
                let s = sample_problem(&ToyProblem::sg(1), 10, 100 + t);
                mmd_quad(&s, &k, 0.05, &PermutationConfig::new(19, t).unwrap()).unwrap().p_value
            })
            .collect();
        // one-sided: F_hat(u) ≤ u + tolerance on the grid of attainable values
        let worst = (1..=20)
            .map(|i| {
                let u = i as f64 / 20.0;
                p.iter().filter(|&&v| v <= u + 1e-12).count() as f64 / p.len() as f64 - u
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1.36 / (500f64).sqrt(), "{worst}");
        assert!(ks_distance(&p, |u| u.clamp(0.0, 1.0)) < 0.2);
    }

    #[test]
    fn quad_detects_gmd_and_is_deterministic() {
        let k = GaussianKernel::new(1.0).unwrap();
        let s = sample_problem(&ToyProblem::gmd(2), 200, 5);
        let cfg = PermutationConfig::new(100, 9).unwrap();
        let a = mmd_quad(&s, &k, 0.01, &cfg).unwrap();
        assert!(a.reject);
        assert_eq!(a, mmd_quad(&s, &k, 0.01, &cfg).unwrap());
        assert!(a.statistic > a.threshold);
    }

    #[test]
    fn hotelling_matches_scalar_t_test() {
        let x = [1.0, 2.5, 0.3, 1.7, 2.2, 0.9];
        let y = [0.4, 1.1, -0.2, 0.8, 0.1, 1.5];
        let s = SamplePair::new(rows(&x), rows(&y)).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        let sp2 = 0.5 * (var(&x) + var(&y));
        let t = (mean(&x) - mean(&y)) / (sp2 * (2.0 / 6.0)).sqrt();
        let r = hotelling_t2(&s, 0.05).unwrap();
        assert!((r.statistic - t * t).abs() < 1e-12);
        assert_eq!(r.dof, Some(1));
    }

    #[test]
    fn hotelling_misses_variance_difference() {
        let rejected = (0..300)
            .filter(|&t| hotelling_t2(&sample_problem(&ToyProblem::gvd(2), 200, 500 + t), 0.05).unwrap().reject)
            .count();
        // at the level α = 0.05, with room for binomial noise
        assert!(rejected as f64 / 300.0 < 0.1, "{rejected}");
    }

    #[test]
    fn hotelling_needs_more_samples_than_dimensions() {
        let s = sample_problem(&ToyProblem::gmd(5), 5, 6);
        assert!(matches!(hotelling_t2(&s, 0.05), Err(Error::SingularCovariance { n: 5, d: 5 })));
    }

    #[test]
    fn width_selection() {
        let s = sample_problem(&ToyProblem::gmd(2), 200, 7);
        for kind in [MmdKind::Linear, MmdKind::Quadratic] {
            assert_eq!(mmd_width_select(&s, &[0.4], kind).unwrap().sigma(), 0.4);
        }
        let same = SamplePair::new(s.x().clone(), s.x().clone()).unwrap();
        assert_eq!(mmd_width_select(&same, &[0.5, 1.0, 2.0], MmdKind::Linear).unwrap().sigma(), 0.5);
        assert!(mmd_width_select(&s, &[], MmdKind::Linear).is_err());

        let med = crate::optimize::median_distance(&s);
        let grid: Vec<f64> = (-6..=6).map(|k| med * 2f64.powi(k)).collect();
        let chosen = mmd_width_select(&s, &grid, MmdKind::Quadratic).unwrap().sigma();
        let values: Vec<f64> = grid.iter().map(|&g| mmd_u_statistic(&s, &GaussianKernel::new(g).unwrap()).unwrap()).collect();
        let argmax = (0..grid.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b });
        assert_eq!(chosen, grid[argmax]);
        assert!(chosen / med < 10.0 && med / chosen < 10.0);
    }

    #[test]
    fn permutation_config_validates() {
        assert!(PermutationConfig::new(0, 1).is_err());
        assert_eq!(PermutationConfig::default().num_permutations, 400);
    }
}
