//! Parameter tuning on the training half: data splitting, the power proxy
//! and its analytic gradient, gradient ascent over (V, log σ), grid search
//! over σ, and location initialization.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_matrix, FeatureMapKind, GaussianKernel, TestLocations, TestParams, DEFAULT_MIN_SEPARATION};
use crate::linalg::{dot, squared_distance, Matrix};
use crate::rng::{stream, streams};
use crate::statistic::{statistic, statistic_parts, SamplePair, DEFAULT_GAMMA};

const MAX_INIT_ATTEMPTS: usize = 100;
const MEDIAN_SUBSAMPLE: usize = 500;

/// Disjoint training and test halves, with the row indices each came from.
#[derive(Debug, Clone)]
pub struct SplitSamples {
    pub train: SamplePair,
    pub test: SamplePair,
    pub train_x_idx: Vec<usize>,
    pub train_y_idx: Vec<usize>,
    pub test_x_idx: Vec<usize>,
    pub test_y_idx: Vec<usize>,
}

impl SplitSamples {
    /// True when no original row is used by both halves.
    pub fn is_disjoint(&self) -> bool {
        fn disjoint(a: &[usize], b: &[usize]) -> bool {
            let set: std::collections::HashSet<_> = a.iter().collect();
            b.iter().all(|i| !set.contains(i))
        }
        disjoint(&self.train_x_idx, &self.test_x_idx) && disjoint(&self.train_y_idx, &self.test_y_idx)
    }
}

/// Shuffles X and Y independently, gives the first ⌊n/2⌋ of each to the
/// test half and the next ⌊n/2⌋ to the training half. For odd n the last
/// shuffled index is dropped.
pub fn split(sample: &SamplePair, seed: u64) -> Result<SplitSamples> {
    let n = sample.len();
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let half = n / 2;
    let shuffled = |id| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, id));
        idx
    };
    let px = shuffled(streams::SPLIT_X);
    let py = shuffled(streams::SPLIT_Y);
    let (test_x_idx, train_x_idx) = (px[..half].to_vec(), px[half..2 * half].to_vec());
    let (test_y_idx, train_y_idx) = (py[..half].to_vec(), py[half..2 * half].to_vec());
    let train = SamplePair::new(sample.x().select_rows(&train_x_idx), sample.y().select_rows(&train_y_idx))?;
    let test = SamplePair::new(sample.x().select_rows(&test_x_idx), sample.y().select_rows(&test_y_idx))?;
    Ok(SplitSamples {
        train,
        test,
        train_x_idx,
        train_y_idx,
        test_x_idx,
        test_y_idx,
    })
}

/// The power proxy: the test statistic evaluated on the training half.
pub fn objective(kind: FeatureMapKind, theta: &TestParams, train: &SamplePair, gamma: f64) -> Result<f64> {
    statistic(&feature_matrix(kind, theta, train)?, gamma)
}

/// Objective and its gradient with respect to `(vec(V), log σ)`, where
/// `vec(V)` lists the locations row by row.
pub fn objective_and_gradient(
    kind: FeatureMapKind,
    theta: &TestParams,
    train: &SamplePair,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let locs = &theta.locations;
    let (n, d, j) = (train.len(), locs.dim(), locs.len());
    let z = feature_matrix(kind, theta, train)?;
    let value = statistic(&z, gamma)?;
    let parts = statistic_parts(&z, gamma)?;

    // λ̂ = n z̄ᵀw, dλ̂ = Σ_i Σ_a c_ia dz_ia with c_ia = w_a (2 − 2n/(n−1) e_i)
    let scale = 2.0 * n as f64 / (n as f64 - 1.0);
    let sigma = theta.kernel.sigma();
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut grad = vec![0.0; j * d + 1];
    let mut dlog_sigma = 0.0;
    let mut coef = vec![0.0; z.ncols()];

    for i in 0..n {
        let factor = 2.0 - scale * parts.centered_proj[i];
        for (c, &w) in coef.iter_mut().zip(&parts.w) {
            *c = w * factor;
        }
        let (x, y) = (train.x().row(i), train.y().row(i));
        match kind {
            FeatureMapKind::Me => {
                for jj in 0..j {
                    let v = locs.point(jj);
                    let (dx2, dy2) = (squared_distance(x, v), squared_distance(y, v));
                    let kx = (-dx2 * 0.5 * inv_s2).exp();
                    let ky = (-dy2 * 0.5 * inv_s2).exp();
                    let c = coef[jj];
                    let (ax, ay) = (c * kx * inv_s2, c * ky * inv_s2);
                    let g = &mut grad[jj * d..(jj + 1) * d];
                    for k in 0..d {
                        g[k] += ax * (x[k] - v[k]) - ay * (y[k] - v[k]);
                    }
                    dlog_sigma += ax * dx2 - ay * dy2;
                }
            }
            FeatureMapKind::Scf => {
                let (nx2, ny2) = (dot(x, x), dot(y, y));
                let lx = (-nx2 * 0.5 * inv_s2).exp();
                let ly = (-ny2 * 0.5 * inv_s2).exp();
                for jj in 0..j {
                    let v = locs.point(jj);
                    let (sx, cx) = dot(x, v).sin_cos();
                    let (sy, cy) = dot(y, v).sin_cos();
                    let (cs, cc) = (coef[2 * jj], coef[2 * jj + 1]);
                    let ax = lx * (cs * cx - cc * sx);
                    let ay = ly * (cs * cy - cc * sy);
                    let g = &mut grad[jj * d..(jj + 1) * d];
                    for k in 0..d {
                        g[k] += ax * x[k] - ay * y[k];
                    }
                    dlog_sigma += inv_s2
                        * (cs * (lx * sx * nx2 - ly * sy * ny2) + cc * (lx * cx * nx2 - ly * cy * ny2));
                }
            }
        }
    }
    grad[j * d] = dlog_sigma;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((value, grad))
}

pub fn gradient(kind: FeatureMapKind, theta: &TestParams, train: &SamplePair, gamma: f64) -> Result<Vec<f64>> {
    objective_and_gradient(kind, theta, train, gamma).map(|(_, g)| g)
}

/// How the initial test locations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// ME: normals with diagonal covariance fitted to each sample.
    /// SCF: standard normal.
    #[default]
    FittedNormal,
    /// J distinct training points picked at random.
    RandomPoints,
}

/// Gradient-ascent and grid-search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Objective evaluations allowed, the initial one included.
    pub max_iters: usize,
    /// Location step as a fraction of the data length scale.
    pub step_size: f64,
    /// Step for log σ.
    pub sigma_step: f64,
    /// Stop once an accepted step changes the objective by less than this
    /// relative amount.
    pub tolerance: f64,
    pub seed: u64,
    /// Bandwidth candidates; `None` uses median distance × 2^k, k = −4..4.
    pub sigma_grid: Option<Vec<f64>>,
    pub gamma: f64,
    pub min_separation: f64,
    pub init: InitScheme,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step_size: 0.1,
            sigma_step: 0.05,
            tolerance: 1e-6,
            seed: 0,
            sigma_grid: None,
            gamma: DEFAULT_GAMMA,
            min_separation: DEFAULT_MIN_SEPARATION,
            init: InitScheme::FittedNormal,
        }
    }
}

impl OptimConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.sigma_step > 0.0) {
            return Err(Error::InvalidParameter("step sizes must be positive".into()));
        }
        if let Some(g) = &self.sigma_grid {
            if g.is_empty() || g.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidParameter("sigma grid must be nonempty and positive".into()));
            }
        }
        Ok(())
    }
}

/// Record of one gradient-ascent run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimTrace {
    /// Every objective value evaluated, in order; the first is the
    /// initialization.
    pub objectives: Vec<f64>,
    pub params: TestParams,
    pub converged: bool,
}

impl OptimTrace {
    pub fn initial_objective(&self) -> f64 {
        self.objectives[0]
    }

    /// Running maximum of the evaluated objectives.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.objectives
            .iter()
            .map(|&v| {
                best = best.max(v);
                best
            })
            .collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.best_so_far().last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Median pairwise distance of the pooled sample (first 500 rows of each).
pub fn median_distance(sample: &SamplePair) -> f64 {
    let m = sample.len().min(MEDIAN_SUBSAMPLE);
    let pooled: Vec<&[f64]> = (0..m).map(|i| sample.x().row(i)).chain((0..m).map(|i| sample.y().row(i))).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for a in 0..pooled.len() {
        for b in (a + 1)..pooled.len() {
            dists.push(squared_distance(pooled[a], pooled[b]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, med, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *med > 0.0 {
        *med
    } else {
        1.0
    }
}

/// Median heuristic × {2^k : k = −4..4}.
pub fn default_sigma_grid(sample: &SamplePair) -> Vec<f64> {
    let med = median_distance(sample);
    (-4..=4).map(|k| med * 2f64.powi(k)).collect()
}

fn pooled_std(sample: &SamplePair) -> f64 {
    let (mx, my) = (sample.x().column_means(), sample.y().column_means());
    let n = sample.len() as f64;
    let d = sample.dim();
    let mut total = 0.0;
    for (m, mat) in [(&mx, sample.x()), (&my, sample.y())] {
        for r in mat.rows() {
            total += squared_distance(r, m);
        }
    }
    let s = (total / (2.0 * n * d as f64)).sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Length scale of the location coordinates: a distance for ME, a
/// frequency for SCF.
fn location_scale(kind: FeatureMapKind, sample: &SamplePair) -> f64 {
    match kind {
        FeatureMapKind::Me => median_distance(sample),
        FeatureMapKind::Scf => 1.0 / pooled_std(sample),
    }
}

fn fitted_diag_normal(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = m.column_means();
    let n = m.nrows();
    let mut var = vec![0.0; m.ncols()];
    for r in m.rows() {
        for ((v, &x), &mu) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let denom = n.saturating_sub(1).max(1) as f64;
    let std = var.iter().map(|v| (v / denom).max(1e-8).sqrt()).collect();
    (mean, std)
}

fn draw_locations<R: Rng>(rng: &mut R, kind: FeatureMapKind, scheme: InitScheme, train: &SamplePair, j: usize) -> Matrix {
    let d = train.dim();
    let mut data = Vec::with_capacity(j * d);
    match (scheme, kind) {
        (InitScheme::RandomPoints, _) => {
            let n = train.len();
            let mut idx: Vec<usize> = (0..2 * n).collect();
            idx.shuffle(rng);
            for &i in idx.iter().take(j) {
                let row = if i < n { train.x().row(i) } else { train.y().row(i - n) };
                data.extend_from_slice(row);
            }
            // fewer points than locations: pad with jittered copies
            while data.len() < j * d {
                let z: f64 = rng.sample(StandardNormal);
                data.push(z);
            }
        }
        (InitScheme::FittedNormal, FeatureMapKind::Me) => {
            let (mx, sx) = fitted_diag_normal(train.x());
            let (my, sy) = fitted_diag_normal(train.y());
            let from_x = j.div_ceil(2);
            for l in 0..j {
                let (m, s) = if l < from_x { (&mx, &sx) } else { (&my, &sy) };
                for k in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m[k] + s[k] * z);
                }
            }
        }
        (InitScheme::FittedNormal, FeatureMapKind::Scf) => {
            for _ in 0..j * d {
                data.push(rng.sample(StandardNormal));
            }
        }
    }
    Matrix::from_vec(j, d, data).expect("finite draws")
}

/// Draws J initial locations, resampling until every pair is at least
/// `min_separation` apart.
pub fn init_locations_with(
    kind: FeatureMapKind,
    train: &SamplePair,
    j: usize,
    seed: u64,
    scheme: InitScheme,
    min_separation: f64,
) -> Result<TestLocations> {
    if j == 0 {
        return Err(Error::InvalidParameter("J must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut rng = stream(seed, streams::INIT);
    for _ in 0..MAX_INIT_ATTEMPTS {
        let locs = TestLocations::new(draw_locations(&mut rng, kind, scheme, train, j))?;
        if locs.is_separated(min_separation) {
            return Ok(locs);
        }
    }
    Err(Error::SeparationFailure {
        j,
        eps: min_separation,
        attempts: MAX_INIT_ATTEMPTS,
    })
}

pub fn init_locations(kind: FeatureMapKind, train: &SamplePair, j: usize, seed: u64) -> Result<TestLocations> {
    init_locations_with(kind, train, j, seed, InitScheme::FittedNormal, DEFAULT_MIN_SEPARATION)
}

/// Index of the first strict maximizer; failed evaluations count as −∞.
fn best_sigma(
    kind: FeatureMapKind,
    locations: &TestLocations,
    train: &SamplePair,
    grid: &[f64],
    gamma: f64,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, &s) in grid.iter().enumerate() {
        let theta = TestParams::new(locations.clone(), GaussianKernel::new(s)?);
        match objective(kind, &theta, train, gamma) {
            Ok(v) if best.is_none_or(|(_, b)| v > b) => best = Some((i, v)),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::InvalidParameter("empty sigma grid".into())),
    }
}

/// Random locations, σ chosen by exhaustive grid search on the proxy.
pub fn optimize_grid(kind: FeatureMapKind, train: &SamplePair, j: usize, config: &OptimConfig) -> Result<TestParams> {
    config.validate()?;
    let locations = init_locations_with(kind, train, j, config.seed, config.init, config.min_separation)?;
    let grid = config.sigma_grid.clone().unwrap_or_else(|| default_sigma_grid(train));
    let (i, _) = best_sigma(kind, &locations, train, &grid, config.gamma)?;
    Ok(TestParams::new(locations, GaussianKernel::new(grid[i])?))
}

fn separate(mut locs: Matrix, eps: f64) -> Matrix {
    let j = locs.nrows();
    for b in 1..j {
        for a in 0..b {
            while squared_distance(locs.row(a), locs.row(b)).sqrt() < eps {
                locs.row_mut(b)[0] += 2.0 * eps;
            }
        }
    }
    locs
}

/// Gradient ascent on (V, log σ).
///
/// Locations start from [`init_locations_with`], σ from a grid search at those
/// locations. Each step moves along the gradient in coordinates where V is
/// measured in units of the data length scale ℓ and log σ in units of
/// `sigma_step / step_size`, so one unit step displaces V by at most
/// `step_size·ℓ` and log σ by at most `sigma_step`. The step multiplier grows
/// by 1.2 after an improving step and halves after a failed one. A run stops
/// after `max_iters` objective evaluations, when an accepted step improves the
/// objective by less than `tolerance` (relative), or when the multiplier
/// underflows; the best parameters evaluated are returned.
pub fn optimize_full(kind: FeatureMapKind, train: &SamplePair, j: usize, config: &OptimConfig) -> Result<OptimTrace> {
    config.validate()?;
    let locs0 = init_locations_with(kind, train, j, config.seed, config.init, config.min_separation)?;
    let grid = config.sigma_grid.clone().unwrap_or_else(|| default_sigma_grid(train));
    let (i0, _) = best_sigma(kind, &locs0, train, &grid, config.gamma)?;
    let d = train.dim();
    let gamma = config.gamma;

    let ell = location_scale(kind, train);
    let loc_speed = config.step_size * ell;
    let sigma_speed = config.sigma_step;

    let mut current = TestParams::new(locs0, GaussianKernel::new(grid[i0])?);
    let (mut f_cur, mut g_cur) = objective_and_gradient(kind, &current, train, gamma)?;
    let mut objectives = vec![f_cur];
    let mut mult = 1.0;
    let mut converged = false;

    while objectives.len() < config.max_iters {
        // steepest ascent in the scaled metric
        let norm = (g_cur[..j * d].iter().map(|g| (g * loc_speed).powi(2)).sum::<f64>()
            + (g_cur[j * d] * sigma_speed).powi(2))
        .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            converged = norm == 0.0;
            break;
        }
        let mut cand = current.locations.matrix().clone().into_vec();
        for (c, g) in cand.iter_mut().zip(&g_cur[..j * d]) {
            *c += mult * loc_speed * loc_speed * g / norm;
        }
        let log_sigma = current.kernel.sigma().ln() + mult * sigma_speed * sigma_speed * g_cur[j * d] / norm;
        let candidate = match (Matrix::from_vec(j, d, cand).and_then(TestLocations::new), GaussianKernel::new(log_sigma.exp())) {
            (Ok(l), Ok(k)) => TestParams::new(l, k),
            _ => break,
        };
        match objective_and_gradient(kind, &candidate, train, gamma) {
            Ok((f_new, g_new)) if f_new.is_finite() => {
                objectives.push(f_new);
                if f_new > f_cur {
                    let rel = (f_new - f_cur) / f_cur.abs().max(f64::MIN_POSITIVE);
                    current = candidate;
                    f_cur = f_new;
                    g_cur = g_new;
                    mult = (mult * 1.2).min(20.0);
                    if rel < config.tolerance {
                        converged = true;
                        break;
                    }
                } else {
                    mult *= 0.5;
                    if mult < 1e-4 {
                        converged = true;
                        break;
                    }
                }
            }
            // numerical failure: keep best-so-far
            Ok(_) | Err(_) => break,
        }
    }

    let locs = separate(current.locations.into_matrix(), config.min_separation);
    Ok(OptimTrace {
        objectives,
        params: TestParams::new(TestLocations::new(locs)?, current.kernel),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_problem, ToyProblem};

    fn gmd_train(n: usize, d: usize, seed: u64) -> SamplePair {
        sample_problem(&ToyProblem::gmd(d), n, seed)
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = gmd_train(4, 2, 1);
        let sp = split(&s, 3).unwrap();
        assert_eq!((sp.train.len(), sp.test.len()), (2, 2));
        let again = split(&s, 3).unwrap();
        assert_eq!(sp.train, again.train);
        assert_eq!(sp.test, again.test);
        assert!(matches!(split(&gmd_train(3, 2, 1), 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn split_odd_drops_one_index() {
        let s = gmd_train(1001, 1, 2);
        let sp = split(&s, 8).unwrap();
        assert_eq!((sp.train.len(), sp.test.len()), (500, 500));
        assert!(sp.is_disjoint());
        for (tr, te) in [(&sp.train_x_idx, &sp.test_x_idx), (&sp.train_y_idx, &sp.test_y_idx)] {
            let mut all: Vec<usize> = tr.iter().chain(te.iter()).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 1000);
            assert!(all.iter().all(|&i| i < 1001));
        }
    }

    #[test]
    fn objective_zero_when_samples_equal_and_shares_statistic_path() {
        let s = gmd_train(40, 2, 3);
        let same = SamplePair::new(s.x().clone(), s.x().clone()).unwrap();
        let theta = TestParams::new(
            TestLocations::from_rows(&[[0.0, 0.0], [1.0, 0.5]]).unwrap(),
            GaussianKernel::new(1.0).unwrap(),
        );
        assert_eq!(objective(FeatureMapKind::Me, &theta, &same, 1e-5).unwrap(), 0.0);
        for kind in [FeatureMapKind::Me, FeatureMapKind::Scf] {
            let a = objective(kind, &theta, &s, 1e-5).unwrap();
            let b = statistic(&feature_matrix(kind, &theta, &s).unwrap(), 1e-5).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            let (c, _) = objective_and_gradient(kind, &theta, &s, 1e-5).unwrap();
            assert_eq!(a.to_bits(), c.to_bits());
        }
    }

    #[test]
    fn second_location_is_better_away_from_the_first() {
        // P = N(0, I), Q = N((1,0), I): the informative regions are left and
        // right of the pooled centre along the first axis.
        let s = gmd_train(2000, 2, 4);
        let kernel = GaussianKernel::new(1.0).unwrap();
        let v1 = [-1.0, 0.0];
        let overlapping = TestParams::new(TestLocations::from_rows(&[v1, [-1.05, 0.0]]).unwrap(), kernel);
        let spread = TestParams::new(TestLocations::from_rows(&[v1, [2.0, 0.0]]).unwrap(), kernel);
        let a = objective(FeatureMapKind::Me, &overlapping, &s, 1e-5).unwrap();
        let b = objective(FeatureMapKind::Me, &spread, &s, 1e-5).unwrap();
        assert!(b > a, "{b} <= {a}");
    }

    #[test]
    fn gradient_vanishes_along_mirror_direction() {
        // include every pair together with its reflection through the x-axis
        let base = gmd_train(30, 2, 5);
        let mut xs = base.x().to_rows();
        let mut ys = base.y().to_rows();
        for i in 0..30 {
            xs.push(vec![xs[i][0], -xs[i][1]]);
            ys.push(vec![ys[i][0], -ys[i][1]]);
        }
        let s = SamplePair::new(Matrix::from_rows(&xs).unwrap(), Matrix::from_rows(&ys).unwrap()).unwrap();
        let theta = TestParams::new(
            TestLocations::from_rows(&[[-0.8, 0.0], [1.4, 0.0]]).unwrap(),
            GaussianKernel::new(0.9).unwrap(),
        );
        for kind in [FeatureMapKind::Me, FeatureMapKind::Scf] {
            let g = gradient(kind, &theta, &s, 1e-4).unwrap();
            assert!(g[1].abs() < 1e-8 && g[3].abs() < 1e-8, "{kind:?}: {g:?}");
            assert!(g[0].abs() > 1e-6);
        }
    }

    #[test]
    fn scaling_orbit_is_flat_for_me() {
        let s = gmd_train(40, 3, 6);
        let theta = TestParams::new(
            TestLocations::from_rows(&[[0.3, -0.2, 0.1], [1.2, 0.4, -0.6]]).unwrap(),
            GaussianKernel::new(1.3).unwrap(),
        );
        let gamma = 1e-4;
        let scaled = |c: f64| {
            let sc = SamplePair::new(s.x().scale(c), s.y().scale(c)).unwrap();
            let th = TestParams::new(
                TestLocations::new(theta.locations.matrix().scale(c)).unwrap(),
                GaussianKernel::new(1.3 * c).unwrap(),
            );
            objective(FeatureMapKind::Me, &th, &sc, gamma).unwrap()
        };
        let f0 = scaled(1.0);
        for c in [0.5, 2.0, 7.0] {
            assert!((scaled(c) - f0).abs() < 1e-9 * f0);
        }
        // tangent identity: ∇_V f·V + ∂f/∂log σ + d/dc f(cX, cY; V, σ) = 0
        let g = gradient(FeatureMapKind::Me, &theta, &s, gamma).unwrap();
        let along_theta: f64 = theta.locations.matrix().as_slice().iter().zip(&g[..6]).map(|(v, g)| v * g).sum::<f64>() + g[6];
        let h = 1e-5;
        let data_only = |c: f64| {
            let sc = SamplePair::new(s.x().scale(c), s.y().scale(c)).unwrap();
            objective(FeatureMapKind::Me, &theta, &sc, gamma).unwrap()
        };
        let along_data = (data_only(1.0 + h) - data_only(1.0 - h)) / (2.0 * h);
        assert!((along_theta + along_data).abs() < 1e-6 * f0.max(1.0), "{along_theta} + {along_data}");
    }

    /// Central-difference gradient, the oracle for the analytic one.
    fn fd_gradient(kind: FeatureMapKind, theta: &TestParams, s: &SamplePair, gamma: f64) -> Vec<f64> {
        let (j, d) = (theta.locations.len(), theta.locations.dim());
        let base = theta.locations.matrix().as_slice().to_vec();
        let log_sigma = theta.kernel.sigma().ln();
        let eval = |p: &[f64], ls: f64| {
            let th = TestParams::new(
                TestLocations::new(Matrix::from_vec(j, d, p.to_vec()).unwrap()).unwrap(),
                GaussianKernel::new(ls.exp()).unwrap(),
            );
            objective(kind, &th, s, gamma).unwrap()
        };
        let mut g = Vec::with_capacity(j * d + 1);
        for k in 0..j * d {
            let h = 1e-5 * base[k].abs().max(1.0);
            let (mut up, mut dn) = (base.clone(), base.clone());
            up[k] += h;
            dn[k] -= h;
            g.push((eval(&up, log_sigma) - eval(&dn, log_sigma)) / (2.0 * h));
        }
        let h = 1e-5 * log_sigma.abs().max(1.0);
        g.push((eval(&base, log_sigma + h) - eval(&base, log_sigma - h)) / (2.0 * h));
        g
    }

    pub(crate) fn gradient_relative_error(kind: FeatureMapKind, seed: u64) -> f64 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..60);
        let d = rng.random_range(1..5);
        let j = rng.random_range(1..4);
        let s = sample_problem(&ToyProblem::gmd(d), n, rng.random());
        let pts: Vec<f64> = (0..j * d).map(|_| rng.random_range(-1.5..2.0)).collect();
        let theta = TestParams::new(
            TestLocations::new(Matrix::from_vec(j, d, pts).unwrap()).unwrap(),
            GaussianKernel::new(rng.random_range(0.5..2.0)).unwrap(),
        );
        let gamma = 1e-3;
        let g = gradient(kind, &theta, &s, gamma).unwrap();
        let fd = fd_gradient(kind, &theta, &s, gamma);
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        diff / fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for kind in [FeatureMapKind::Me, FeatureMapKind::Scf] {
            for seed in 0..100 {
                let err = gradient_relative_error(kind, seed);
                assert!(err <= 1e-4, "{kind:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn gmd_ascent_strictly_improves() {
        let mut improved = 0;
        for seed in 0..100 {
            let s = gmd_train(100, 2, 1000 + seed);
            let cfg = OptimConfig { seed, ..OptimConfig::default() };
            let t = optimize_full(FeatureMapKind::Me, &s, 1, &cfg).unwrap();
            improved += usize::from(t.final_objective() > t.initial_objective());
        }
        assert!(improved >= 95, "{improved}/100");
    }

    #[test]
    fn single_iteration_returns_initialization() {
        let s = gmd_train(200, 2, 7);
        let cfg = OptimConfig {
            max_iters: 1,
            tolerance: 1e9,
            seed: 3,
            ..OptimConfig::default()
        };
        let trace = optimize_full(FeatureMapKind::Me, &s, 2, &cfg).unwrap();
        assert_eq!(trace.objectives.len(), 1);
        let init = init_locations(FeatureMapKind::Me, &s, 2, 3).unwrap();
        assert_eq!(trace.params.locations, init);
    }

    #[test]
    fn ascent_improves_and_best_is_monotone() {
        let s = gmd_train(300, 2, 8);
        let cfg = OptimConfig { seed: 1, ..OptimConfig::default() };
        for kind in [FeatureMapKind::Me, FeatureMapKind::Scf] {
            let trace = optimize_full(kind, &s, 2, &cfg).unwrap();
            let best = trace.best_so_far();
            assert!(best.windows(2).all(|w| w[1] >= w[0]));
            assert!(trace.final_objective() >= trace.initial_objective());
            let f = objective(kind, &trace.params, &s, cfg.gamma).unwrap();
            assert!((f - trace.final_objective()).abs() <= 1e-9 * f.max(1.0));
        }
    }

    #[test]
    fn grid_search_examples() {
        let s = gmd_train(300, 2, 9);
        let one = OptimConfig {
            sigma_grid: Some(vec![0.7]),
            ..OptimConfig::default()
        };
        assert_eq!(optimize_grid(FeatureMapKind::Me, &s, 2, &one).unwrap().kernel.sigma(), 0.7);

        let grid = vec![0.1, 1.0, 10.0];
        let cfg = OptimConfig {
            sigma_grid: Some(grid.clone()),
            seed: 4,
            ..OptimConfig::default()
        };
        let theta = optimize_grid(FeatureMapKind::Me, &s, 2, &cfg).unwrap();
        let values: Vec<f64> = grid
            .iter()
            .map(|&g| objective(FeatureMapKind::Me, &TestParams::new(theta.locations.clone(), GaussianKernel::new(g).unwrap()), &s, cfg.gamma).unwrap())
            .collect();
        let argmax = (0..3).fold(0, |b, i| if values[i] > values[b] { i } else { b });
        assert_eq!(theta.kernel.sigma(), grid[argmax]);
        assert_eq!(argmax, 1, "{values:?}");

        let same = SamplePair::new(s.x().clone(), s.x().clone()).unwrap();
        assert_eq!(optimize_grid(FeatureMapKind::Me, &same, 2, &cfg).unwrap().kernel.sigma(), 0.1);
    }

    #[test]
    fn init_examples() {
        let s = gmd_train(100, 3, 10);
        let one = init_locations(FeatureMapKind::Me, &s, 1, 0).unwrap();
        assert_eq!((one.len(), one.dim()), (1, 3));
        assert_eq!(init_locations(FeatureMapKind::Scf, &s, 4, 5).unwrap(), init_locations(FeatureMapKind::Scf, &s, 4, 5).unwrap());

        let p = Matrix::from_rows(&vec![[2.0, 2.0, 2.0]; 20]).unwrap();
        let flat = SamplePair::new(p.clone(), p).unwrap();
        let locs = init_locations(FeatureMapKind::Me, &flat, 5, 1).unwrap();
        assert!(locs.is_separated(DEFAULT_MIN_SEPARATION));
        for j in 0..5 {
            assert!(locs.point(j).iter().all(|v| (v - 2.0).abs() < 1e-2));
        }
        let rp = init_locations_with(FeatureMapKind::Me, &s, 3, 2, InitScheme::RandomPoints, 1e-6).unwrap();
        assert_eq!(rp.len(), 3);
        assert!(init_locations(FeatureMapKind::Me, &s, 0, 0).is_err());
    }

    #[test]
    fn optimization_leaves_test_half_untouched() {
        let s = gmd_train(200, 2, 11);
        let sp = split(&s, 1).unwrap();
        let before = serde_json::to_vec(&sp.test).unwrap();
        let _ = optimize_full(FeatureMapKind::Me, &sp.train, 2, &OptimConfig::default()).unwrap();
        let _ = optimize_grid(FeatureMapKind::Scf, &sp.train, 2, &OptimConfig::default()).unwrap();
        assert_eq!(before, serde_json::to_vec(&sp.test).unwrap());
    }
}
