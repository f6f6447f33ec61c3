//! Grid simulation of the limiting objects: correlated two-sided Brownian
//! motions with parabolic drifts, the componentwise convex-minorant limit of
//! the naive estimator, and the self-induced limit of the maximum likelihood
//! estimator computed by fixed-point iteration over convex minorants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{self};
use crate::stepfn::{convex_minorant, Diagram};

/// Local model quantities at the centering time `t0`: sub-distribution
/// values, their derivatives, and the observation-time density.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalParams {
    pub t0: f64,
    /// `F_{0k}(t0)` per cause, each in (0, 1) with sum below 1.
    pub subdist: Vec<f64>,
    /// `f_{0k}(t0)` per cause, positive.
    pub density: Vec<f64>,
    /// `g(t0)`, positive.
    pub obs_density: f64,
}

impl LocalParams {
    pub fn new(t0: f64, subdist: Vec<f64>, density: Vec<f64>, obs_density: f64) -> Result<Self> {
        if subdist.is_empty() || subdist.len() != density.len() {
            return Err(Error::invalid(
                "subdist and density must be equal-length and non-empty",
            ));
        }
        if subdist.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::invalid("sub-distribution values must lie in (0, 1)"));
        }
        let total: f64 = subdist.iter().sum();
        if total >= 1.0 {
            return Err(Error::invalid(format!(
                "sub-distribution values sum to {total}, must stay below 1"
            )));
        }
        if density.iter().any(|&f| !f.is_finite() || f <= 0.0) {
            return Err(Error::invalid("densities must be positive"));
        }
        if !obs_density.is_finite() || obs_density <= 0.0 {
            return Err(Error::invalid("observation density must be positive"));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0 must be finite"));
        }
        Ok(Self {
            t0,
            subdist,
            density,
            obs_density,
        })
    }

    pub fn n_causes(&self) -> usize {
        self.subdist.len()
    }

    pub fn sum_subdist(&self) -> f64 {
        self.subdist.iter().sum()
    }

    /// Reciprocal sub-distribution weight `a_k`; index `K + 1` gives the
    /// weight of the surviving mass.
    pub fn a(&self, cause: usize) -> f64 {
        if cause <= self.n_causes() {
            1.0 / self.subdist[cause - 1]
        } else {
            1.0 / (1.0 - self.sum_subdist())
        }
    }

    pub fn density_sum(&self) -> f64 {
        self.density.iter().sum()
    }
}

/// Covariance of the driving Brownian motions at unit time, with the
/// pairwise correlations.
#[derive(Debug, Clone)]
pub struct Covariance {
    k: usize,
    /// Row-major `K x K` matrix.
    pub sigma: Vec<f64>,
    /// Row-major correlation matrix (unit diagonal).
    pub corr: Vec<f64>,
}

impl Covariance {
    pub fn sigma_at(&self, j: usize, k: usize) -> f64 {
        self.sigma[(j - 1) * self.k + (k - 1)]
    }

    pub fn corr_at(&self, j: usize, k: usize) -> f64 {
        self.corr[(j - 1) * self.k + (k - 1)]
    }
}

/// Multinomial covariance scaled by the observation density:
/// `Sigma_jk = (1{j=k} F_k - F_j F_k) / g`, with negative off-diagonal
/// correlations `-sqrt(F_j F_k) / sqrt((1 - F_j)(1 - F_k))`.
pub fn covariance(p: &LocalParams) -> Covariance {
    let k = p.n_causes();
    let g = p.obs_density;
    let mut sigma = vec![0.0; k * k];
    let mut corr = vec![0.0; k * k];
    for j in 0..k {
        for l in 0..k {
            let fj = p.subdist[j];
            let fl = p.subdist[l];
            let same = if j == l { fj } else { 0.0 };
            sigma[j * k + l] = (same - fj * fl) / g;
            corr[j * k + l] = if j == l {
                1.0
            } else {
                -math::sqrt(fj * fl) / math::sqrt((1.0 - fj) * (1.0 - fl))
            };
        }
    }
    Covariance { k, sigma, corr }
}

/// Configuration of the grid simulation.
///
/// Paths are sampled on the wide window `[-c*factor, c*factor]` and all
/// convergence and diagnostic statements are evaluated on the inner analysis
/// window `[-c, c]`, which suppresses truncation bias from the minorant
/// construction at the boundary.
#[derive(Debug, Clone, Copy)]
pub struct LimitConfig {
    /// Grid step.
    pub step: f64,
    /// Analysis half-width `c`.
    pub analysis_half: f64,
    /// Sampling window half-width as a multiple of `analysis_half`.
    pub sample_factor: f64,
    /// Fixed-point sup-norm tolerance on the analysis window.
    pub tol: f64,
    /// Damping weight on the fixed-point update.
    pub damping: f64,
    pub max_iter: usize,
    /// Touch-set detection tolerance in process units.
    pub touch_tol: f64,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            step: 0.005,
            analysis_half: 4.0,
            sample_factor: 2.0,
            tol: 1e-8,
            damping: 0.5,
            max_iter: 5000,
            touch_tol: 1e-6,
        }
    }
}

impl LimitConfig {
    fn n_half(&self) -> usize {
        math::round((self.analysis_half * self.sample_factor) / self.step) as usize
    }

    fn n_analysis(&self) -> usize {
        math::round(self.analysis_half / self.step) as usize
    }
}

/// Sampled driving paths on the grid: `K` Brownian motions `W` and their
/// drifted versions `V`.
#[derive(Debug, Clone)]
pub struct GridPaths {
    grid: Vec<f64>,
    i_zero: usize,
    analysis: (usize, usize),
    w: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl GridPaths {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Inclusive index range of the analysis window.
    pub fn analysis_range(&self) -> (usize, usize) {
        self.analysis
    }

    pub fn i_zero(&self) -> usize {
        self.i_zero
    }

    pub fn w(&self, cause: usize) -> &[f64] {
        &self.w[cause - 1]
    }

    pub fn v(&self, cause: usize) -> &[f64] {
        &self.v[cause - 1]
    }

    pub fn n_causes(&self) -> usize {
        self.w.len()
    }

    pub fn v_sum(&self) -> Vec<f64> {
        sum_rows(&self.v)
    }

    pub fn w_sum(&self) -> Vec<f64> {
        sum_rows(&self.w)
    }
}

fn sum_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out
}

fn build_grid(cfg: &LimitConfig) -> (Vec<f64>, usize, (usize, usize)) {
    let n_half = cfg.n_half();
    let len = 2 * n_half + 1;
    let grid: Vec<f64> = (0..len)
        .map(|i| (i as f64 - n_half as f64) * cfg.step)
        .collect();
    let n_ana = cfg.n_analysis().min(n_half);
    (grid, n_half, (n_half - n_ana, n_half + n_ana))
}

/// Sample the driving paths: increments over each grid step are independent
/// mean-zero Gaussian vectors with covariance `step * Sigma`, accumulated
/// outward from zero independently on each side, plus the parabolic drifts.
pub fn sample_paths(p: &LocalParams, cfg: &LimitConfig, seed: u64) -> GridPaths {
    let k = p.n_causes();
    let cov = covariance(p);
    let root = sym_sqrt(&cov.sigma, k);
    let (grid, i_zero, analysis) = build_grid(cfg);
    let len = grid.len();
    let sqrt_h = math::sqrt(cfg.step);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![vec![0.0; len]; k];
    let mut z = vec![0.0; k];
    let draw = |rng: &mut ChaCha8Rng, z: &mut [f64]| {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
    };
    for i in (i_zero + 1)..len {
        draw(&mut rng, &mut z);
        for (j, wj) in w.iter_mut().enumerate() {
            let inc: f64 = (0..k).map(|l| root[j * k + l] * z[l]).sum();
            wj[i] = wj[i - 1] + sqrt_h * inc;
        }
    }
    for i in (0..i_zero).rev() {
        draw(&mut rng, &mut z);
        for (j, wj) in w.iter_mut().enumerate() {
            let inc: f64 = (0..k).map(|l| root[j * k + l] * z[l]).sum();
            wj[i] = wj[i + 1] + sqrt_h * inc;
        }
    }
    let v = add_drift(p, &grid, &w);
    GridPaths {
        grid,
        i_zero,
        analysis,
        w,
        v,
    }
}

/// Test hook: zero-noise paths, so every drifted path is exactly its
/// parabola.
pub fn drift_only_paths(p: &LocalParams, cfg: &LimitConfig) -> GridPaths {
    let k = p.n_causes();
    let (grid, i_zero, analysis) = build_grid(cfg);
    let w = vec![vec![0.0; grid.len()]; k];
    let v = add_drift(p, &grid, &w);
    GridPaths {
        grid,
        i_zero,
        analysis,
        w,
        v,
    }
}

fn add_drift(p: &LocalParams, grid: &[f64], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    w.iter()
        .enumerate()
        .map(|(j, wj)| {
            grid.iter()
                .zip(wj)
                .map(|(&t, &x)| x + 0.5 * p.density[j] * t * t)
                .collect()
        })
        .collect()
}

/// A tuple of convex processes on the grid with their right slopes.
///
/// `f[k][i]` is the slope of the cell `[t_i, t_{i+1})`; the final entry
/// repeats the last cell.
#[derive(Debug, Clone)]
pub struct MinorantTuple {
    pub h: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

fn minorant_values(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let d = Diagram::from_xy(grid, values).expect("grid is strictly increasing");
    let hull = convex_minorant(&d).expect("grid has at least 2 points");
    grid.iter().map(|&x| hull.eval(x)).collect()
}

fn cell_slopes(grid: &[f64], h: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(h.len());
    for i in 0..h.len() - 1 {
        f.push((h[i + 1] - h[i]) / (grid[i + 1] - grid[i]));
    }
    f.push(*f.last().unwrap());
    f
}

/// Componentwise convex minorants of the drifted paths and their slopes:
/// the limit of the naive estimator.
pub fn naive_limit(paths: &GridPaths) -> MinorantTuple {
    let mut h = Vec::with_capacity(paths.n_causes());
    let mut f = Vec::with_capacity(paths.n_causes());
    for vk in &paths.v {
        let hk = minorant_values(&paths.grid, vk);
        f.push(cell_slopes(&paths.grid, &hk));
        h.push(hk);
    }
    MinorantTuple { h, f }
}

/// Converged fixed point of the self-induced minorant map.
#[derive(Debug, Clone)]
pub struct FixedPointFit {
    pub process: MinorantTuple,
    pub iterations: usize,
    /// Sup-norm residual of the total-sum minorant map at the returned
    /// iterate, on the analysis window.
    pub residual: f64,
    /// The leave-one-out map was used to reach the fixed point.
    pub used_fallback: bool,
}

/// The two equivalent self-induced characterizations.
#[derive(Clone, Copy, PartialEq)]
enum MapKind {
    /// `G_k(H)` = minorant of `V_k + (a_{K+1}/a_k)(V_+ - H_+)`.
    TotalSum,
    /// `G_k(H)` = minorant of
    /// `V_k + (a_{K+1}/(a_k + a_{K+1}))(V_+^{(-k)} - H_+^{(-k)})`.
    LeaveOneOut,
}

struct FixedPointIter<'a> {
    p: &'a LocalParams,
    paths: &'a GridPaths,
    v_plus: Vec<f64>,
}

impl<'a> FixedPointIter<'a> {
    fn apply(&self, kind: MapKind, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.p.n_causes();
        let a_last = self.p.a(k + 1);
        let h_plus = sum_rows(h);
        (0..k)
            .map(|c| {
                let ratio = match kind {
                    MapKind::TotalSum => a_last / self.p.a(c + 1),
                    MapKind::LeaveOneOut => a_last / (self.p.a(c + 1) + a_last),
                };
                let target: Vec<f64> = (0..self.paths.grid.len())
                    .map(|i| {
                        let gap = match kind {
                            MapKind::TotalSum => self.v_plus[i] - h_plus[i],
                            MapKind::LeaveOneOut => {
                                (self.v_plus[i] - self.paths.v[c][i]) - (h_plus[i] - h[c][i])
                            }
                        };
                        self.paths.v[c][i] + ratio * gap
                    })
                    .collect();
                minorant_values(&self.paths.grid, &target)
            })
            .collect()
    }

    fn residual(&self, kind: MapKind, h: &[Vec<f64>]) -> f64 {
        let (lo, hi) = self.paths.analysis;
        let image = self.apply(kind, h);
        let mut r = 0.0f64;
        for c in 0..h.len() {
            for i in lo..=hi {
                r = r.max(math::abs(image[c][i] - h[c][i]));
            }
        }
        r
    }
}

/// Self-induced limit of the maximum likelihood estimator.
///
/// Iterates the damped map `H <- (1 - damping) H + damping G(H)` starting
/// from the componentwise minorants, where `G_k(H)` is the convex minorant
/// of `V_k + (a_{K+1}/a_k)(V_+ - H_+)`. That map's linearized gain is
/// `F_{0+}/(1 - F_{0+})`, so the damped iteration oscillates when the total
/// failure mass at the center is large; in that regime (or when the primary
/// iteration stalls) the equivalent leave-one-out characterization is used
/// instead, whose gain stays below one. The returned tuple is an exact map
/// image (hence polygonal) and `residual` is measured against the total-sum
/// map regardless of the route taken.
pub fn mle_limit(p: &LocalParams, paths: &GridPaths, cfg: &LimitConfig) -> Result<FixedPointFit> {
    let k = p.n_causes();
    if k != paths.n_causes() {
        return Err(Error::invalid("parameter and path dimensions disagree"));
    }
    let iter_ctx = FixedPointIter {
        p,
        paths,
        v_plus: paths.v_sum(),
    };
    if k == 1 {
        // The map fixes the componentwise minorant exactly: the target
        // equals the path at every touch point and lies above it elsewhere.
        let naive = naive_limit(paths);
        let residual = iter_ctx.residual(MapKind::TotalSum, &naive.h);
        if residual <= cfg.tol {
            return Ok(FixedPointFit {
                process: naive,
                iterations: 1,
                residual,
                used_fallback: false,
            });
        }
    }
    let start = naive_limit(paths).h;
    let gain: f64 = (1..=k).map(|c| p.a(k + 1) / p.a(c)).sum();
    let primary_stable = cfg.damping * (1.0 + gain) < 2.0;
    let mut spent = 0usize;
    if primary_stable {
        let budget = cfg.max_iter / 5;
        // Converge below tolerance by the map's own gain so the residual of
        // the returned image itself still clears the bar.
        let threshold = cfg.tol / (2.0 + gain);
        match run_fixed_point(
            &iter_ctx,
            MapKind::TotalSum,
            start.clone(),
            cfg,
            threshold,
            budget,
        ) {
            Ok((h, iters)) => {
                return finish_fixed_point(&iter_ctx, paths, h, iters, false, cfg);
            }
            Err(iters) => spent = iters,
        }
    }
    // Fallback: converge the contracting map tighter than the target so the
    // total-sum residual of the result lands under tolerance.
    let mut threshold = cfg.tol / 10.0;
    let mut h = start;
    for _ in 0..3 {
        let budget = cfg.max_iter.saturating_sub(spent);
        if budget == 0 {
            break;
        }
        match run_fixed_point(
            &iter_ctx,
            MapKind::LeaveOneOut,
            h.clone(),
            cfg,
            threshold,
            budget,
        ) {
            Ok((image, iters)) => {
                spent += iters;
                let total_residual = iter_ctx.residual(MapKind::TotalSum, &image);
                if total_residual <= cfg.tol {
                    return finish_fixed_point(&iter_ctx, paths, image, spent, true, cfg);
                }
                h = image;
                threshold /= 10.0;
            }
            Err(iters) => {
                spent += iters;
                break;
            }
        }
    }
    Err(Error::FixedPointDiverged {
        iterations: spent,
        residual: iter_ctx.residual(MapKind::TotalSum, &h),
    })
}

/// Damped iteration of one map until its own residual falls below
/// `threshold`; bails out early when the residual stops improving. Returns
/// the exact map image at the accepted iterate.
fn run_fixed_point(
    ctx: &FixedPointIter<'_>,
    kind: MapKind,
    mut h: Vec<Vec<f64>>,
    cfg: &LimitConfig,
    threshold: f64,
    budget: usize,
) -> core::result::Result<(Vec<Vec<f64>>, usize), usize> {
    let (lo, hi) = ctx.paths.analysis;
    let k = h.len();
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for iter in 1..=budget {
        let image = ctx.apply(kind, &h);
        let mut residual = 0.0f64;
        for c in 0..k {
            for i in lo..=hi {
                residual = residual.max(math::abs(image[c][i] - h[c][i]));
            }
        }
        if residual <= threshold {
            return Ok((image, iter));
        }
        if residual < best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 40 {
                return Err(iter);
            }
        }
        for c in 0..k {
            for i in 0..h[c].len() {
                h[c][i] = (1.0 - cfg.damping) * h[c][i] + cfg.damping * image[c][i];
            }
        }
    }
    Err(budget)
}

fn finish_fixed_point(
    ctx: &FixedPointIter<'_>,
    paths: &GridPaths,
    h: Vec<Vec<f64>>,
    iterations: usize,
    used_fallback: bool,
    cfg: &LimitConfig,
) -> Result<FixedPointFit> {
    let residual = ctx.residual(MapKind::TotalSum, &h);
    if residual > cfg.tol {
        return Err(Error::FixedPointDiverged {
            iterations,
            residual,
        });
    }
    let f = h.iter().map(|hc| cell_slopes(&paths.grid, hc)).collect();
    Ok(FixedPointFit {
        process: MinorantTuple { h, f },
        iterations,
        residual,
        used_fallback,
    })
}

/// One integral spot check between a touch point `tau` and a second time
/// `s`, comparing the recentered slope integral with the driving noise
/// increment. Negative `margin` beyond tolerance indicates a violation; at
/// `s` in the touch set the two sides must agree.
#[derive(Debug, Clone, Copy)]
pub struct IntegralCheck {
    pub cause: usize,
    pub tau: f64,
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub s_in_touch_set: bool,
}

impl IntegralCheck {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Per-replication diagnostics on the analysis window.
#[derive(Debug, Clone)]
pub struct PathDiagnostics {
    /// Touch points of the weighted path against the weighted fitted tuple.
    pub touch_fit: Vec<usize>,
    /// Touch points of the weighted path against its own convex minorant.
    pub touch_envelope: Vec<usize>,
    /// Fraction of fitted touch points missing from the envelope touch set.
    pub inclusion_fraction: Vec<f64>,
    /// Largest envelope gap over the fitted touch set (0 when empty).
    pub inclusion_excess: Vec<f64>,
    /// Largest violation of "the weighted fitted tuple stays below the
    /// weighted path", over causes and the window.
    pub domination_excess: f64,
    /// Largest weighted gap at a slope jump, where the two processes must
    /// touch.
    pub jump_touch_gap: f64,
    /// Largest violation of "summed fit stays below the summed path".
    pub sum_excess: f64,
    /// Largest violation of "naive minorant stays below the fitted process".
    pub order_excess: f64,
    /// Slope jump counts per cause on the window.
    pub jump_counts: Vec<usize>,
    pub integral_checks: Vec<IntegralCheck>,
}

/// Diagnostics for a converged fit: touch sets and their inclusion, the two
/// pathwise domination statements, jump counts, and randomized integral
/// spot checks.
pub fn diagnostics(
    p: &LocalParams,
    paths: &GridPaths,
    fit: &FixedPointFit,
    naive: &MinorantTuple,
    cfg: &LimitConfig,
    spot_seed: u64,
) -> PathDiagnostics {
    let k = p.n_causes();
    let (lo, hi) = paths.analysis;
    let v_plus = paths.v_sum();
    let w_plus = paths.w_sum();
    let h_hat_plus = sum_rows(&fit.process.h);
    let a_last = p.a(k + 1);

    let mut touch_fit = Vec::with_capacity(k);
    let mut touch_envelope = Vec::with_capacity(k);
    let mut inclusion_fraction = Vec::with_capacity(k);
    let mut inclusion_excess = Vec::with_capacity(k);
    let mut jump_counts = Vec::with_capacity(k);
    let mut touch_indices: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut gap_fit_all: Vec<Vec<f64>> = Vec::with_capacity(k);

    for c in 0..k {
        let a_c = p.a(c + 1);
        let combined: Vec<f64> = (0..paths.grid.len())
            .map(|i| a_c * paths.v[c][i] + a_last * v_plus[i])
            .collect();
        let fitted: Vec<f64> = (0..paths.grid.len())
            .map(|i| a_c * fit.process.h[c][i] + a_last * h_hat_plus[i])
            .collect();
        let envelope = minorant_values(&paths.grid, &combined);
        let mut hat = Vec::new();
        let mut env = 0usize;
        let mut missing = 0usize;
        let mut excess = 0.0f64;
        let mut gaps = vec![f64::INFINITY; paths.grid.len()];
        for i in lo..=hi {
            let gap_fit = combined[i] - fitted[i];
            let gap_env = combined[i] - envelope[i];
            gaps[i] = gap_fit;
            if gap_env <= cfg.touch_tol {
                env += 1;
            }
            if gap_fit <= cfg.touch_tol {
                hat.push(i);
                if gap_env > cfg.touch_tol {
                    missing += 1;
                }
                if gap_env > excess {
                    excess = gap_env;
                }
            }
        }
        touch_envelope.push(env);
        inclusion_fraction.push(if hat.is_empty() {
            0.0
        } else {
            missing as f64 / hat.len() as f64
        });
        inclusion_excess.push(excess);
        touch_fit.push(hat.len());
        touch_indices.push(hat);
        gap_fit_all.push(gaps);

        let mut jumps = 0usize;
        for i in lo..hi {
            if fit.process.f[c][i + 1] - fit.process.f[c][i] > 1e-9 {
                jumps += 1;
            }
        }
        jump_counts.push(jumps);
    }

    // The fitted tuple must stay below the weighted path and meet it at
    // every slope jump (the jump sits at the right end of cell i).
    let mut domination_excess = 0.0f64;
    let mut jump_touch_gap = 0.0f64;
    for (c, gaps) in gap_fit_all.iter().enumerate() {
        for &g in &gaps[lo..=hi] {
            domination_excess = domination_excess.max(-g);
        }
        for i in lo..hi {
            if fit.process.f[c][i + 1] - fit.process.f[c][i] > 1e-9 {
                jump_touch_gap = jump_touch_gap.max(gaps[i + 1]);
            }
        }
    }

    let mut sum_excess = 0.0f64;
    for i in lo..=hi {
        sum_excess = sum_excess.max(h_hat_plus[i] - v_plus[i]);
    }
    let mut order_excess = 0.0f64;
    for c in 0..k {
        for i in lo..=hi {
            order_excess = order_excess.max(naive.h[c][i] - fit.process.h[c][i]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spot_seed);
    let mut integral_checks = Vec::new();
    let f_plus_density = p.density_sum();
    for trial in 0..10 {
        let c = trial % k;
        if touch_indices[c].is_empty() {
            continue;
        }
        let tau_i = touch_indices[c][rng.gen_range(0..touch_indices[c].len())];
        let s_i = rng.gen_range(lo..=hi);
        let a_c = p.a(c + 1);
        let tau = paths.grid[tau_i];
        let s = paths.grid[s_i];
        // The slope integral telescopes to increments of the fitted
        // processes; subtracting the linear drift of the recentering gives
        // the left side, while the right side is the weighted noise
        // increment. Reversed endpoints negate both sides.
        let lhs = a_c * (fit.process.h[c][s_i] - fit.process.h[c][tau_i])
            + a_last * (h_hat_plus[s_i] - h_hat_plus[tau_i])
            - (a_c * p.density[c] + a_last * f_plus_density) * (s * s - tau * tau) / 2.0;
        let rhs =
            a_c * (paths.w[c][s_i] - paths.w[c][tau_i]) + a_last * (w_plus[s_i] - w_plus[tau_i]);
        integral_checks.push(IntegralCheck {
            cause: c + 1,
            tau,
            s,
            lhs,
            rhs,
            s_in_touch_set: gap_fit_all[c][s_i] <= cfg.touch_tol,
        });
    }

    PathDiagnostics {
        touch_fit,
        touch_envelope,
        inclusion_fraction,
        inclusion_excess,
        domination_excess,
        jump_touch_gap,
        sum_excess,
        order_excess,
        jump_counts,
        integral_checks,
    }
}

/// Symmetric square root via cyclic Jacobi eigendecomposition; negative
/// rounding noise in the spectrum is clipped at zero, which keeps the
/// construction stable as the correlations approach -1.
fn sym_sqrt(a: &[f64], k: usize) -> Vec<f64> {
    let (mut m, mut q) = (a.to_vec(), vec![0.0; k * k]);
    for i in 0..k {
        q[i * k + i] = 1.0;
    }
    for _ in 0..64 {
        let mut off = 0.0;
        for r in 0..k {
            for c in (r + 1)..k {
                off += m[r * k + c] * m[r * k + c];
            }
        }
        if off < 1e-28 {
            break;
        }
        for r in 0..k {
            for c in (r + 1)..k {
                let apq = m[r * k + c];
                if math::abs(apq) < 1e-300 {
                    continue;
                }
                let app = m[r * k + r];
                let aqq = m[c * k + c];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + math::sqrt(1.0 + theta * theta))
                };
                let cos = 1.0 / math::sqrt(1.0 + t * t);
                let sin = t * cos;
                for i in 0..k {
                    let mir = m[i * k + r];
                    let mic = m[i * k + c];
                    m[i * k + r] = cos * mir - sin * mic;
                    m[i * k + c] = sin * mir + cos * mic;
                }
                for i in 0..k {
                    let mri = m[r * k + i];
                    let mci = m[c * k + i];
                    m[r * k + i] = cos * mri - sin * mci;
                    m[c * k + i] = sin * mri + cos * mci;
                }
                for i in 0..k {
                    let qir = q[i * k + r];
                    let qic = q[i * k + c];
                    q[i * k + r] = cos * qir - sin * qic;
                    q[i * k + c] = sin * qir + cos * qic;
                }
            }
        }
    }
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for l in 0..k {
                let lam = m[l * k + l].max(0.0);
                s += q[i * k + l] * math::sqrt(lam) * q[j * k + l];
            }
            out[i * k + j] = s;
        }
    }
    out
}
