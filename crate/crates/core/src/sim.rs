//! Data generation from the exponential observation model, the Monte-Carlo
//! mean-squared-error study, and the localized finite-sample processes used
//! for empirical limit pictures.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimators::{
    mle, naive, scaled_naive, truncated_naive, Dataset, MleOptions, Observation, SubDistEstimate,
};
use crate::limit::LocalParams;
use crate::math::{self, derive_seed, Kahan};

/// Generating model: the observation time is exponential with rate
/// `obs_rate`, the cause is drawn from `cause_probs`, and the failure time
/// given cause `k` is exponential with rate `cond_rates[k-1]`. Any residual
/// probability mass `1 - sum(cause_probs)` never fails.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub obs_rate: f64,
    pub cause_probs: Vec<f64>,
    pub cond_rates: Vec<f64>,
}

impl ModelSpec {
    pub fn new(obs_rate: f64, cause_probs: Vec<f64>, cond_rates: Vec<f64>) -> Result<Self> {
        if !obs_rate.is_finite() || obs_rate <= 0.0 {
            return Err(Error::invalid("observation rate must be positive"));
        }
        if cause_probs.is_empty() || cause_probs.len() != cond_rates.len() {
            return Err(Error::invalid(
                "cause probabilities and rates must be equal-length and non-empty",
            ));
        }
        if cause_probs
            .iter()
            .any(|&p| !p.is_finite() || p <= 0.0 || p > 1.0)
        {
            return Err(Error::invalid("cause probabilities must lie in (0, 1]"));
        }
        let total: f64 = cause_probs.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "cause probabilities sum to {total} > 1"
            )));
        }
        if cond_rates.iter().any(|&r| !r.is_finite() || r <= 0.0) {
            return Err(Error::invalid("conditional rates must be positive"));
        }
        Ok(Self {
            obs_rate,
            cause_probs,
            cond_rates,
        })
    }

    /// The two-cause exponential benchmark model: unit observation rate,
    /// cause probabilities 1/3 and 2/3, conditional rates 1 and 2.
    pub fn two_risk_exponential() -> Self {
        Self::new(1.0, vec![1.0 / 3.0, 2.0 / 3.0], vec![1.0, 2.0]).expect("valid benchmark model")
    }

    pub fn n_causes(&self) -> usize {
        self.cause_probs.len()
    }

    /// Observation-time distribution function.
    pub fn obs_cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            1.0 - math::exp(-self.obs_rate * t)
        }
    }
}

/// True sub-distribution function `P(X <= t, Y = k)`; zero for negative `t`.
pub fn true_subdist(m: &ModelSpec, cause: usize, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    m.cause_probs[cause - 1] * (1.0 - math::exp(-m.cond_rates[cause - 1] * t))
}

/// Local parameters of the model at `t0`: sub-distribution values, their
/// derivatives, and the observation density.
pub fn local_params_at(m: &ModelSpec, t0: f64) -> Result<LocalParams> {
    if !t0.is_finite() || t0 <= 0.0 {
        return Err(Error::invalid("t0 must be positive"));
    }
    let subdist: Vec<f64> = (1..=m.n_causes()).map(|k| true_subdist(m, k, t0)).collect();
    let density: Vec<f64> = m
        .cause_probs
        .iter()
        .zip(&m.cond_rates)
        .map(|(&p, &r)| p * r * math::exp(-r * t0))
        .collect();
    let g0 = m.obs_rate * math::exp(-m.obs_rate * t0);
    LocalParams::new(t0, subdist, density, g0)
}

/// Draw `n` i.i.d. observations: cause, conditional failure time and an
/// independent observation time; the recorded cause is `K + 1` when failure
/// had not happened by the observation time.
pub fn gen_data(m: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    let k = m.n_causes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let uy: f64 = rng.gen();
        let ux: f64 = rng.gen();
        let ut: f64 = rng.gen();
        let t = -math::ln_1p(-ut) / m.obs_rate;
        let mut cause = k + 1;
        let mut acc = 0.0;
        for (j, &p) in m.cause_probs.iter().enumerate() {
            acc += p;
            if uy < acc {
                let x = -math::ln_1p(-ux) / m.cond_rates[j];
                if x <= t {
                    cause = j + 1;
                }
                break;
            }
        }
        obs.push(Observation { time: t, cause });
    }
    Dataset::new(k, obs)
}

/// Estimators an experiment can evaluate. `Oracle` plugs in the generating
/// truth and is a diagnostic baseline for the experiment machinery itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseEstimator {
    Naive,
    ScaledNaive,
    TruncatedNaive,
    Mle,
    Oracle,
}

impl MseEstimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            MseEstimator::Naive => "naive",
            MseEstimator::ScaledNaive => "scaled-naive",
            MseEstimator::TruncatedNaive => "truncated-naive",
            MseEstimator::Mle => "mle",
            MseEstimator::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(MseEstimator::Naive),
            "scaled-naive" | "scaled_naive" => Some(MseEstimator::ScaledNaive),
            "truncated-naive" | "truncated_naive" => Some(MseEstimator::TruncatedNaive),
            "mle" => Some(MseEstimator::Mle),
            "oracle" => Some(MseEstimator::Oracle),
            _ => None,
        }
    }
}

/// Monte-Carlo study configuration.
#[derive(Debug, Clone)]
pub struct MseConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
    /// Evaluation times.
    pub grid: Vec<f64>,
    pub estimators: Vec<MseEstimator>,
    pub seed: u64,
    /// Scaling horizon of the scaled naive estimator.
    pub s0: f64,
    pub mle_options: MleOptions,
}

impl MseConfig {
    /// Desk-scale defaults: sizes 250 and 2500, 200 replications, the
    /// 0, 0.01, ..., 3 evaluation grid and all four estimators.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            sizes: vec![250, 2500],
            reps: 200,
            grid: default_grid(),
            estimators: vec![
                MseEstimator::Naive,
                MseEstimator::ScaledNaive,
                MseEstimator::TruncatedNaive,
                MseEstimator::Mle,
            ],
            seed,
            s0: 3.0,
            mle_options: MleOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::invalid("need at least 2 replications"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid("sizes must be non-empty and positive"));
        }
        if self.grid.is_empty() {
            return Err(Error::invalid("evaluation grid must be non-empty"));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid("estimator list must be non-empty"));
        }
        Ok(())
    }
}

/// Evaluation grid 0, 0.01, ..., 3.
pub fn default_grid() -> Vec<f64> {
    (0..=300).map(|i| i as f64 / 100.0).collect()
}

/// Independent seed for stream `index` of a root seed, for replication
/// fan-out outside of [`mse_experiment`].
pub fn stream_seed(root: u64, index: u64) -> u64 {
    derive_seed(root, 0, index)
}

/// Aggregated mean squared errors for one sample size.
#[derive(Debug, Clone)]
pub struct MseTable {
    pub size: usize,
    pub times: Vec<f64>,
    pub estimators: Vec<MseEstimator>,
    /// `mse[est][cause - 1][time]`.
    pub mse: Vec<Vec<Vec<f64>>>,
    /// Mean squared error of the maximum likelihood estimator divided by
    /// that of each estimator; `NaN` where undefined.
    pub relative: Vec<Vec<Vec<f64>>>,
}

/// Squared errors of every requested estimator for one replication,
/// `[est][cause - 1][time]`.
pub fn replication_squared_errors(
    m: &ModelSpec,
    cfg: &MseConfig,
    size_idx: usize,
    rep: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = cfg.sizes[size_idx];
    let seed = derive_seed(cfg.seed, size_idx as u64, rep as u64);
    let data = gen_data(m, n, seed)?;
    let k = m.n_causes();
    let needs_naive = cfg.estimators.iter().any(|e| {
        matches!(
            e,
            MseEstimator::Naive | MseEstimator::ScaledNaive | MseEstimator::TruncatedNaive
        )
    });
    let naive_fit = if needs_naive {
        Some(naive(&data)?)
    } else {
        None
    };
    let truth: Vec<Vec<f64>> = (1..=k)
        .map(|c| cfg.grid.iter().map(|&t| true_subdist(m, c, t)).collect())
        .collect();
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for est in &cfg.estimators {
        let fitted: Option<SubDistEstimate> = match est {
            MseEstimator::Naive => naive_fit.clone(),
            MseEstimator::ScaledNaive => Some(scaled_naive(&data, cfg.s0)?),
            MseEstimator::TruncatedNaive => Some(truncated_naive(&data)?),
            MseEstimator::Mle => {
                Some(
                    mle(&data, &cfg.mle_options).map_err(|e| Error::ReplicationFailed {
                        size: n,
                        rep,
                        source: alloc::boxed::Box::new(e),
                    })?,
                )
            }
            MseEstimator::Oracle => None,
        };
        let mut per_cause = Vec::with_capacity(k);
        for c in 1..=k {
            let row: Vec<f64> = cfg
                .grid
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let value = match &fitted {
                        Some(f) => f.component(c).eval(t),
                        None => truth[c - 1][i],
                    };
                    let err = value - truth[c - 1][i];
                    err * err
                })
                .collect();
            per_cause.push(row);
        }
        out.push(per_cause);
    }
    Ok(out)
}

/// Average per-replication squared errors (in replication order) into a
/// table and attach relative errors.
pub fn aggregate_table(
    m: &ModelSpec,
    cfg: &MseConfig,
    size: usize,
    reps: &[Vec<Vec<Vec<f64>>>],
) -> MseTable {
    let k = m.n_causes();
    let nt = cfg.grid.len();
    let ne = cfg.estimators.len();
    let mut mse = vec![vec![vec![0.0; nt]; k]; ne];
    for (e, est) in mse.iter_mut().enumerate() {
        for (c, row) in est.iter_mut().enumerate() {
            for (i, cell) in row.iter_mut().enumerate() {
                let mut acc = Kahan::new();
                for rep in reps {
                    acc.add(rep[e][c][i]);
                }
                *cell = acc.value() / reps.len() as f64;
            }
        }
    }
    let mle_idx = cfg.estimators.iter().position(|e| *e == MseEstimator::Mle);
    let relative = (0..ne)
        .map(|e| {
            (0..k)
                .map(|c| {
                    (0..nt)
                        .map(|i| match mle_idx {
                            Some(mi) if mse[e][c][i] > 0.0 => mse[mi][c][i] / mse[e][c][i],
                            _ => f64::NAN,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    MseTable {
        size,
        times: cfg.grid.clone(),
        estimators: cfg.estimators.clone(),
        mse,
        relative,
    }
}

/// Sequential Monte-Carlo study: identical datasets are fed to every
/// estimator, replication seeds derive from `(seed, size index, rep)`, and
/// aggregation order is fixed, so the result is a pure function of the
/// configuration.
pub fn mse_experiment(m: &ModelSpec, cfg: &MseConfig) -> Result<Vec<MseTable>> {
    cfg.validate()?;
    let mut tables = Vec::with_capacity(cfg.sizes.len());
    for (si, &n) in cfg.sizes.iter().enumerate() {
        let mut reps = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            reps.push(replication_squared_errors(m, cfg, si, rep)?);
        }
        tables.push(aggregate_table(m, cfg, n, &reps));
    }
    Ok(tables)
}

/// Localized finite-sample processes around `t0` on a user grid of local
/// times: the rescaled estimator, the empirical driving process, its
/// compensator integrated against the true observation distribution, and
/// the shifted version whose weighted combination touches the weighted
/// driving process at each component's last jump before the center.
#[derive(Debug, Clone)]
pub struct LocalizedProcesses {
    pub local_times: Vec<f64>,
    /// `n^{1/3} (F̂(t0 + n^{-1/3} t) - F(t0))` per cause.
    pub f_loc: Vec<Vec<f64>>,
    /// Empirical integral process per cause (right-continuous values).
    pub v_loc: Vec<Vec<f64>>,
    /// Left limits of `v_loc`.
    pub v_loc_left: Vec<Vec<f64>>,
    /// Compensated estimator integral per cause.
    pub h_bar: Vec<Vec<f64>>,
    /// `h_bar` plus the touch-normalizing shift.
    pub h_hat: Vec<Vec<f64>>,
    /// Shift constants per cause.
    pub shifts: Vec<f64>,
    /// Last jump location before zero, in local units, per cause.
    pub last_jump: Vec<f64>,
}

pub fn localized_processes(
    d: &Dataset,
    m: &ModelSpec,
    p: &LocalParams,
    fit: &SubDistEstimate,
    local_times: &[f64],
) -> Result<LocalizedProcesses> {
    let k = d.n_causes();
    if fit.n_causes() != k || p.n_causes() != k {
        return Err(Error::invalid(
            "dimension mismatch between data, fit and parameters",
        ));
    }
    let n = d.len() as f64;
    let n13 = math::cbrt(n);
    let scale = n13 * n13 / (p.obs_density * n); // n^{2/3}/g0 per unit of empirical mass
    let t0 = p.t0;

    // Sorted observations for windowed sums.
    let mut order: Vec<usize> = (0..d.len()).collect();
    let obs = d.observations();
    order.sort_unstable_by(|&a, &b| obs[a].time.total_cmp(&obs[b].time));
    let times: Vec<f64> = order.iter().map(|&i| obs[i].time).collect();
    let causes: Vec<usize> = order.iter().map(|&i| obs[i].cause).collect();

    // Empirical integral of (delta_k - F0k(t0)) over (t0, x] (x >= t0) or
    // its negative over (x, t0]; `closed_right` includes observations at x.
    let window_sum = |cause: usize, x: f64, closed_right: bool| -> f64 {
        let f0 = p.subdist[cause - 1];
        let (a, b) = if x >= t0 { (t0, x) } else { (x, t0) };
        let lo = times.partition_point(|&t| t <= a);
        let hi = if x >= t0 {
            if closed_right {
                times.partition_point(|&t| t <= b)
            } else {
                times.partition_point(|&t| t < b)
            }
        } else if closed_right {
            times.partition_point(|&t| t <= b)
        } else {
            times.partition_point(|&t| t < b)
        };
        let mut acc = Kahan::new();
        for &c in &causes[lo..hi] {
            let delta = if c == cause { 1.0 } else { 0.0 };
            acc.add(delta - f0);
        }
        let signed = if x >= t0 { acc.value() } else { -acc.value() };
        scale * signed
    };

    // Compensator: n^{2/3}/g0 * integral of (F̂_k(u) - F0k(t0)) dG(u) over
    // [t0, x], with reversed endpoints negating.
    let g_cdf = |x: f64| m.obs_cdf(x);
    let compensator = |cause: usize, x: f64| -> f64 {
        let f0 = p.subdist[cause - 1];
        let comp = fit.component(cause);
        let (a, b, sign) = if x >= t0 { (t0, x, 1.0) } else { (x, t0, -1.0) };
        // Piecewise-constant integrand: split [a, b] at the component knots.
        let mut acc = Kahan::new();
        let mut lo = a;
        let knots = comp.knots();
        let start = knots.partition_point(|&t| t <= a);
        for &kt in &knots[start..] {
            if kt >= b {
                break;
            }
            acc.add((comp.eval(lo) - f0) * (g_cdf(kt) - g_cdf(lo)));
            lo = kt;
        }
        acc.add((comp.eval(lo) - f0) * (g_cdf(b) - g_cdf(lo)));
        sign * (n13 * n13 / p.obs_density) * acc.value()
    };

    // Last jump of each fitted component strictly before t0, in local units.
    let mut last_jump = Vec::with_capacity(k);
    for cause in 1..=k {
        let tau = fit
            .component(cause)
            .jumps(1e-8)
            .into_iter()
            .map(|(t, _)| t)
            .filter(|&t| t < t0)
            .fold(f64::NEG_INFINITY, f64::max);
        if !tau.is_finite() {
            return Err(Error::NoJumpBeforeCenter { cause });
        }
        last_jump.push(n13 * (tau - t0));
    }

    // Shifts from the touch condition at each component's own last jump.
    let a_last = p.a(k + 1);
    let mut shifts = Vec::with_capacity(k);
    for cause in 1..=k {
        let tau_local = last_jump[cause - 1];
        let tau_time = t0 + tau_local / n13;
        let a_c = p.a(cause);
        let v_own = window_sum(cause, tau_time, false);
        let v_plus: f64 = (1..=k).map(|c| window_sum(c, tau_time, false)).sum();
        let h_own = compensator(cause, tau_time);
        let h_plus: f64 = (1..=k).map(|c| compensator(c, tau_time)).sum();
        shifts.push(a_c * v_own + a_last * v_plus - a_c * h_own - a_last * h_plus);
    }
    // Solve the linear shift system: h_hat_k = h_bar_k + c_k/a_k - F0k * sum_j c_j/a_j.
    let shift_total: f64 = (1..=k).map(|c| shifts[c - 1] / p.a(c)).sum();

    let mut f_loc = Vec::with_capacity(k);
    let mut v_loc = Vec::with_capacity(k);
    let mut v_loc_left = Vec::with_capacity(k);
    let mut h_bar = Vec::with_capacity(k);
    let mut h_hat = Vec::with_capacity(k);
    for cause in 1..=k {
        let comp = fit.component(cause);
        let f0 = p.subdist[cause - 1];
        let mut fl = Vec::with_capacity(local_times.len());
        let mut vl = Vec::with_capacity(local_times.len());
        let mut vll = Vec::with_capacity(local_times.len());
        let mut hb = Vec::with_capacity(local_times.len());
        let mut hh = Vec::with_capacity(local_times.len());
        let offset = shifts[cause - 1] / p.a(cause) - f0 * shift_total;
        for &t in local_times {
            let x = t0 + t / n13;
            fl.push(n13 * (comp.eval(x) - f0));
            vl.push(window_sum(cause, x, true));
            vll.push(window_sum(cause, x, false));
            let hbv = compensator(cause, x);
            hb.push(hbv);
            hh.push(hbv + offset);
        }
        f_loc.push(fl);
        v_loc.push(vl);
        v_loc_left.push(vll);
        h_bar.push(hb);
        h_hat.push(hh);
    }

    Ok(LocalizedProcesses {
        local_times: local_times.to_vec(),
        f_loc,
        v_loc,
        v_loc_left,
        h_bar,
        h_hat,
        shifts,
        last_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorKind;
    use crate::stepfn::StepFunction;

    #[test]
    fn true_subdist_benchmark_values() {
        let m = ModelSpec::two_risk_exponential();
        assert!((true_subdist(&m, 1, 1.0) - 0.21).abs() < 0.005);
        assert!((true_subdist(&m, 2, 1.0) - 0.58).abs() < 0.005);
        assert_eq!(true_subdist(&m, 1, 0.0), 0.0);
        assert_eq!(true_subdist(&m, 2, -1.0), 0.0);
    }

    #[test]
    fn local_params_benchmark_values() {
        let m = ModelSpec::two_risk_exponential();
        let p = local_params_at(&m, 1.0).unwrap();
        assert!((p.density[0] - 0.12).abs() < 0.005);
        assert!((p.density[1] - 0.18).abs() < 0.005);
        assert!((p.obs_density - 0.37).abs() < 0.005);
        // Exact closed forms.
        assert!((p.density[0] - (-1.0f64).exp() / 3.0).abs() < 1e-15);
        assert!((p.sum_subdist() - 0.7872).abs() < 5e-4);
        assert!((p.a(3) - 4.699).abs() < 2e-3);
    }

    #[test]
    fn gen_data_is_deterministic_and_matches_censoring_rate() {
        let m = ModelSpec::two_risk_exponential();
        let a = gen_data(&m, 200, 9).unwrap();
        let b = gen_data(&m, 200, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_data(&m, 200, 10).unwrap();
        assert_ne!(a, c);

        let big = gen_data(&m, 100_000, 123).unwrap();
        let frac =
            big.observations().iter().filter(|o| o.cause == 3).count() as f64 / big.len() as f64;
        // P(not failed by T) = 1 - (1/3)(1/2) - (2/3)(2/3) = 7/18.
        let p = 7.0 / 18.0;
        let se = (p * (1.0 - p) / big.len() as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * se, "frac {frac}");
    }

    #[test]
    fn gen_data_single_cause_race_is_even() {
        let m = ModelSpec::new(1.0, vec![1.0], vec![1.0]).unwrap();
        let data = gen_data(&m, 100_000, 5).unwrap();
        let frac =
            data.observations().iter().filter(|o| o.cause == 1).count() as f64 / data.len() as f64;
        let se = (0.25f64 / data.len() as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn mse_oracle_estimator_has_zero_error_and_unit_self_relative() {
        let m = ModelSpec::two_risk_exponential();
        let cfg = MseConfig {
            sizes: vec![40],
            reps: 3,
            grid: vec![0.5, 1.0, 2.0],
            estimators: vec![MseEstimator::Oracle, MseEstimator::Mle],
            seed: 31,
            s0: 3.0,
            mle_options: MleOptions::default(),
        };
        let tables = mse_experiment(&m, &cfg).unwrap();
        let t = &tables[0];
        for c in 0..2 {
            for i in 0..t.times.len() {
                assert_eq!(t.mse[0][c][i], 0.0);
                if t.mse[1][c][i] > 0.0 {
                    assert_eq!(t.relative[1][c][i], 1.0);
                }
            }
        }
    }

    #[test]
    fn mse_experiment_is_deterministic() {
        let m = ModelSpec::two_risk_exponential();
        let cfg = MseConfig {
            sizes: vec![30],
            reps: 4,
            grid: vec![0.5, 1.5],
            estimators: vec![MseEstimator::Naive, MseEstimator::Mle],
            seed: 77,
            s0: 3.0,
            mle_options: MleOptions::default(),
        };
        let a = mse_experiment(&m, &cfg).unwrap();
        let b = mse_experiment(&m, &cfg).unwrap();
        assert_eq!(a[0].mse, b[0].mse);
        assert_eq!(a[0].relative, b[0].relative);
    }

    #[test]
    fn mse_config_validation() {
        let m = ModelSpec::two_risk_exponential();
        let mut cfg = MseConfig::desk_default(1);
        cfg.reps = 1;
        assert!(mse_experiment(&m, &cfg).is_err());
        let mut cfg = MseConfig::desk_default(1);
        cfg.estimators.clear();
        assert!(mse_experiment(&m, &cfg).is_err());
    }

    #[test]
    fn mse_replication_failure_aborts_with_the_index() {
        let m = ModelSpec::two_risk_exponential();
        let cfg = MseConfig {
            sizes: vec![40],
            reps: 3,
            grid: vec![1.0],
            estimators: vec![MseEstimator::Mle],
            seed: 5,
            s0: 3.0,
            mle_options: MleOptions {
                tol: 0.0,
                max_iter: 1,
            },
        };
        match mse_experiment(&m, &cfg) {
            Err(Error::ReplicationFailed { size, rep, .. }) => {
                assert_eq!(size, 40);
                assert_eq!(rep, 0);
            }
            other => panic!("expected replication failure, got {other:?}"),
        }
    }

    #[test]
    fn localized_constant_fit_is_zero_and_empty_window_vanishes() {
        let m = ModelSpec::two_risk_exponential();
        let p = local_params_at(&m, 1.0).unwrap();
        let d = gen_data(&m, 50, 3).unwrap();
        // Test hook: a fit frozen at the true local values, with one jump
        // before t0 so the shifts are defined.
        let components: Vec<StepFunction> = (1..=2)
            .map(|c| StepFunction::new(vec![0.01], vec![p.subdist[c - 1]]).unwrap())
            .collect();
        let fit = SubDistEstimate::from_components(EstimatorKind::Mle, components).unwrap();
        let grid = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let loc = localized_processes(&d, &m, &p, &fit, &grid).unwrap();
        for c in 0..2 {
            for v in &loc.f_loc[c] {
                assert!(v.abs() < 1e-9, "f_loc {v}");
            }
            // Empty integration window at local time zero.
            assert_eq!(loc.v_loc[c][2], 0.0);
        }
    }

    #[test]
    fn localized_requires_a_jump_before_center() {
        let m = ModelSpec::two_risk_exponential();
        let p = local_params_at(&m, 1.0).unwrap();
        let d = gen_data(&m, 50, 3).unwrap();
        let components: Vec<StepFunction> = (1..=2)
            .map(|c| StepFunction::new(vec![2.0], vec![p.subdist[c - 1]]).unwrap())
            .collect();
        let fit = SubDistEstimate::from_components(EstimatorKind::Mle, components).unwrap();
        let err = localized_processes(&d, &m, &p, &fit, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NoJumpBeforeCenter { .. }));
    }

    #[test]
    fn localized_recentering_identity() {
        // The empirical driving process decomposes as the centered process
        // plus the estimator-free mass term: sum over the window of delta_k
        // equals the centered sum plus F0k times the window count.
        let m = ModelSpec::two_risk_exponential();
        let p = local_params_at(&m, 1.0).unwrap();
        let d = gen_data(&m, 40, 8).unwrap();
        let n13 = (d.len() as f64).cbrt();
        let x = 1.0 + 0.8 / n13;
        let scale = n13 * n13 / (p.obs_density * d.len() as f64);
        let raw: f64 = d
            .observations()
            .iter()
            .filter(|o| o.time > 1.0 && o.time <= x && o.cause == 1)
            .count() as f64;
        let count: f64 = d
            .observations()
            .iter()
            .filter(|o| o.time > 1.0 && o.time <= x)
            .count() as f64;
        let centered = scale * (raw - p.subdist[0] * count);
        let fitc: Vec<StepFunction> = (1..=2)
            .map(|c| StepFunction::new(vec![0.01], vec![p.subdist[c - 1]]).unwrap())
            .collect();
        let fit = SubDistEstimate::from_components(EstimatorKind::Mle, fitc).unwrap();
        let loc = localized_processes(&d, &m, &p, &fit, &[0.8]).unwrap();
        assert!((loc.v_loc[0][0] - centered).abs() < 1e-12);
    }
}
