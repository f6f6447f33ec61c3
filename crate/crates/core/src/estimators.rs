//! Finite-sample estimators for current status data with competing risks:
//! the per-cause naive estimator, its scaled and truncated variants, and the
//! joint maximum likelihood estimator with a directional-derivative
//! optimality certificate.
//!
//! Data consist of `n` observations `(t, cause)` where `cause` ranges over
//! `1..=K+1`; cause `K+1` records a unit that had not failed by its
//! observation time. Every estimator returns one nondecreasing step function
//! per failure cause.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Kahan};
use crate::stepfn::{pava, StepFunction};

/// Feasibility slack for the sum constraint and monotonicity checks.
pub const FEAS_TOL: f64 = 1e-12;
/// A level increase below this is not treated as a jump by certificates.
const JUMP_TOL: f64 = 1e-8;
/// The sum constraint counts as active when the total mass reaches
/// `1 - BOUNDARY_TOL`.
const BOUNDARY_TOL: f64 = 1e-9;
/// Initialization floor keeping the starting log-likelihood finite.
const INTERIOR_EPS: f64 = 1e-6;
/// Clipping bound used inside line searches only.
const VALUE_EPS: f64 = 1e-12;

/// One observation: the inspection time and the recorded cause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub cause: usize,
}

/// Current status competing-risks data with `K` failure causes.
///
/// Cause `K + 1` encodes "not failed by the observation time".
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_causes: usize,
    obs: Vec<Observation>,
}

impl Dataset {
    pub fn new(n_causes: usize, obs: Vec<Observation>) -> Result<Self> {
        if n_causes == 0 {
            return Err(Error::invalid("need at least one failure cause"));
        }
        if obs.is_empty() {
            return Err(Error::invalid(
                "dataset must contain at least one observation",
            ));
        }
        for o in &obs {
            if !o.time.is_finite() {
                return Err(Error::invalid("observation times must be finite"));
            }
            if o.cause == 0 || o.cause > n_causes + 1 {
                return Err(Error::invalid(format!(
                    "cause {} outside 1..={}",
                    o.cause,
                    n_causes + 1
                )));
            }
        }
        Ok(Self { n_causes, obs })
    }

    pub fn from_pairs(n_causes: usize, pairs: &[(f64, usize)]) -> Result<Self> {
        Self::new(
            n_causes,
            pairs
                .iter()
                .map(|&(time, cause)| Observation { time, cause })
                .collect(),
        )
    }

    pub fn n_causes(&self) -> usize {
        self.n_causes
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Largest observation time.
    pub fn max_time(&self) -> f64 {
        self.obs
            .iter()
            .map(|o| o.time)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn aggregate(&self) -> Aggregated {
        let mut order: Vec<usize> = (0..self.obs.len()).collect();
        order.sort_unstable_by(|&a, &b| self.obs[a].time.total_cmp(&self.obs[b].time));
        let mut times = Vec::new();
        let mut total = Vec::new();
        let mut cause_count = vec![Vec::new(); self.n_causes + 1];
        for &i in &order {
            let o = &self.obs[i];
            if times.last().is_some_and(|&t: &f64| t == o.time) {
                let last = times.len() - 1;
                total[last] += 1.0;
                cause_count[o.cause - 1][last] += 1.0;
            } else {
                times.push(o.time);
                total.push(1.0);
                for c in cause_count.iter_mut() {
                    c.push(0.0);
                }
                let last = times.len() - 1;
                cause_count[o.cause - 1][last] += 1.0;
            }
        }
        Aggregated {
            times,
            total,
            cause_count,
            n: self.obs.len() as f64,
        }
    }
}

/// Tie-aggregated view of a dataset: unique sorted times with per-cause
/// multiplicities.
pub(crate) struct Aggregated {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    /// `cause_count[c - 1][i]` observations with cause `c` at `times[i]`.
    pub cause_count: Vec<Vec<f64>>,
    pub n: f64,
}

impl Aggregated {
    fn len(&self) -> usize {
        self.times.len()
    }

    /// Count of cause-`K+1` observations at time index `i`.
    fn censored(&self, i: usize) -> f64 {
        self.cause_count[self.cause_count.len() - 1][i]
    }
}

/// Which estimator produced a [`SubDistEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Naive,
    ScaledNaive,
    TruncatedNaive,
    Mle,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::ScaledNaive => "scaled-naive",
            EstimatorKind::TruncatedNaive => "truncated-naive",
            EstimatorKind::Mle => "mle",
        }
    }
}

/// A fitted tuple of sub-distribution functions, one per failure cause,
/// together with its log-likelihood and optimality-certificate residual.
///
/// `kkt_residual` is `+inf` when the joint certificate is undefined (the
/// estimate is infeasible for the joint likelihood, which can happen for the
/// plain naive estimator when its components sum above one).
#[derive(Debug, Clone)]
pub struct SubDistEstimate {
    pub kind: EstimatorKind,
    components: Vec<StepFunction>,
    pub loglik: f64,
    pub kkt_residual: f64,
    /// The sum constraint is active at the optimum; equality conditions are
    /// one-sided there (see [`kkt_residual`]).
    pub boundary_active: bool,
    /// Solver sweeps taken (zero for closed-form estimators).
    pub iterations: usize,
}

impl SubDistEstimate {
    /// Wrap raw components under a kind tag. The log-likelihood and
    /// certificate fields are left unset (`NaN`/`inf`); evaluate them against
    /// a dataset with [`loglik`] and [`kkt_residual`].
    pub fn from_components(kind: EstimatorKind, components: Vec<StepFunction>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("estimate needs at least one component"));
        }
        Ok(SubDistEstimate {
            kind,
            components,
            loglik: f64::NAN,
            kkt_residual: f64::INFINITY,
            boundary_active: false,
            iterations: 0,
        })
    }

    /// Component for `cause` (1-based).
    pub fn component(&self, cause: usize) -> &StepFunction {
        &self.components[cause - 1]
    }

    pub fn components(&self) -> &[StepFunction] {
        &self.components
    }

    pub fn n_causes(&self) -> usize {
        self.components.len()
    }

    /// Sum of all components at `t`.
    pub fn sum_at(&self, t: f64) -> f64 {
        self.components.iter().map(|f| f.eval(t)).sum()
    }

    /// Sum of all components as `t -> inf`.
    pub fn sum_final(&self) -> f64 {
        self.components.iter().map(|f| f.final_value()).sum()
    }

    /// Assemble an estimate and fill in the log-likelihood and certificate.
    fn assemble(d: &Dataset, kind: EstimatorKind, components: Vec<StepFunction>) -> Self {
        let mut est = SubDistEstimate {
            kind,
            components,
            loglik: f64::NEG_INFINITY,
            kkt_residual: f64::INFINITY,
            boundary_active: false,
            iterations: 0,
        };
        est.loglik = loglik(d, &est);
        if let Ok(report) = kkt_residual(d, &est) {
            est.kkt_residual = report.residual;
            est.boundary_active = report.boundary_active;
        }
        est
    }
}

/// Joint average log-likelihood of the estimate on the data.
///
/// Returns `-inf` (not an error) when any observed term has a nonpositive
/// argument.
pub fn loglik(d: &Dataset, f: &SubDistEstimate) -> f64 {
    let k = d.n_causes();
    let mut acc = Kahan::new();
    for o in d.observations() {
        if o.cause <= k {
            let v = f.component(o.cause).eval(o.time);
            if v <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc.add(math::ln(v));
        } else {
            let rest = 1.0 - f.sum_at(o.time);
            if rest <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc.add(math::ln(rest));
        }
    }
    acc.value() / d.len() as f64
}

/// Average log-likelihood of a single component on the reduced data
/// `(t, 1{cause == k})`.
pub fn loglik_marginal(d: &Dataset, cause: usize, fk: &StepFunction) -> f64 {
    let mut acc = Kahan::new();
    for o in d.observations() {
        let v = fk.eval(o.time);
        if o.cause == cause {
            if v <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc.add(math::ln(v));
        } else {
            if v >= 1.0 {
                return f64::NEG_INFINITY;
            }
            acc.add(math::ln_1p(-v));
        }
    }
    acc.value() / d.len() as f64
}

/// Times where the maximum likelihood estimator of component `cause` is
/// uniquely determined: observation times carrying a cause-`k` or censored
/// indicator, plus the largest observation time.
pub fn unique_support(d: &Dataset, cause: usize) -> Vec<f64> {
    let agg = d.aggregate();
    support_indices(&agg, cause)
        .into_iter()
        .map(|i| agg.times[i])
        .collect()
}

fn support_indices(agg: &Aggregated, cause: usize) -> Vec<usize> {
    let m = agg.len();
    let mut idx: Vec<usize> = (0..m)
        .filter(|&i| agg.cause_count[cause - 1][i] + agg.censored(i) > 0.0)
        .collect();
    if idx.last() != Some(&(m - 1)) {
        idx.push(m - 1);
    }
    idx
}

/// Per-cause isotonic fit of the reduced data `(t, 1{cause == k})`: the
/// maximizer of each marginal likelihood separately. The component sum may
/// exceed one.
pub fn naive(d: &Dataset) -> Result<SubDistEstimate> {
    let agg = d.aggregate();
    let components = naive_components(d, &agg)?;
    Ok(SubDistEstimate::assemble(
        d,
        EstimatorKind::Naive,
        components,
    ))
}

fn naive_components(d: &Dataset, agg: &Aggregated) -> Result<Vec<StepFunction>> {
    let mut components = Vec::with_capacity(d.n_causes());
    for k in 1..=d.n_causes() {
        let y: Vec<f64> = (0..agg.len())
            .map(|i| agg.cause_count[k - 1][i] / agg.total[i])
            .collect();
        let fit = pava(&y, &agg.total)?;
        components.push(StepFunction::new(agg.times.clone(), fit)?);
    }
    Ok(components)
}

/// Naive estimator rescaled so the component sum is at most one up to `s0`.
///
/// When the naive sum at `s0` does not exceed one the estimate is returned
/// unchanged (apart from its kind tag).
pub fn scaled_naive(d: &Dataset, s0: f64) -> Result<SubDistEstimate> {
    if !s0.is_finite() {
        return Err(Error::invalid("s0 must be finite"));
    }
    let base = naive(d)?;
    let total = base.sum_at(s0);
    let components = if total > 1.0 {
        base.components.iter().map(|f| f.divide_by(total)).collect()
    } else {
        base.components.clone()
    };
    Ok(SubDistEstimate::assemble(
        d,
        EstimatorKind::ScaledNaive,
        components,
    ))
}

/// Naive estimator truncated at the first time its sum exceeds one.
///
/// Beyond that time each component is frozen at its value just before, plus
/// a share of the remaining mass proportional to its jump there, so the sum
/// equals one from that point on.
pub fn truncated_naive(d: &Dataset) -> Result<SubDistEstimate> {
    let base = naive(d)?;
    if base.sum_final() <= 1.0 {
        return Ok(SubDistEstimate::assemble(
            d,
            EstimatorKind::TruncatedNaive,
            base.components.clone(),
        ));
    }
    let knots = base.components[0].knots().to_vec();
    // First knot where the running sum exceeds one.
    let cut = (0..knots.len())
        .find(|&i| base.components.iter().map(|f| f.levels()[i]).sum::<f64>() > 1.0)
        .expect("sum exceeds one somewhere");
    let before: Vec<f64> = base
        .components
        .iter()
        .map(|f| if cut == 0 { 0.0 } else { f.levels()[cut - 1] })
        .collect();
    let sum_before: f64 = before.iter().sum();
    let jump_sum: f64 = base
        .components
        .iter()
        .zip(&before)
        .map(|(f, b)| f.levels()[cut] - b)
        .sum();
    let components = base
        .components
        .iter()
        .zip(&before)
        .map(|(f, &b)| {
            let share = (f.levels()[cut] - b) / jump_sum * (1.0 - sum_before);
            let frozen = b + share;
            let levels: Vec<f64> = f
                .levels()
                .iter()
                .enumerate()
                .map(|(i, &l)| if i < cut { l } else { frozen })
                .collect();
            StepFunction::new(knots.clone(), levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubDistEstimate::assemble(
        d,
        EstimatorKind::TruncatedNaive,
        components,
    ))
}

/// Options for the maximum likelihood solver.
#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    /// Certificate residual required to declare convergence.
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// Optimality report for an estimate.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// Largest directional derivative over the feasible perturbation
    /// directions (zero at the maximizer).
    pub residual: f64,
    /// The sum constraint is active at the top of the support, making ascent
    /// directions one-sided.
    pub boundary_active: bool,
    /// Number of support points at which the component sum is within
    /// tolerance of one.
    pub boundary_points: usize,
}

/// Maximum likelihood estimator of the sub-distribution functions.
///
/// Components are piecewise constant, right continuous and jump only on
/// their unique support. Convergence is certified by [`kkt_residual`]; an
/// exhausted iteration budget is an error carrying the best iterate.
pub fn mle(d: &Dataset, opts: &MleOptions) -> Result<SubDistEstimate> {
    let agg = d.aggregate();
    if d.n_causes() == 1 {
        // With a single cause the joint and marginal likelihoods coincide,
        // so the isotonic fit is the exact maximizer.
        let components = naive_components(d, &agg)?;
        let mut est = SubDistEstimate::assemble(d, EstimatorKind::Mle, components);
        est.iterations = 1;
        if est.kkt_residual <= opts.tol {
            return Ok(est);
        }
        // Pathological rounding: fall through to the generic solver.
    }
    Solver::new(d, &agg).run(d, opts)
}

/// Directional-derivative certificate for the joint likelihood.
///
/// For each cause `k` and support time `t`, let `D_k(t)` be the derivative
/// of the average log-likelihood along the perturbation that raises
/// component `k` by a constant on `[t, inf)`. At the maximizer, every
/// feasible ascent direction has a nonpositive derivative:
///
/// - raising a tail is feasible only while the component sum stays below
///   one everywhere to the right, so when the final sum is below one the
///   condition is `D_k(t) <= 0` with equality at jump points of component k;
/// - when the sum constraint is active, single raises are infeasible and
///   the binding directions are jump-point lowerings (`D_k(t) >= 0`) and
///   mass exchanges between a raised tail and a lowered jump tail, feasible
///   when the raise region stays strictly below the constraint.
///
/// The residual is the largest violation over all these directions; it is
/// zero exactly at the maximizer restricted to the unique support.
pub fn kkt_residual(d: &Dataset, f: &SubDistEstimate) -> Result<KktReport> {
    if f.n_causes() != d.n_causes() {
        return Err(Error::invalid(
            "estimate and dataset disagree on cause count",
        ));
    }
    let agg = d.aggregate();
    let k = d.n_causes();
    let mut values = Vec::with_capacity(k);
    let mut jumps = Vec::with_capacity(k);
    let mut supports = Vec::with_capacity(k);
    for cause in 1..=k {
        let comp = f.component(cause);
        if !comp.is_nondecreasing(FEAS_TOL) {
            return Err(Error::Infeasible(format!("component {cause} not monotone")));
        }
        if comp.left_value() < -FEAS_TOL || comp.final_value() > 1.0 + FEAS_TOL {
            return Err(Error::Infeasible(format!(
                "component {cause} outside [0, 1]"
            )));
        }
        let idx = support_indices(&agg, cause);
        let vals: Vec<f64> = idx.iter().map(|&i| comp.eval(agg.times[i])).collect();
        let jmp: Vec<bool> = idx
            .iter()
            .map(|&i| {
                let t = agg.times[i];
                comp.eval(t) - comp.left_limit(t) > JUMP_TOL
            })
            .collect();
        supports.push(idx);
        values.push(vals);
        jumps.push(jmp);
    }
    let f_at: Vec<Vec<f64>> = (1..=k)
        .map(|cause| {
            let comp = f.component(cause);
            agg.times.iter().map(|&t| comp.eval(t)).collect()
        })
        .collect();
    certificate(&agg, &f_at, &supports, &values, &jumps).map(|c| c.report)
}

/// Fenchel certificate for one component of the naive estimator: the same
/// construction applied to the reduced data `(t, 1{cause == k})`.
pub fn marginal_kkt_residual(d: &Dataset, cause: usize, fk: &StepFunction) -> Result<f64> {
    if !fk.is_nondecreasing(FEAS_TOL) {
        return Err(Error::Infeasible(format!("component {cause} not monotone")));
    }
    if fk.left_value() < -FEAS_TOL || fk.final_value() > 1.0 + FEAS_TOL {
        return Err(Error::Infeasible(format!(
            "component {cause} outside [0, 1]"
        )));
    }
    let agg = d.aggregate();
    let m = agg.len();
    let n = agg.n;
    // Reduced problem: successes are cause-k observations, failures all
    // others; support is every observation time.
    let mut terms = Vec::with_capacity(m);
    for i in 0..m {
        let hits = agg.cause_count[cause - 1][i];
        let misses = agg.total[i] - hits;
        let v = fk.eval(agg.times[i]);
        let mut t = 0.0;
        if hits > 0.0 {
            if v <= 0.0 {
                return Err(Error::Infeasible("zero mass at an observed failure".into()));
            }
            t += hits / v;
        }
        if misses > 0.0 {
            if v >= 1.0 {
                return Err(Error::Infeasible(
                    "full mass at an observed survivor".into(),
                ));
            }
            t -= misses / (1.0 - v);
        }
        terms.push(t);
    }
    let mut residual = 0.0f64;
    let mut acc = Kahan::new();
    let mut suffix = vec![0.0; m];
    for i in (0..m).rev() {
        acc.add(terms[i]);
        suffix[i] = acc.value() / n;
    }
    // The reduced problem is unconstrained above except for F <= 1; a value
    // of exactly 1 at the top makes the raise direction infeasible there.
    let top_free = fk.eval(agg.times[m - 1]) < 1.0 - BOUNDARY_TOL;
    for (&d_i, &t) in suffix.iter().zip(&agg.times) {
        let jump = fk.eval(t) - fk.left_limit(t) > JUMP_TOL;
        if top_free {
            residual = residual.max(d_i);
        }
        if jump {
            residual = residual.max(-d_i);
            if top_free {
                residual = residual.max(d_i);
            }
        }
    }
    if !top_free {
        // Exchange between a raised tail and a lowered jump tail.
        let mut best_after = f64::NEG_INFINITY;
        let mut best_from: Vec<f64> = vec![f64::NEG_INFINITY; m];
        for i in (0..m).rev() {
            best_after = best_after.max(suffix[i]);
            best_from[i] = best_after;
        }
        let s_star = (0..m)
            .find(|&i| fk.eval(agg.times[i]) >= 1.0 - BOUNDARY_TOL)
            .unwrap_or(m - 1);
        let global_best = best_from[0];
        for i in 0..m {
            let t = agg.times[i];
            if fk.eval(t) - fk.left_limit(t) > JUMP_TOL {
                let allowed = if i <= s_star {
                    global_best
                } else {
                    best_from[i]
                };
                residual = residual.max(allowed - suffix[i]);
                residual = residual.max(-suffix[i]);
            }
        }
    }
    Ok(residual.max(0.0))
}

struct Certificate {
    report: KktReport,
    /// `d[k][a]`: directional derivative for raising component k from its
    /// a-th support point.
    d: Vec<Vec<f64>>,
}

/// Shared certificate evaluation over aggregated data.
///
/// `f_at[k][i]` are component values at every aggregated time, `values[k]`
/// and `jumps[k]` the component values and jump flags at its support.
fn certificate(
    agg: &Aggregated,
    f_at: &[Vec<f64>],
    supports: &[Vec<usize>],
    values: &[Vec<f64>],
    jumps: &[Vec<bool>],
) -> Result<Certificate> {
    let k = f_at.len();
    let m = agg.len();
    let n = agg.n;
    let mut sum_at = vec![0.0; m];
    for fk in f_at {
        for (s, v) in sum_at.iter_mut().zip(fk) {
            *s += v;
        }
    }
    for (i, &s) in sum_at.iter().enumerate() {
        if s > 1.0 + FEAS_TOL {
            return Err(Error::Infeasible(format!(
                "component sum {} exceeds 1 at t = {}",
                s, agg.times[i]
            )));
        }
    }

    // Directional derivatives D_k at support points via suffix sums.
    let mut d_arr: Vec<Vec<f64>> = Vec::with_capacity(k);
    for cause in 0..k {
        let mut suffix = vec![0.0; m];
        let mut acc = Kahan::new();
        for i in (0..m).rev() {
            let hits = agg.cause_count[cause][i];
            if hits > 0.0 {
                if f_at[cause][i] <= 0.0 {
                    return Err(Error::Infeasible("zero mass at an observed failure".into()));
                }
                acc.add(hits / f_at[cause][i]);
            }
            let cens = agg.censored(i);
            if cens > 0.0 {
                let rest = 1.0 - sum_at[i];
                if rest <= 0.0 {
                    return Err(Error::Infeasible(
                        "no surviving mass at a censored observation".into(),
                    ));
                }
                acc.add(-cens / rest);
            }
            suffix[i] = acc.value() / n;
        }
        d_arr.push(supports[cause].iter().map(|&i| suffix[i]).collect());
    }

    let sum_final = sum_at[m - 1];
    let boundary = sum_final >= 1.0 - BOUNDARY_TOL;
    let boundary_points = supports
        .iter()
        .flatten()
        .filter(|&&i| sum_at[i] >= 1.0 - BOUNDARY_TOL)
        .count();

    let mut residual = 0.0f64;
    for cause in 0..k {
        for (a, &di) in d_arr[cause].iter().enumerate() {
            let jump = jumps[cause][a] && values[cause][a] > JUMP_TOL;
            if !boundary {
                residual = residual.max(di);
                if jump {
                    residual = residual.max(-di);
                }
            } else if jump {
                residual = residual.max(-di);
            }
        }
    }

    if boundary {
        // Exchange directions: raise some tail, lower a jump tail. The raise
        // may sit anywhere at or after the lowered point; raising strictly
        // before it is feasible only when the lowered point is not beyond
        // the first time the sum constraint binds.
        let s_star = (0..m)
            .find(|&i| sum_at[i] >= 1.0 - BOUNDARY_TOL)
            .unwrap_or(m - 1);
        let mut best_from = vec![f64::NEG_INFINITY; m + 1];
        for cause in 0..k {
            for (a, &i) in supports[cause].iter().enumerate() {
                if d_arr[cause][a] > best_from[i] {
                    best_from[i] = d_arr[cause][a];
                }
            }
        }
        for i in (0..m).rev() {
            if best_from[i + 1] > best_from[i] {
                best_from[i] = best_from[i + 1];
            }
        }
        let global_best = best_from[0];
        for cause in 0..k {
            for (b, &i) in supports[cause].iter().enumerate() {
                if jumps[cause][b] && values[cause][b] > JUMP_TOL {
                    let allowed = if i <= s_star {
                        global_best
                    } else {
                        best_from[i]
                    };
                    residual = residual.max(allowed - d_arr[cause][b]);
                }
            }
        }
    }

    Ok(Certificate {
        report: KktReport {
            residual: residual.max(0.0),
            boundary_active: boundary,
            boundary_points,
        },
        d: d_arr,
    })
}

/// Block coordinate ascent solver for the joint likelihood.
///
/// Each sweep solves the one-component subproblem by damped Newton steps
/// projected with weighted isotonic regression (an iterative convex minorant
/// step) under the cap imposed by the other components, with a backtracking
/// line search guaranteeing ascent. When the sum constraint binds, mass
/// exchanges between components along the constraint face finish the job.
struct Solver {
    k: usize,
    supports: Vec<Vec<usize>>,
    /// `slot[k][i]`: support slot of component k active at time index i.
    slot: Vec<Vec<Option<usize>>>,
    /// Cause-k multiplicity at each of its support slots.
    hits: Vec<Vec<f64>>,
    /// Censored time indices grouped by the slot of component k they see.
    cens_slots: Vec<Vec<Vec<usize>>>,
    /// The appended last-time slot carries no likelihood terms.
    pinned_tail: Vec<bool>,
    v: Vec<Vec<f64>>,
}

impl Solver {
    fn new(d: &Dataset, agg: &Aggregated) -> Self {
        let k = d.n_causes();
        let m = agg.len();
        let mut supports = Vec::with_capacity(k);
        let mut slot = Vec::with_capacity(k);
        let mut hits = Vec::with_capacity(k);
        let mut cens_slots = Vec::with_capacity(k);
        let mut pinned_tail = Vec::with_capacity(k);
        for cause in 1..=k {
            let idx = support_indices(agg, cause);
            let sl: Vec<Option<usize>> = (0..m)
                .map(|i| idx.partition_point(|&s| s <= i).checked_sub(1))
                .collect();
            let h: Vec<f64> = idx.iter().map(|&i| agg.cause_count[cause - 1][i]).collect();
            let mut cs = vec![Vec::new(); idx.len()];
            for (i, slot) in sl.iter().enumerate() {
                if agg.censored(i) > 0.0 {
                    if let Some(a) = slot {
                        cs[*a].push(i);
                    }
                }
            }
            let pinned = {
                let last = idx.len() - 1;
                h[last] == 0.0 && cs[last].is_empty()
            };
            supports.push(idx);
            slot.push(sl);
            hits.push(h);
            cens_slots.push(cs);
            pinned_tail.push(pinned);
        }
        let v = supports.iter().map(|s| vec![0.0; s.len()]).collect();
        Solver {
            k,
            supports,
            slot,
            hits,
            cens_slots,
            pinned_tail,
            v,
        }
    }

    fn f_at(&self, cause: usize, i: usize) -> f64 {
        match self.slot[cause][i] {
            Some(a) => self.v[cause][a],
            None => 0.0,
        }
    }

    fn sum_at(&self, i: usize) -> f64 {
        (0..self.k).map(|c| self.f_at(c, i)).sum()
    }

    /// Interior start: the naive fit floored at a small positive value and
    /// rescaled so the component sum stays strictly below one.
    fn initialize(&mut self, agg: &Aggregated, naive_fit: &[StepFunction]) {
        for (cause, start) in naive_fit.iter().enumerate() {
            for (a, &i) in self.supports[cause].iter().enumerate() {
                let raw = start.eval(agg.times[i]);
                self.v[cause][a] = raw.clamp(INTERIOR_EPS, 1.0 - INTERIOR_EPS);
            }
        }
        let mut worst = 0.0f64;
        for i in 0..agg.len() {
            worst = worst.max(self.sum_at(i));
        }
        if worst > 1.0 - INTERIOR_EPS {
            let scale = (1.0 - INTERIOR_EPS) / worst;
            for vv in self.v.iter_mut() {
                for x in vv.iter_mut() {
                    *x *= scale;
                }
            }
        }
    }

    /// Partial log-likelihood terms touching component `cause`, evaluated at
    /// candidate values `vv` with the other components fixed.
    fn block_objective(&self, agg: &Aggregated, cause: usize, other: &[f64], vv: &[f64]) -> f64 {
        let mut acc = Kahan::new();
        for (a, &val) in vv.iter().enumerate() {
            if self.hits[cause][a] > 0.0 {
                if val <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc.add(self.hits[cause][a] * math::ln(val));
            }
            for &i in &self.cens_slots[cause][a] {
                let rest = 1.0 - other[i] - val;
                if rest <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc.add(agg.censored(i) * math::ln(rest));
            }
        }
        acc.value()
    }

    fn block_update(&mut self, agg: &Aggregated, cause: usize) {
        let m_slots = self.supports[cause].len();
        let opt = m_slots - usize::from(self.pinned_tail[cause]);
        if opt == 0 {
            return;
        }
        let other: Vec<f64> = (0..agg.len())
            .map(|i| self.sum_at(i) - self.f_at(cause, i))
            .collect();
        let others_final: f64 = (0..self.k)
            .filter(|&c| c != cause)
            .map(|c| *self.v[c].last().unwrap_or(&0.0))
            .sum();
        let cap = (1.0 - others_final - VALUE_EPS).max(VALUE_EPS);

        for _ in 0..40 {
            let mut grad = vec![0.0; opt];
            let mut curv = vec![0.0; opt];
            for a in 0..opt {
                let val = self.v[cause][a];
                if self.hits[cause][a] > 0.0 {
                    grad[a] += self.hits[cause][a] / val;
                    curv[a] += self.hits[cause][a] / (val * val);
                }
                for &i in &self.cens_slots[cause][a] {
                    let rest = 1.0 - other[i] - val;
                    let cens = agg.censored(i);
                    grad[a] -= cens / rest;
                    curv[a] += cens / (rest * rest);
                }
            }
            let target: Vec<f64> = (0..opt)
                .map(|a| self.v[cause][a] + grad[a] / curv[a])
                .collect();
            let iso = pava(&target, &curv).expect("positive curvature weights");
            let cand: Vec<f64> = iso.iter().map(|x| x.clamp(VALUE_EPS, cap)).collect();
            let dir: Vec<f64> = cand
                .iter()
                .zip(&self.v[cause][..opt])
                .map(|(c, v)| c - v)
                .collect();
            let step_norm = dir.iter().fold(0.0f64, |acc, d| acc.max(math::abs(*d)));
            if step_norm < 1e-15 {
                break;
            }
            let ascent: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            if ascent <= 0.0 {
                break;
            }
            let current = self.block_objective(agg, cause, &other, &self.v[cause][..opt]);
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda > 1e-12 {
                let trial: Vec<f64> = self.v[cause][..opt]
                    .iter()
                    .zip(&dir)
                    .map(|(v, d)| v + lambda * d)
                    .collect();
                let value = self.block_objective(agg, cause, &other, &trial);
                if value >= current + 1e-4 * lambda * ascent {
                    self.v[cause][..opt].copy_from_slice(&trial);
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if self.pinned_tail[cause] {
            let last = m_slots - 1;
            self.v[cause][last] = if last == 0 {
                0.0
            } else {
                self.v[cause][last - 1]
            };
        }
    }

    fn evaluate(&self, agg: &Aggregated) -> Result<Certificate> {
        let f_at: Vec<Vec<f64>> = (0..self.k)
            .map(|c| (0..agg.len()).map(|i| self.f_at(c, i)).collect())
            .collect();
        let jumps: Vec<Vec<bool>> = (0..self.k)
            .map(|c| {
                (0..self.v[c].len())
                    .map(|a| {
                        let prev = if a == 0 { 0.0 } else { self.v[c][a - 1] };
                        self.v[c][a] - prev > JUMP_TOL
                    })
                    .collect()
            })
            .collect();
        certificate(agg, &f_at, &self.supports, &self.v, &jumps)
    }

    /// Largest-derivative feasible exchange: raise one tail, lower one jump
    /// tail. Returns `None` when no exchange direction ascends.
    fn best_exchange(
        &self,
        agg: &Aggregated,
        cert: &Certificate,
    ) -> Option<(usize, usize, usize, usize, f64)> {
        let m = agg.len();
        let s_star = (0..m)
            .find(|&i| self.sum_at(i) >= 1.0 - BOUNDARY_TOL)
            .unwrap_or(m - 1);
        // Suffix argmax of the raise derivatives over time: the best raise
        // at or after each time index.
        let mut best_from: Vec<Option<(f64, usize, usize)>> = vec![None; m + 1];
        for up_c in 0..self.k {
            for (a, &i) in self.supports[up_c].iter().enumerate() {
                let d = cert.d[up_c][a];
                if best_from[i].is_none_or(|(v, _, _)| d > v) {
                    best_from[i] = Some((d, up_c, a));
                }
            }
        }
        for i in (0..m).rev() {
            if let Some(next) = best_from[i + 1] {
                if best_from[i].is_none_or(|(v, _, _)| next.0 > v) {
                    best_from[i] = Some(next);
                }
            }
        }
        let global = best_from[0];
        let mut best: Option<(usize, usize, usize, usize, f64)> = None;
        for down_c in 0..self.k {
            for b in 0..self.v[down_c].len() {
                let prev = if b == 0 { 0.0 } else { self.v[down_c][b - 1] };
                if self.v[down_c][b] - prev <= JUMP_TOL {
                    continue;
                }
                let s_i = self.supports[down_c][b];
                let allowed = if s_i <= s_star {
                    global
                } else {
                    best_from[s_i]
                };
                if let Some((d_up, up_c, a)) = allowed {
                    if up_c == down_c && a == b {
                        continue;
                    }
                    let gain = d_up - cert.d[down_c][b];
                    if best.is_none_or(|(_, _, _, _, g)| gain > g) {
                        best = Some((up_c, a, down_c, b, gain));
                    }
                }
            }
        }
        best.filter(|&(_, _, _, _, g)| g > 0.0)
    }

    /// Move mass from the `down` jump tail to the `up` tail by the exactly
    /// maximizing amount along the direction.
    fn apply_exchange(
        &mut self,
        agg: &Aggregated,
        up_c: usize,
        a0: usize,
        down_c: usize,
        b0: usize,
    ) {
        let m = agg.len();
        let up_start = self.supports[up_c][a0];
        let down_start = self.supports[down_c][b0];
        // Affected likelihood terms, gathered once: failure masses divided
        // by a raised or lowered value, and censored masses whose surviving
        // probability shrinks or grows.
        let mut raised: Vec<(f64, f64)> = Vec::new(); // (mass, value)
        let mut lowered: Vec<(f64, f64)> = Vec::new();
        let mut squeezed: Vec<(f64, f64)> = Vec::new(); // (mass, 1 - sum)
        let mut relaxed: Vec<(f64, f64)> = Vec::new();
        for (a, &i) in self.supports[up_c].iter().enumerate() {
            if a >= a0 && self.hits[up_c][a] > 0.0 {
                let also_down = up_c == down_c && i >= down_start;
                if !also_down {
                    raised.push((self.hits[up_c][a], self.v[up_c][a]));
                }
            }
        }
        for (b, &i) in self.supports[down_c].iter().enumerate() {
            if b >= b0 && self.hits[down_c][b] > 0.0 {
                let also_up = up_c == down_c && i >= up_start;
                if !also_up {
                    lowered.push((self.hits[down_c][b], self.v[down_c][b]));
                }
            }
        }
        let prev = if b0 == 0 { 0.0 } else { self.v[down_c][b0 - 1] };
        let mut dmax = self.v[down_c][b0] - prev;
        dmax = dmax.min(1.0 - VALUE_EPS - self.v[up_c].last().unwrap());
        for i in 0..m {
            let up = i >= up_start;
            let down = i >= down_start && self.slot[down_c][i].is_some();
            if up && !down {
                dmax = dmax.min(1.0 - VALUE_EPS - self.sum_at(i));
            }
            let cens = agg.censored(i);
            if cens > 0.0 {
                let rest = 1.0 - self.sum_at(i);
                if up && !down {
                    squeezed.push((cens, rest));
                } else if down && !up {
                    relaxed.push((cens, rest));
                }
            }
        }
        if dmax <= 0.0 {
            return;
        }
        let deriv = |x: f64| -> f64 {
            let mut acc = Kahan::new();
            for &(mass, v) in &raised {
                acc.add(mass / (v + x));
            }
            for &(mass, v) in &lowered {
                acc.add(-mass / (v - x));
            }
            for &(mass, rest) in &squeezed {
                acc.add(-mass / (rest - x));
            }
            for &(mass, rest) in &relaxed {
                acc.add(mass / (rest + x));
            }
            acc.value()
        };
        // Concave in x: bisect the decreasing derivative.
        let mut lo = 0.0;
        let mut hi = dmax;
        if deriv(hi) >= 0.0 {
            lo = hi;
        } else {
            for _ in 0..90 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let step = lo;
        if step <= 0.0 {
            return;
        }
        for a in a0..self.v[up_c].len() {
            self.v[up_c][a] += step;
        }
        for b in b0..self.v[down_c].len() {
            self.v[down_c][b] -= step;
        }
    }

    fn run(mut self, d: &Dataset, opts: &MleOptions) -> Result<SubDistEstimate> {
        let agg = d.aggregate();
        let naive_fit = naive_components(d, &agg)?;
        self.initialize(&agg, &naive_fit);
        let mut best_residual = f64::INFINITY;
        let mut best_state: Option<Vec<Vec<f64>>> = None;
        let mut iterations = 0;
        for sweep in 1..=opts.max_iter {
            iterations = sweep;
            for cause in 0..self.k {
                self.block_update(&agg, cause);
            }
            let mut cert = self.evaluate(&agg)?;
            if cert.report.boundary_active && cert.report.residual > opts.tol {
                for _ in 0..16 {
                    match self.best_exchange(&agg, &cert) {
                        Some((uc, a, dc, b, _)) => {
                            self.apply_exchange(&agg, uc, a, dc, b);
                            cert = self.evaluate(&agg)?;
                            if cert.report.residual <= opts.tol {
                                break;
                            }
                        }
                        None => break,
                    }
                }
            }
            if cert.report.residual < best_residual {
                best_residual = cert.report.residual;
                best_state = Some(self.v.clone());
            }
            if cert.report.residual <= opts.tol {
                return Ok(self.finish(d, &agg, sweep));
            }
        }
        if let Some(state) = best_state {
            self.v = state;
        }
        let best = self.finish(d, &agg, iterations);
        Err(Error::NonConvergence {
            iterations,
            residual: best_residual,
            best: Box::new(best),
        })
    }

    fn finish(&self, d: &Dataset, agg: &Aggregated, sweeps: usize) -> SubDistEstimate {
        let components: Vec<StepFunction> = (0..self.k)
            .map(|c| {
                let knots: Vec<f64> = self.supports[c].iter().map(|&i| agg.times[i]).collect();
                StepFunction::new(knots, self.v[c].clone()).expect("support times are increasing")
            })
            .collect();
        let mut est = SubDistEstimate::assemble(d, EstimatorKind::Mle, components);
        est.iterations = sweeps;
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(k: usize, pairs: &[(f64, usize)]) -> Dataset {
        Dataset::from_pairs(k, pairs).unwrap()
    }

    #[test]
    fn loglik_is_minus_infinity_on_zero_mass() {
        let d = ds(2, &[(1.0, 1)]);
        let est = SubDistEstimate {
            kind: EstimatorKind::Mle,
            components: vec![StepFunction::constant(0.0), StepFunction::constant(0.0)],
            loglik: 0.0,
            kkt_residual: 0.0,
            boundary_active: false,
            iterations: 0,
        };
        assert_eq!(loglik(&d, &est), f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_single_observation() {
        let d = ds(2, &[(1.0, 1)]);
        let est = SubDistEstimate {
            kind: EstimatorKind::Mle,
            components: vec![StepFunction::constant(0.5), StepFunction::constant(0.0)],
            loglik: 0.0,
            kkt_residual: 0.0,
            boundary_active: false,
            iterations: 0,
        };
        assert!((loglik(&d, &est) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_two_observations_averages_terms() {
        // One failure from cause 1 at t=1 with mass 1/2, one survivor at t=2
        // with remaining mass 1/2: average of two log(1/2) terms.
        let d = ds(2, &[(1.0, 1), (2.0, 3)]);
        let f1 = StepFunction::new(vec![1.0], vec![0.5]).unwrap();
        let est = SubDistEstimate {
            kind: EstimatorKind::Mle,
            components: vec![f1, StepFunction::constant(0.0)],
            loglik: 0.0,
            kkt_residual: 0.0,
            boundary_active: false,
            iterations: 0,
        };
        assert!((loglik(&d, &est) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn marginal_loglik_trivial_cases() {
        let d = ds(1, &[(1.0, 1)]);
        assert_eq!(
            loglik_marginal(&d, 1, &StepFunction::constant(0.0)),
            f64::NEG_INFINITY
        );
        let c = 0.37;
        assert!((loglik_marginal(&d, 1, &StepFunction::constant(c)) - c.ln()).abs() < 1e-15);
    }

    #[test]
    fn naive_matches_marginal_grid_search() {
        // Delta-1 pattern (0, 1, 0, 1) over four times.
        let d = ds(2, &[(1.0, 2), (2.0, 1), (3.0, 2), (4.0, 1)]);
        let est = naive(&d).unwrap();
        let f1 = est.component(1);
        let got = loglik_marginal(&d, 1, f1);
        // Exhaustive grid over monotone step values at the four times.
        let mut best = f64::NEG_INFINITY;
        let steps = 100usize;
        for a in 0..=steps {
            for b in a..=steps {
                for c in b..=steps {
                    for e in c..=steps {
                        let f = StepFunction::new(
                            vec![1.0, 2.0, 3.0, 4.0],
                            vec![
                                a as f64 / steps as f64,
                                b as f64 / steps as f64,
                                c as f64 / steps as f64,
                                e as f64 / steps as f64,
                            ],
                        )
                        .unwrap();
                        let v = loglik_marginal(&d, 1, &f);
                        if v > best {
                            best = v;
                        }
                    }
                }
            }
        }
        assert!(got >= best - 1e-6, "naive {got} vs grid {best}");
        // The isotonic fit of (0,1,0,1) is (0, 1/2, 1/2, 1).
        assert_eq!(f1.levels(), &[0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn naive_intended_pooled_pattern() {
        // Delta-1 pattern (0, 1, 1, 0) pools the last three values to 2/3.
        let d = ds(2, &[(1.0, 2), (2.0, 1), (3.0, 1), (4.0, 2)]);
        let est = naive(&d).unwrap();
        let lv = est.component(1).levels().to_vec();
        assert!((lv[0] - 0.0).abs() < 1e-15);
        for &x in &lv[1..] {
            assert!((x - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_degenerate_patterns() {
        let all_zero = ds(2, &[(1.0, 2), (2.0, 2), (3.0, 3)]);
        let est = naive(&all_zero).unwrap();
        assert!(est.component(1).levels().iter().all(|&l| l == 0.0));

        let all_one = ds(1, &[(1.0, 1), (2.0, 1)]);
        let est = naive(&all_one).unwrap();
        assert!(est.component(1).levels().iter().all(|&l| l == 1.0));
    }

    #[test]
    fn naive_component_ignores_other_causes() {
        // Permuting causes other than k leaves component k unchanged.
        let a = ds(3, &[(1.0, 2), (2.0, 1), (3.0, 3), (4.0, 1), (5.0, 2)]);
        let b = ds(3, &[(1.0, 3), (2.0, 1), (3.0, 2), (4.0, 1), (5.0, 3)]);
        let fa = naive(&a).unwrap();
        let fb = naive(&b).unwrap();
        assert_eq!(fa.component(1).levels(), fb.component(1).levels());
    }

    #[test]
    fn scaled_naive_branches() {
        // Sum below one at s0: unchanged.
        let d = ds(2, &[(1.0, 1), (2.0, 3), (3.0, 2), (4.0, 3)]);
        let base = naive(&d).unwrap();
        let scaled = scaled_naive(&d, 3.0).unwrap();
        assert!(base.sum_at(3.0) <= 1.0);
        for k in 1..=2 {
            assert_eq!(base.component(k).levels(), scaled.component(k).levels());
        }

        // Naive components (1/3, 1/3, 1/3) and (0, 1, 1) sum to 4/3 at s0:
        // both are divided by 4/3.
        let d = ds(2, &[(1.0, 1), (2.0, 2), (3.0, 2)]);
        let base = naive(&d).unwrap();
        let s = base.sum_at(3.0);
        assert!((s - 4.0 / 3.0).abs() < 1e-12);
        let scaled = scaled_naive(&d, 3.0).unwrap();
        assert!((scaled.sum_at(3.0) - 1.0).abs() < 1e-12);
        for k in 1..=2 {
            let ratio = base.component(k).final_value() / scaled.component(k).final_value();
            assert!((ratio - s).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_naive_boundary_sum_exactly_one_unchanged() {
        let d = ds(1, &[(1.0, 1), (2.0, 1)]);
        let base = naive(&d).unwrap();
        assert_eq!(base.sum_at(3.0), 1.0);
        let scaled = scaled_naive(&d, 3.0).unwrap();
        assert_eq!(base.component(1).levels(), scaled.component(1).levels());
    }

    #[test]
    fn truncated_naive_identity_branch() {
        let d = ds(2, &[(1.0, 1), (2.0, 3), (3.0, 2), (4.0, 3)]);
        let base = naive(&d).unwrap();
        assert!(base.sum_final() <= 1.0);
        let trunc = truncated_naive(&d).unwrap();
        for k in 1..=2 {
            assert_eq!(base.component(k).levels(), trunc.component(k).levels());
        }
    }

    #[test]
    fn truncated_naive_splits_the_crossing_jump() {
        // Naive fit: F1 = (0.4, 0.9), F2 = (0.2, 0.2); the sum crosses one
        // at the second knot where only F1 jumps, so F1 absorbs the whole
        // remaining mass 0.4 and both components freeze.
        let mut pairs = Vec::new();
        for _ in 0..2 {
            pairs.push((1.0, 1));
            pairs.push((1.0, 2));
        }
        pairs.push((1.0, 3));
        for _ in 0..9 {
            pairs.push((2.0, 1));
        }
        pairs.push((2.0, 2));
        let d = ds(2, &pairs);
        let base = naive(&d).unwrap();
        assert_eq!(base.component(1).levels(), &[0.4, 0.9]);
        assert_eq!(base.component(2).levels(), &[0.2, 0.2]);
        assert!(base.sum_final() > 1.0);
        let trunc = truncated_naive(&d).unwrap();
        let f1 = trunc.component(1).levels();
        let f2 = trunc.component(2).levels();
        assert!((f1[0] - 0.4).abs() < 1e-12 && (f1[1] - 0.8).abs() < 1e-12);
        assert!((f2[0] - 0.2).abs() < 1e-12 && (f2[1] - 0.2).abs() < 1e-12);
        assert!((trunc.sum_final() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_naive_alpha_shares() {
        // Direct check of the jump-share formula on a hand-built crossing:
        // before the cut the sum is 0.8, jumps 0.3 and 0.1 -> shares
        // 0.15 and 0.05.
        let jumps = [0.3, 0.1];
        let before = [0.5, 0.3];
        let sum_before: f64 = before.iter().sum();
        let jump_sum: f64 = jumps.iter().sum();
        let alphas: Vec<f64> = jumps
            .iter()
            .map(|j| j / jump_sum * (1.0 - sum_before))
            .collect();
        assert!((alphas[0] - 0.15).abs() < 1e-15);
        assert!((alphas[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn unique_support_definition() {
        // All observations from cause k: every time plus the maximum.
        let d = ds(2, &[(1.0, 1), (2.0, 1)]);
        assert_eq!(unique_support(&d, 1), vec![1.0, 2.0]);
        // No cause-k or censored observations: only the largest time.
        assert_eq!(unique_support(&d, 2), vec![2.0]);
        // Mixed: times {1,2,3} with causes {1,2,3}.
        let d = ds(2, &[(1.0, 1), (2.0, 2), (3.0, 3)]);
        assert_eq!(unique_support(&d, 1), vec![1.0, 3.0]);
        assert_eq!(unique_support(&d, 2), vec![2.0, 3.0]);
    }

    #[test]
    fn mle_single_cause_equals_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = rng.gen_range(5..60);
            let pairs: Vec<(f64, usize)> = (0..n)
                .map(|_| {
                    (
                        rng.gen_range(0.0..3.0),
                        if rng.gen_bool(0.5) { 1 } else { 2 },
                    )
                })
                .collect();
            let d = ds(1, &pairs);
            let nv = naive(&d).unwrap();
            let ml = mle(&d, &MleOptions::default()).unwrap();
            for (a, b) in nv
                .component(1)
                .levels()
                .iter()
                .zip(ml.component(1).levels())
            {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(ml.kkt_residual <= 1e-10);
        }
    }

    #[test]
    fn mle_two_observation_calculus_case() {
        // (1, cause 1), (2, censored): maximize log c + log(1 - c) at c=1/2;
        // normalized log-likelihood log(1/2).
        let d = ds(2, &[(1.0, 1), (2.0, 3)]);
        let est = mle(&d, &MleOptions::default()).unwrap();
        assert!((est.component(1).eval(1.0) - 0.5).abs() < 1e-9);
        assert!(est.component(2).final_value() < 1e-9);
        assert!((est.loglik - 0.5f64.ln()).abs() < 1e-9);
        assert!(est.kkt_residual <= 1e-10);
    }

    #[test]
    fn mle_boundary_exchange_case() {
        // Two failures, no censored observations: the masses must trade off
        // along the sum constraint, log a + log(1 - a) at a = 1/2.
        let d = ds(2, &[(1.0, 1), (2.0, 2)]);
        let est = mle(&d, &MleOptions::default()).unwrap();
        assert!(est.boundary_active);
        assert!((est.component(1).eval(1.0) - 0.5).abs() < 1e-9);
        assert!((est.component(2).eval(2.0) - 0.5).abs() < 1e-9);
        assert!(est.kkt_residual <= 1e-10);
    }

    #[test]
    fn mle_single_failure_takes_all_mass() {
        let d = ds(2, &[(1.0, 1)]);
        let est = mle(&d, &MleOptions::default()).unwrap();
        assert!(est.component(1).eval(1.0) > 1.0 - 1e-6);
        assert!(est.kkt_residual <= 1e-10);
        assert!(est.loglik > -1e-6);
    }

    #[test]
    fn kkt_residual_accepts_naive_at_single_cause() {
        let d = ds(1, &[(0.5, 1), (1.0, 2), (1.5, 1), (2.0, 2), (2.5, 1)]);
        let nv = naive(&d).unwrap();
        let rep = kkt_residual(&d, &nv).unwrap();
        assert!(rep.residual <= 1e-10, "residual {}", rep.residual);
        let marg = marginal_kkt_residual(&d, 1, nv.component(1)).unwrap();
        assert!(marg <= 1e-10);
    }

    #[test]
    fn kkt_residual_flags_perturbed_fit() {
        // Two censored observations between two failures pin the optimum at
        // F1 = 1/3 on [1, 1.4) and 1/2 after; sliding the second jump left
        // across the censored pair changes what they see.
        let d = ds(2, &[(1.0, 1), (1.2, 3), (1.2, 3), (1.4, 1), (3.0, 3)]);
        let est = mle(&d, &MleOptions::default()).unwrap();
        assert!((est.component(1).eval(1.0) - 1.0 / 3.0).abs() < 1e-8);
        assert!((est.component(1).eval(1.4) - 0.5).abs() < 1e-8);
        let moved = StepFunction::new(vec![1.0, 1.1], vec![1.0 / 3.0, 0.5]).unwrap();
        let perturbed = SubDistEstimate {
            kind: EstimatorKind::Mle,
            components: vec![moved, est.component(2).clone()],
            loglik: 0.0,
            kkt_residual: 0.0,
            boundary_active: false,
            iterations: 0,
        };
        let rep = kkt_residual(&d, &perturbed).unwrap();
        assert!(rep.residual > 1e-4, "residual {}", rep.residual);
    }

    #[test]
    fn kkt_residual_rejects_infeasible_sum() {
        let d = ds(2, &[(1.0, 1), (1.0, 2)]);
        let est = SubDistEstimate {
            kind: EstimatorKind::Mle,
            components: vec![StepFunction::constant(0.7), StepFunction::constant(0.7)],
            loglik: 0.0,
            kkt_residual: 0.0,
            boundary_active: false,
            iterations: 0,
        };
        assert!(matches!(kkt_residual(&d, &est), Err(Error::Infeasible(_))));
    }

    #[test]
    fn mle_loglik_never_below_feasible_start_and_perturbations_do_not_improve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..15 {
            let n = rng.gen_range(3..25);
            let pairs: Vec<(f64, usize)> = (0..n)
                .map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(1..=3)))
                .collect();
            let d = ds(2, &pairs);
            let est = mle(&d, &MleOptions::default()).unwrap();
            assert!(est.kkt_residual <= 1e-10);
            for k in 1..=2 {
                assert!(est.component(k).is_nondecreasing(FEAS_TOL));
                assert!(est.component(k).final_value() <= 1.0 + FEAS_TOL);
            }
            assert!(est.sum_final() <= 1.0 + FEAS_TOL);

            // The maximizer dominates any feasible comparator; the truncated
            // naive estimator is always one.
            let comparator = truncated_naive(&d).unwrap();
            assert!(
                est.loglik >= loglik(&d, &comparator) - 1e-9,
                "mle {} vs truncated naive {}",
                est.loglik,
                comparator.loglik
            );

            // Random feasible one-coordinate perturbations do not increase
            // the likelihood.
            for _ in 0..20 {
                let cause = rng.gen_range(1..=2usize);
                let comp = est.component(cause);
                if comp.levels().is_empty() {
                    continue;
                }
                let j = rng.gen_range(0..comp.levels().len());
                let eps: f64 = rng.gen_range(-0.02..0.02);
                let mut levels = comp.levels().to_vec();
                levels[j] = (levels[j] + eps).clamp(0.0, 1.0);
                let prev = if j == 0 { 0.0 } else { levels[j - 1] };
                if levels[j] < prev {
                    continue;
                }
                if j + 1 < levels.len() && levels[j] > levels[j + 1] {
                    continue;
                }
                let cand = StepFunction::new(comp.knots().to_vec(), levels).unwrap();
                let mut comps = est.components.clone();
                comps[cause - 1] = cand;
                let alt = SubDistEstimate {
                    kind: EstimatorKind::Mle,
                    components: comps,
                    loglik: 0.0,
                    kkt_residual: 0.0,
                    boundary_active: false,
                    iterations: 0,
                };
                let mut feasible = true;
                for o in d.observations() {
                    if alt.sum_at(o.time) > 1.0 {
                        feasible = false;
                        break;
                    }
                }
                if alt.sum_final() > 1.0 {
                    feasible = false;
                }
                if feasible {
                    assert!(loglik(&d, &alt) <= est.loglik + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mle_jumps_restricted_to_unique_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let n = rng.gen_range(4..30);
            let pairs: Vec<(f64, usize)> = (0..n)
                .map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(1..=3)))
                .collect();
            let d = ds(2, &pairs);
            let est = mle(&d, &MleOptions::default()).unwrap();
            for k in 1..=2 {
                let support = unique_support(&d, k);
                for (t, _) in est.component(k).jumps(1e-8) {
                    assert!(
                        support.contains(&t),
                        "jump at {t} off support for cause {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::from_pairs(0, &[(1.0, 1)]).is_err());
        assert!(Dataset::from_pairs(2, &[]).is_err());
        assert!(Dataset::from_pairs(2, &[(1.0, 4)]).is_err());
        assert!(Dataset::from_pairs(2, &[(f64::NAN, 1)]).is_err());
        assert!(Dataset::from_pairs(2, &[(1.0, 3)]).is_ok());
        assert!(scaled_naive(&ds(1, &[(1.0, 1)]), f64::NAN).is_err());
    }

    #[test]
    fn mle_non_convergence_error_carries_best_iterate() {
        let d = ds(2, &[(0.5, 1), (1.0, 3), (1.5, 2), (2.0, 3), (2.5, 1)]);
        let opts = MleOptions {
            tol: 0.0,
            max_iter: 2,
        };
        match mle(&d, &opts) {
            Err(Error::NonConvergence {
                iterations,
                residual,
                best,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
                assert!(best.loglik.is_finite());
                assert_eq!(best.n_causes(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn mle_handles_tied_observation_times() {
        let d = ds(2, &[(1.0, 1), (1.0, 3), (1.0, 2), (2.0, 2), (2.0, 3)]);
        let est = mle(&d, &MleOptions::default()).unwrap();
        assert!(est.kkt_residual <= 1e-10);
        assert!(est.sum_final() <= 1.0 + FEAS_TOL);
    }

    #[test]
    fn three_cause_fits_certify_including_boundary_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..40 {
            let n = rng.gen_range(1..=80);
            // Every third dataset has no censored rows, so the optimum sits
            // on the sum constraint and mass exchanges must finish the job.
            let censored_ok = trial % 3 != 0;
            let pairs: Vec<(f64, usize)> = (0..n)
                .map(|_| {
                    let top = if censored_ok { 4 } else { 3 };
                    (rng.gen_range(0.0..3.0), rng.gen_range(1..=top))
                })
                .collect();
            let d = ds(3, &pairs);
            let est = mle(&d, &MleOptions::default()).unwrap();
            assert!(est.kkt_residual <= 1e-10, "trial {trial}");
            assert!(est.sum_final() <= 1.0 + FEAS_TOL);
            if !censored_ok {
                assert!(
                    est.boundary_active,
                    "trial {trial}: all-failure data binds the constraint"
                );
            }
        }
    }

    #[test]
    fn all_estimators_stay_monotone_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..10 {
            let n = rng.gen_range(5..40);
            let pairs: Vec<(f64, usize)> = (0..n)
                .map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(1..=3)))
                .collect();
            let d = ds(2, &pairs);
            let s0 = 3.0;
            let fits = [
                naive(&d).unwrap(),
                scaled_naive(&d, s0).unwrap(),
                truncated_naive(&d).unwrap(),
                mle(&d, &MleOptions::default()).unwrap(),
            ];
            for est in &fits {
                for k in 1..=2 {
                    let comp = est.component(k);
                    assert!(comp.is_nondecreasing(FEAS_TOL));
                    assert!(comp.left_value() >= 0.0);
                    assert!(comp.final_value() <= 1.0 + FEAS_TOL);
                }
            }
            // Sum constraints: truncated everywhere, scaled up to s0.
            let trunc = &fits[2];
            let scaled = &fits[1];
            for o in d.observations() {
                assert!(trunc.sum_at(o.time) <= 1.0 + FEAS_TOL);
                if o.time <= s0 {
                    assert!(scaled.sum_at(o.time) <= 1.0 + FEAS_TOL);
                }
            }
            assert!(trunc.sum_final() <= 1.0 + FEAS_TOL);
        }
    }
}
