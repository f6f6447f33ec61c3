//! File formats: dataset and estimate CSVs, certificate and diagnostics
//! JSON, experiment configuration JSON, simulation output tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use curstat_core::estimators::{Dataset, Observation, SubDistEstimate};
use curstat_core::limit::{FixedPointFit, GridPaths, MinorantTuple, PathDiagnostics};
use curstat_core::sim::{MseEstimator, MseTable};
use curstat_core::stepfn::StepFunction;

use crate::CliError;

/// Refuse to clobber an existing output unless forced.
pub fn guard_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Data(format!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Data(format!("creating {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, body).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Dataset CSV: header `t,cause`, one row per observation.
// ---------------------------------------------------------------------------

pub fn dataset_csv(d: &Dataset) -> String {
    let mut out = String::from("t,cause\n");
    for o in d.observations() {
        out.push_str(&format!("{},{}\n", o.time, o.cause));
    }
    out
}

/// Parse a dataset CSV. When `causes` is absent the number of failure
/// causes is inferred as the largest cause id minus one (treating the
/// largest id as the not-yet-failed code).
pub fn read_dataset_csv(path: &Path, causes: Option<usize>) -> Result<Dataset, CliError> {
    let body = read_text(path)?;
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,cause" => {}
        other => {
            return Err(CliError::Data(format!(
                "{}: expected header 't,cause', found {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut obs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (t, cause) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(c), None) => (t.trim(), c.trim()),
            _ => {
                return Err(CliError::Data(format!(
                    "{} line {}: expected two fields",
                    path.display(),
                    lineno + 2
                )))
            }
        };
        let time: f64 = t
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad time '{t}'", path.display())))?;
        let cause: usize = cause
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad cause '{cause}'", path.display())))?;
        obs.push(Observation { time, cause });
    }
    if obs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no observations",
            path.display()
        )));
    }
    let max_cause = obs.iter().map(|o| o.cause).max().unwrap_or(1);
    let k = causes.unwrap_or_else(|| max_cause.saturating_sub(1).max(1));
    Dataset::new(k, obs).map_err(|e| CliError::Data(e.to_string()))
}

// ---------------------------------------------------------------------------
// Estimate CSV: header `k,t,value`, one row per (component, knot).
// ---------------------------------------------------------------------------

pub fn estimate_csv(est: &SubDistEstimate) -> String {
    let mut out = String::from("k,t,value\n");
    for cause in 1..=est.n_causes() {
        let comp = est.component(cause);
        for (t, v) in comp.knots().iter().zip(comp.levels()) {
            out.push_str(&format!("{cause},{t},{v}\n"));
        }
    }
    out
}

/// Parse an estimate CSV into components; the number of causes is the
/// largest `k` present.
pub fn read_estimate_csv(path: &Path) -> Result<Vec<StepFunction>, CliError> {
    let body = read_text(path)?;
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h.trim() == "k,t,value" => {}
        other => {
            return Err(CliError::Data(format!(
                "{}: expected header 'k,t,value', found {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(CliError::Data(format!(
                "{}: expected three fields per row",
                path.display()
            )));
        }
        let k: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad component id", path.display())))?;
        let t: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad knot", path.display())))?;
        let v: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad value", path.display())))?;
        if k == 0 {
            return Err(CliError::Data(format!(
                "{}: component ids are 1-based",
                path.display()
            )));
        }
        rows.push((k, t, v));
    }
    let kmax =
        rows.iter().map(|r| r.0).max().ok_or_else(|| {
            CliError::Data(format!("{}: estimate file has no rows", path.display()))
        })?;
    let mut components = Vec::with_capacity(kmax);
    for cause in 1..=kmax {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.0 == cause)
            .map(|r| (r.1, r.2))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (knots, levels): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        components
            .push(StepFunction::new(knots, levels).map_err(|e| CliError::Data(e.to_string()))?);
    }
    Ok(components)
}

// ---------------------------------------------------------------------------
// Certificate JSON
// ---------------------------------------------------------------------------

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn certificate_json(est: &SubDistEstimate, converged: bool) -> Value {
    json!({
        "estimator": est.kind.as_str(),
        "loglik": finite_or_null(est.loglik),
        "kkt_residual": finite_or_null(est.kkt_residual),
        "iterations": est.iterations,
        "converged": converged,
        "boundary_active": est.boundary_active,
    })
}

// ---------------------------------------------------------------------------
// Monte-Carlo outputs
// ---------------------------------------------------------------------------

pub fn mse_csv(table: &MseTable) -> String {
    let mut out = String::from("estimator,k,t,mse,relative_mse\n");
    for (e, est) in table.estimators.iter().enumerate() {
        for c in 0..table.mse[e].len() {
            for (i, &t) in table.times.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    est.as_str(),
                    c + 1,
                    t,
                    table.mse[e][c][i],
                    table.relative[e][c][i]
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Limit-process outputs
// ---------------------------------------------------------------------------

/// Per-replication path table on the analysis window:
/// `t, V_1..V_K, Hhat_1..K, Fhat_1..K, Htilde_1..K, Ftilde_1..K`.
pub fn limit_paths_csv(paths: &GridPaths, fit: &FixedPointFit, naive: &MinorantTuple) -> String {
    let k = paths.n_causes();
    let mut header = String::from("t");
    for tag in ["V", "Hhat", "Fhat", "Htilde", "Ftilde"] {
        for c in 1..=k {
            header.push_str(&format!(",{tag}_{c}"));
        }
    }
    header.push('\n');
    let (lo, hi) = paths.analysis_range();
    let mut out = header;
    for i in lo..=hi {
        out.push_str(&format!("{}", paths.grid()[i]));
        for c in 1..=k {
            out.push_str(&format!(",{}", paths.v(c)[i]));
        }
        for c in 0..k {
            out.push_str(&format!(",{}", fit.process.h[c][i]));
        }
        for c in 0..k {
            out.push_str(&format!(",{}", fit.process.f[c][i]));
        }
        for c in 0..k {
            out.push_str(&format!(",{}", naive.h[c][i]));
        }
        for c in 0..k {
            out.push_str(&format!(",{}", naive.f[c][i]));
        }
        out.push('\n');
    }
    out
}

pub fn limit_diagnostics_json(seed: u64, fit: &FixedPointFit, diag: &PathDiagnostics) -> Value {
    json!({
        "seed": seed,
        "converged": true,
        "iterations": fit.iterations,
        "residual": fit.residual,
        "used_fallback": fit.used_fallback,
        "touch_counts": diag.touch_fit,
        "envelope_touch_counts": diag.touch_envelope,
        "inclusion_fraction": diag.inclusion_fraction,
        "inclusion_excess": diag.inclusion_excess,
        "domination_excess": diag.domination_excess,
        "jump_touch_gap": diag.jump_touch_gap,
        "sum_excess": diag.sum_excess,
        "order_excess": diag.order_excess,
        "jump_counts": diag.jump_counts,
        "integral_checks": diag.integral_checks.iter().map(|c| json!({
            "cause": c.cause,
            "tau": c.tau,
            "s": c.s,
            "lhs": c.lhs,
            "rhs": c.rhs,
            "margin": c.margin(),
            "s_in_touch_set": c.s_in_touch_set,
        })).collect::<Vec<_>>(),
    })
}

// ---------------------------------------------------------------------------
// Configuration JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub obs_rate: f64,
    pub cause_probs: Vec<f64>,
    pub cond_rates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsJson {
    pub t0: f64,
    pub subdist: Vec<f64>,
    pub density: Vec<f64>,
    pub obs_density: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl GridJson {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        if !self.step.is_finite() || self.step <= 0.0 || self.end < self.start {
            return Err(CliError::Usage(
                "grid needs positive step and end >= start".into(),
            ));
        }
        let n = ((self.end - self.start) / self.step).round() as usize;
        // Decimal steps like 0.01 are not exact in binary; dividing by the
        // reciprocal reproduces the cleanly rounded decimals (0.29, not
        // 0.29000000000000004) whenever the reciprocal is integral.
        let inv = (1.0 / self.step).round();
        let snap = inv >= 1.0 && ((inv * self.step - 1.0).abs() < 1e-9);
        Ok((0..=n)
            .map(|i| {
                if snap {
                    self.start + i as f64 / inv
                } else {
                    self.start + i as f64 * self.step
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseConfigJson {
    pub model: ModelJson,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub grid: GridJson,
    pub estimators: Vec<String>,
    pub seed: u64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    #[serde(default = "default_mle_tol")]
    pub mle_tol: f64,
    #[serde(default = "default_mle_max_iter")]
    pub mle_max_iter: usize,
}

fn default_s0() -> f64 {
    3.0
}

fn default_mle_tol() -> f64 {
    1e-10
}

fn default_mle_max_iter() -> usize {
    500
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let body = read_text(path)?;
    serde_json::from_str(&body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn parse_estimators(names: &[String]) -> Result<Vec<MseEstimator>, CliError> {
    if names.is_empty() {
        return Err(CliError::Usage("estimator list must be non-empty".into()));
    }
    names
        .iter()
        .map(|n| {
            MseEstimator::parse(n)
                .ok_or_else(|| CliError::Usage(format!("unknown estimator '{n}'")))
        })
        .collect()
}
