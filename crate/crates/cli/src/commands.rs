//! Command implementations. Every command is a pure function of its
//! configuration, input files and seed.

use std::path::{Path, PathBuf};

use serde_json::json;

use curstat_core::estimators::{
    kkt_residual, marginal_kkt_residual, mle, naive, scaled_naive, truncated_naive, EstimatorKind,
    MleOptions, SubDistEstimate, FEAS_TOL,
};
use curstat_core::limit::{
    diagnostics, drift_only_paths, mle_limit, naive_limit, sample_paths, LimitConfig, LocalParams,
};
use curstat_core::sim::{
    aggregate_table, gen_data, local_params_at, mse_experiment, replication_squared_errors,
    stream_seed, ModelSpec, MseConfig,
};
use curstat_core::Error as CoreError;

use crate::io::{
    self, certificate_json, dataset_csv, estimate_csv, guard_overwrite, limit_diagnostics_json,
    limit_paths_csv, mse_csv, read_dataset_csv, read_estimate_csv, read_json, GridJson, ModelJson,
    MseConfigJson, ParamsJson,
};
use crate::{
    CheckArgs, CliError, EstimateArgs, EstimatorArg, GenDataArgs, ModelArgs, SimulateLimitArgs,
    SimulateMseArgs,
};

fn core_err(e: CoreError) -> CliError {
    match e {
        CoreError::NonConvergence { .. }
        | CoreError::FixedPointDiverged { .. }
        | CoreError::ReplicationFailed { .. } => CliError::NonConvergence(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn resolve_model(args: &ModelArgs) -> Result<ModelSpec, CliError> {
    resolve_model_over(args, None)
}

/// Per-field precedence: flag, then `--model-json`, then the `base` model
/// from an experiment config, then the two-risk benchmark model.
fn resolve_model_over(args: &ModelArgs, base: Option<&ModelJson>) -> Result<ModelSpec, CliError> {
    let file: Option<ModelJson> = match &args.model_json {
        Some(path) => Some(read_json(path)?),
        None => None,
    };
    let layered = file.as_ref().or(base);
    let obs_rate = args.obs_rate.or(layered.map(|m| m.obs_rate)).unwrap_or(1.0);
    let cause_probs = args
        .cause_probs
        .clone()
        .or(layered.map(|m| m.cause_probs.clone()))
        .unwrap_or_else(|| vec![1.0 / 3.0, 2.0 / 3.0]);
    let cond_rates = args
        .cond_rates
        .clone()
        .or(layered.map(|m| m.cond_rates.clone()))
        .unwrap_or_else(|| vec![1.0, 2.0]);
    ModelSpec::new(obs_rate, cause_probs, cond_rates).map_err(|e| CliError::Usage(e.to_string()))
}

fn model_json(m: &ModelSpec) -> ModelJson {
    ModelJson {
        obs_rate: m.obs_rate,
        cause_probs: m.cause_probs.clone(),
        cond_rates: m.cond_rates.clone(),
    }
}

/// Ordered parallel map: results come back indexed by input order, so the
/// output is independent of the thread count.
fn run_indexed<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (ci, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(ci * chunk + j));
                }
            });
        }
    });
    out.into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect()
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let model = resolve_model(&args.model)?;
    let meta_path = sibling_json(&args.out, ".meta.json");
    guard_overwrite(&args.out, args.force)?;
    guard_overwrite(&meta_path, args.force)?;
    let data = gen_data(&model, args.n, args.seed).map_err(core_err)?;
    io::write_text(&args.out, &dataset_csv(&data))?;
    let meta = json!({
        "model": {
            "obs_rate": model.obs_rate,
            "cause_probs": model.cause_probs,
            "cond_rates": model.cond_rates,
        },
        "n": args.n,
        "seed": args.seed,
        "causes": model.n_causes(),
    });
    io::write_text(
        &meta_path,
        &serde_json::to_string_pretty(&meta).expect("serializable"),
    )?;
    eprintln!(
        "wrote {} observations to {}",
        data.len(),
        args.out.display()
    );
    Ok(())
}

fn sibling_json(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_cert_path(out: &Path) -> PathBuf {
    sibling_json(out, ".cert.json")
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let data = read_dataset_csv(&args.data, args.causes)?;
    let cert_path = args
        .cert
        .clone()
        .unwrap_or_else(|| default_cert_path(&args.out));
    guard_overwrite(&args.out, args.force)?;
    guard_overwrite(&cert_path, args.force)?;
    let opts = MleOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let est = match args.estimator {
        EstimatorArg::Naive => naive(&data).map_err(core_err)?,
        EstimatorArg::ScaledNaive => scaled_naive(&data, args.s0).map_err(core_err)?,
        EstimatorArg::TruncatedNaive => truncated_naive(&data).map_err(core_err)?,
        EstimatorArg::Mle => mle(&data, &opts).map_err(core_err)?,
    };
    let converged = match est.kind {
        EstimatorKind::Mle => est.kkt_residual <= opts.tol,
        _ => true,
    };
    io::write_text(&args.out, &estimate_csv(&est))?;
    io::write_text(
        &cert_path,
        &serde_json::to_string_pretty(&certificate_json(&est, converged)).expect("serializable"),
    )?;
    eprintln!(
        "estimator {} on {} observations: loglik {}, certificate {}",
        est.kind.as_str(),
        data.len(),
        est.loglik,
        est.kkt_residual
    );
    Ok(())
}

pub fn cmd_check(args: &CheckArgs) -> Result<(), CliError> {
    let components = read_estimate_csv(&args.estimate)?;
    let causes = components.len();
    let data = read_dataset_csv(&args.data, Some(causes))?;
    let residual = match args.estimator {
        EstimatorArg::Mle => {
            let est = SubDistEstimate::from_components(EstimatorKind::Mle, components)
                .map_err(core_err)?;
            kkt_residual(&data, &est).map_err(core_err)?.residual
        }
        EstimatorArg::Naive => {
            let mut worst = 0.0f64;
            for (c, comp) in components.iter().enumerate() {
                worst = worst.max(marginal_kkt_residual(&data, c + 1, comp).map_err(core_err)?);
            }
            worst
        }
        EstimatorArg::ScaledNaive | EstimatorArg::TruncatedNaive => {
            // No optimality contract; validate shape and the sum constraint
            // (up to s0 for the scaled variant, everywhere for the
            // truncated one).
            let mut worst = 0.0f64;
            let mut knots: Vec<f64> = components.iter().flat_map(|c| c.knots().to_vec()).collect();
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            for comp in &components {
                if !comp.is_nondecreasing(FEAS_TOL) {
                    return Err(CliError::Data("component not monotone".into()));
                }
                worst = worst.max(comp.final_value() - 1.0);
                worst = worst.max(-comp.left_value());
            }
            let horizon = match args.estimator {
                EstimatorArg::ScaledNaive => args.s0,
                _ => f64::INFINITY,
            };
            for &t in &knots {
                if t <= horizon {
                    let sum: f64 = components.iter().map(|c| c.eval(t)).sum();
                    worst = worst.max(sum - 1.0);
                }
            }
            worst.max(0.0)
        }
    };
    println!("{residual}");
    if residual <= args.tol {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "residual {residual} exceeds tolerance {}",
            args.tol
        )))
    }
}

pub fn cmd_simulate_mse(args: &SimulateMseArgs) -> Result<(), CliError> {
    let file_cfg: Option<MseConfigJson> = match &args.config {
        Some(path) => Some(read_json(path)?),
        None => None,
    };
    let model = resolve_model_over(&args.model, file_cfg.as_ref().map(|c| &c.model))?;
    let sizes = args
        .sizes
        .clone()
        .or(file_cfg.as_ref().map(|c| c.sizes.clone()))
        .unwrap_or_else(|| vec![250, 2500]);
    let reps = args
        .reps
        .or(file_cfg.as_ref().map(|c| c.reps))
        .unwrap_or(200);
    let seed = args
        .seed
        .or(file_cfg.as_ref().map(|c| c.seed))
        .ok_or_else(|| CliError::Usage("--seed is required (or provide it in --config)".into()))?;
    let grid_spec = GridJson {
        start: args
            .grid_start
            .unwrap_or_else(|| file_cfg.as_ref().map(|c| c.grid.start).unwrap_or(0.0)),
        step: args
            .grid_step
            .unwrap_or_else(|| file_cfg.as_ref().map(|c| c.grid.step).unwrap_or(0.01)),
        end: args
            .grid_end
            .unwrap_or_else(|| file_cfg.as_ref().map(|c| c.grid.end).unwrap_or(3.0)),
    };
    let estimator_names = args
        .estimators
        .clone()
        .or(file_cfg.as_ref().map(|c| c.estimators.clone()))
        .unwrap_or_else(|| {
            vec![
                "naive".into(),
                "scaled-naive".into(),
                "truncated-naive".into(),
                "mle".into(),
            ]
        });
    let estimators = io::parse_estimators(&estimator_names)?;
    if reps < 2 {
        return Err(CliError::Usage("--reps must be at least 2".into()));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Usage("--sizes must be positive".into()));
    }
    let cfg = MseConfig {
        sizes: sizes.clone(),
        reps,
        grid: grid_spec.points()?,
        estimators,
        seed,
        s0: args.s0.or(file_cfg.as_ref().map(|c| c.s0)).unwrap_or(3.0),
        mle_options: MleOptions {
            tol: args
                .mle_tol
                .or(file_cfg.as_ref().map(|c| c.mle_tol))
                .unwrap_or(1e-10),
            max_iter: args
                .mle_max_iter
                .or(file_cfg.as_ref().map(|c| c.mle_max_iter))
                .unwrap_or(500),
        },
    };

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", args.out_dir.display())))?;
    let echo = MseConfigJson {
        model: model_json(&model),
        sizes: sizes.clone(),
        reps,
        grid: grid_spec,
        estimators: estimator_names.clone(),
        seed,
        s0: cfg.s0,
        mle_tol: cfg.mle_options.tol,
        mle_max_iter: cfg.mle_options.max_iter,
    };
    let cfg_path = args.out_dir.join("mse_config.json");
    guard_overwrite(&cfg_path, args.force)?;
    for &n in &sizes {
        guard_overwrite(&args.out_dir.join(format!("mse_n{n}.csv")), args.force)?;
    }
    io::write_text(
        &cfg_path,
        &serde_json::to_string_pretty(&echo).expect("serializable"),
    )?;

    let tables = if args.threads > 1 {
        let mut tables = Vec::with_capacity(sizes.len());
        for (si, &n) in sizes.iter().enumerate() {
            eprintln!(
                "size {n}: running {reps} replications on {} threads",
                args.threads
            );
            let results = run_indexed(reps, args.threads, |rep| {
                replication_squared_errors(&model, &cfg, si, rep)
            });
            let mut reps_ok = Vec::with_capacity(reps);
            for r in results {
                reps_ok.push(r.map_err(core_err)?);
            }
            tables.push(aggregate_table(&model, &cfg, n, &reps_ok));
        }
        tables
    } else {
        eprintln!("running {} sizes x {reps} replications", sizes.len());
        mse_experiment(&model, &cfg).map_err(core_err)?
    };
    for table in &tables {
        let path = args.out_dir.join(format!("mse_n{}.csv", table.size));
        io::write_text(&path, &mse_csv(table))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_simulate_limit(args: &SimulateLimitArgs) -> Result<(), CliError> {
    let params: LocalParams = match &args.params_json {
        Some(path) => {
            let p: ParamsJson = read_json(path)?;
            LocalParams::new(p.t0, p.subdist, p.density, p.obs_density)
                .map_err(|e| CliError::Data(e.to_string()))?
        }
        None => {
            let model = resolve_model(&args.model)?;
            local_params_at(&model, args.t0).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    if !args.step.is_finite() || args.step <= 0.0 {
        return Err(CliError::Usage("--step must be positive".into()));
    }
    if !args.analysis_half.is_finite() || args.analysis_half < args.step {
        return Err(CliError::Usage(
            "--analysis-half must cover at least one step".into(),
        ));
    }
    if !args.sample_factor.is_finite() || args.sample_factor < 1.0 {
        return Err(CliError::Usage("--sample-factor must be at least 1".into()));
    }
    if !(args.damping > 0.0 && args.damping <= 1.0) {
        return Err(CliError::Usage("--damping must lie in (0, 1]".into()));
    }
    if !args.tol.is_finite() || args.tol <= 0.0 {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let cfg = LimitConfig {
        step: args.step,
        analysis_half: args.analysis_half,
        sample_factor: args.sample_factor,
        tol: args.tol,
        damping: args.damping,
        max_iter: args.max_iter,
        touch_tol: args.touch_tol,
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", args.out_dir.display())))?;
    for rep in 0..args.reps {
        guard_overwrite(
            &args.out_dir.join(format!("paths_{rep:04}.csv")),
            args.force,
        )?;
        guard_overwrite(
            &args.out_dir.join(format!("diagnostics_{rep:04}.json")),
            args.force,
        )?;
    }
    guard_overwrite(&args.out_dir.join("summary.json"), args.force)?;

    struct RepOut {
        rep: usize,
        seed: u64,
        paths_csv: String,
        diag_json: String,
        converged: bool,
        iterations: usize,
        residual: f64,
    }
    let results = run_indexed(args.reps, args.threads, |rep| -> Result<RepOut, CliError> {
        let seed = stream_seed(args.seed, rep as u64);
        let paths = if args.zero_noise {
            drift_only_paths(&params, &cfg)
        } else {
            sample_paths(&params, &cfg, seed)
        };
        let naive = naive_limit(&paths);
        match mle_limit(&params, &paths, &cfg) {
            Ok(fit) => {
                let diag = diagnostics(&params, &paths, &fit, &naive, &cfg, stream_seed(seed, 1));
                Ok(RepOut {
                    rep,
                    seed,
                    paths_csv: limit_paths_csv(&paths, &fit, &naive),
                    diag_json: serde_json::to_string_pretty(&limit_diagnostics_json(
                        seed, &fit, &diag,
                    ))
                    .expect("serializable"),
                    converged: true,
                    iterations: fit.iterations,
                    residual: fit.residual,
                })
            }
            Err(CoreError::FixedPointDiverged {
                iterations,
                residual,
            }) => Ok(RepOut {
                rep,
                seed,
                paths_csv: String::new(),
                diag_json: serde_json::to_string_pretty(&json!({
                    "seed": seed,
                    "converged": false,
                    "iterations": iterations,
                    "residual": residual,
                }))
                .expect("serializable"),
                converged: false,
                iterations,
                residual,
            }),
            Err(e) => Err(core_err(e)),
        }
    });

    let mut failures = 0usize;
    let mut total_iterations = 0usize;
    let mut n_ok = 0usize;
    let mut results_ok = Vec::with_capacity(results.len());
    for r in results {
        results_ok.push(r?);
    }
    for out in &results_ok {
        if out.converged {
            n_ok += 1;
            total_iterations += out.iterations;
        } else {
            failures += 1;
            eprintln!(
                "replication {} (seed {}): no fixed point after {} iterations (residual {:.3e})",
                out.rep, out.seed, out.iterations, out.residual
            );
        }
    }
    for r in &results_ok {
        if r.converged {
            io::write_text(
                &args.out_dir.join(format!("paths_{:04}.csv", r.rep)),
                &r.paths_csv,
            )?;
        }
        io::write_text(
            &args.out_dir.join(format!("diagnostics_{:04}.json", r.rep)),
            &r.diag_json,
        )?;
    }
    let summary = json!({
        "reps": args.reps,
        "converged": n_ok,
        "failures": failures,
        "mean_iterations": if n_ok > 0 { total_iterations as f64 / n_ok as f64 } else { f64::NAN },
        "seed": args.seed,
        "zero_noise": args.zero_noise,
    });
    io::write_text(
        &args.out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    eprintln!(
        "{n_ok}/{} replications converged ({failures} failures)",
        args.reps
    );
    if n_ok == 0 {
        return Err(CliError::NonConvergence(
            "no replication reached a fixed point".into(),
        ));
    }
    Ok(())
}
