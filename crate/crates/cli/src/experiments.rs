//! Experiment dispatch: config in, files and a manifest out.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use snls_core::action::{minimize_action, minimize_with_restarts, ActionProblem, TargetSpec};
use snls_core::diagnostics::{
    check_f_properties, check_g_conditions, empirical_moments, fractional_sobolev_parts, sobolev_w1p_norm, GConditions,
};
use snls_core::dynamics::{Control, PathRecord, SdeSystem, TimeGrid};
use snls_core::exit::{
    estimate_c_constant, estimate_exit_prob, mean_exit_bound, sandwich_row, BoundInputs, ExitEstimate, SandwichRow,
    ABORT_THRESHOLD,
};
use snls_core::seed::derive_seed;

use crate::config::{exit_config, ExitStudyConfig, Experiment, RunConfig};
use crate::error::CliError;
use crate::manifest::{Constants, OutputDir, RunManifest, MANIFEST_FILE, MANIFEST_VERSION};

/// Residual above which a ball-interior problem counts as infeasible.
const INTERIOR_FEASIBLE: f64 = 1e-3;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Takes precedence over the config and the environment.
    pub output_dir: Option<PathBuf>,
    /// Takes precedence over the config.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub dir: PathBuf,
    /// A sampled check failed (verify experiments).
    pub checks_failed: bool,
}

impl RunOutcome {
    pub fn exit_code(&self, allow_unreliable: bool) -> i32 {
        if self.checks_failed {
            2
        } else if self.manifest.unreliable && !allow_unreliable {
            3
        } else {
            0
        }
    }
}

/// Everything an experiment adds to the manifest.
#[derive(Debug, Default)]
struct Record {
    constants: Constants,
    seeds: BTreeMap<String, String>,
    findings: Vec<String>,
    unreliable: bool,
    checks_failed: bool,
}

impl Record {
    fn seed(&mut self, consumer: &str, tag: &str) {
        self.seeds
            .insert(consumer.into(), format!("derive_seed(master, \"{tag}\", index)"));
    }
}

/// Validate, run and persist one experiment.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let resolved = cfg.resolve(opts.output_dir.as_deref())?;
    let findings = resolved.findings();
    if !findings.is_empty() {
        return Err(CliError::Config(findings.join("; ")));
    }
    let workers = opts.workers.or(resolved.workers).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    let dir = resolved.output_dir();
    let mut out = OutputDir::create(&dir)?;
    let start = Instant::now();
    let record = pool.install(|| execute(&resolved, &mut out))?;
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: resolved,
        seeds: record.seeds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        workers: pool.current_num_threads(),
        constants: record.constants,
        unreliable: record.unreliable,
        findings: record.findings,
        outputs: out.into_outputs(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(RunOutcome {
        manifest,
        dir,
        checks_failed: record.checks_failed,
    })
}

/// Re-run the config embedded in a manifest.
pub fn rerun(manifest_path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let m = RunManifest::load(manifest_path)?;
    run(&m.config, opts)
}

fn execute(cfg: &RunConfig, out: &mut OutputDir) -> Result<Record, CliError> {
    let system = cfg.system()?;
    let grid = cfg.grid()?;
    let mut rec = Record::default();
    rec.seeds.insert("master".into(), cfg.seed.to_string());

    let g = check_g_conditions(
        &system.diffusion,
        &system.cov,
        &grid,
        cfg.constant_trials,
        cfg.seed,
        snls_core::diagnostics::DEFAULT_ENVELOPE,
    )
    .map_err(CliError::compute("noise constants"))?;
    rec.seed("noise_constants", "g-conditions");
    rec.constants = Constants {
        k1_declared: system.diffusion.k1,
        k1_measured: Some(g.k1_measured),
        k1_v_measured: Some(g.k1_v_measured),
        k2_declared: system.diffusion.k2,
        k2_measured: Some(g.k2_measured),
        trace_q: system.cov.trace(),
        ..Constants::default()
    };

    match &cfg.experiment {
        Experiment::Simulate { control } => {
            let time = cfg.time_grid()?;
            let h = control
                .as_ref()
                .map(|c| cfg.control(c, &system.cov, time.n_steps()))
                .transpose()?;
            let seed = derive_seed(cfg.seed, "simulate", 0);
            rec.seed("simulate", "simulate");
            let path = system
                .simulate_path(h.as_ref(), &time, seed)
                .map_err(CliError::compute("simulate"))?;
            write_path(out, &path)?;
            if let Some(h) = &h {
                out.write_with("control.csv", |w| h.write_csv(w))?;
            }
        }
        Experiment::Skeleton { control } => {
            let time = cfg.time_grid()?;
            let h = cfg.control(control, &system.cov, time.n_steps())?;
            skeleton(out, &system, &h, &time)?;
            out.write_with("control.csv", |w| h.write_csv(w))?;
        }
        Experiment::MinimizeAction {
            target,
            penalty_weight,
            control_dim,
            budget,
            restarts,
            restart_scale,
            optimizer,
        } => {
            let time = cfg.time_grid()?;
            let target = cfg.target(target, &system, &time)?;
            let mut problem = ActionProblem::new(&system, time, target, *penalty_weight, *control_dim)
                .map_err(CliError::compute("minimize_action"))?
                .with_options(*optimizer);
            if let Some(m) = budget {
                problem = problem.with_budget(*m);
            }
            let mut summary;
            let best = if *restarts > 0 {
                rec.seed("restarts", "action-restart");
                let rep = minimize_with_restarts(&problem, *restarts, *restart_scale, cfg.seed)
                    .map_err(CliError::compute("minimize_action"))?;
                summary = rep.best.summary_json();
                summary["restart_values"] = serde_json::json!(rep.values);
                summary["multimodal"] = serde_json::json!(rep.multimodal);
                if rep.multimodal {
                    rec.findings
                        .push("restarts disagree by more than 5%: landscape may be multimodal".into());
                }
                rep.best
            } else {
                let r = minimize_action(&problem).map_err(CliError::compute("minimize_action"))?;
                summary = r.summary_json();
                r
            };
            if !best.converged {
                rec.findings.push(format!(
                    "optimizer stopped before convergence (residual {})",
                    best.constraint_residual
                ));
            }
            if !best.within_budget {
                rec.findings.push("minimizing control exceeds the energy budget".into());
            }
            rec.constants.i_star = Some(best.action_value);
            out.write_json("action.json", &summary)?;
            out.write_with("h_star.csv", |w| best.h_star.write_csv(w))?;
            skeleton(out, &system, &best.h_star, &time)?;
        }
        Experiment::ExitStudy(ex) => exit_study(cfg, ex, &system, &g, out, &mut rec)?,
        Experiment::Verify {
            n_trials,
            envelope,
            moment_orders,
            moment_paths,
        } => {
            rec.seed("f_properties", "f-properties");
            let f = check_f_properties(&grid, system.params.sigma, *n_trials, cfg.seed, *envelope)
                .map_err(CliError::compute("verify"))?;
            let g_sampled = check_g_conditions(&system.diffusion, &system.cov, &grid, *n_trials, cfg.seed, *envelope)
                .map_err(CliError::compute("verify"))?;
            for r in f
                .iter()
                .chain(g_sampled.reports.iter().filter(|r| r.property_id != "g_growth_v"))
            {
                if !r.passed() {
                    rec.checks_failed = true;
                    rec.findings.push(format!(
                        "{}: {} of {} trials violated (worst margin {})",
                        r.property_id, r.n_violations, r.n_trials, r.worst_margin
                    ));
                }
            }
            out.write_json("f_properties.json", &f)?;
            out.write_json("g_conditions.json", &g_sampled)?;
            out.write_with("properties.csv", |w| {
                writeln!(w, "property_id,n_trials,n_violations,worst_margin,tolerance")?;
                for r in f.iter().chain(g_sampled.reports.iter()) {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        r.property_id, r.n_trials, r.n_violations, r.worst_margin, r.tolerance
                    )?;
                }
                Ok(())
            })?;
            if !moment_orders.is_empty() {
                rec.seed("moments", "moments");
                let time = cfg.time_grid()?;
                let rows = empirical_moments(&system, &time, moment_orders, *moment_paths, cfg.seed)
                    .map_err(CliError::compute("moments"))?;
                rec.unreliable |= rows.iter().any(|r| r.unreliable);
                out.write_with("moments.csv", |w| {
                    writeln!(w, "epsilon,p,sup_moment,sup_ci,v_integral,v_ci,n_paths,n_aborted")?;
                    for r in &rows {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{}",
                            r.epsilon, r.p, r.sup_moment, r.sup_ci, r.v_integral, r.v_ci, r.n_paths, r.n_aborted
                        )?;
                    }
                    Ok(())
                })?;
            }
        }
        Experiment::PathNorms {
            n_paths,
            alpha_list,
            p,
            norm,
        } => {
            rec.seed("path_norms", "path-norms");
            let time = cfg.time_grid()?;
            let rows: Vec<Option<Vec<[f64; 3]>>> = (0..*n_paths)
                .into_par_iter()
                .map(|i| {
                    let path = system
                        .simulate_path(None, &time, derive_seed(cfg.seed, "path-norms", i as u64))
                        .ok()?;
                    let mut v = Vec::with_capacity(alpha_list.len() + 1);
                    for &a in alpha_list {
                        let s = fractional_sobolev_parts(&path.fields, &time, a, *p, *norm).ok()?;
                        v.push([a, s.lp, s.seminorm]);
                    }
                    let s = sobolev_w1p_norm(&path.fields, &time, *p, *norm).ok()?;
                    v.push([1.0, s.lp, s.seminorm]);
                    Some(v)
                })
                .collect();
            let n_aborted = rows.iter().filter(|r| r.is_none()).count();
            if n_aborted as f64 > ABORT_THRESHOLD * *n_paths as f64 {
                rec.unreliable = true;
            }
            let mut order_breaks = 0;
            for v in rows.iter().flatten() {
                let mut sorted: Vec<&[f64; 3]> = v[..v.len() - 1].iter().collect();
                sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
                if sorted.windows(2).any(|w| w[1][1] + w[1][2] < w[0][1] + w[0][2]) {
                    order_breaks += 1;
                }
            }
            if order_breaks > 0 {
                rec.findings
                    .push(format!("{order_breaks} paths with norm not monotone in alpha"));
            }
            out.write_with("path_norms.csv", |w| {
                writeln!(w, "path,alpha,p,lp,seminorm,norm_p")?;
                for (i, r) in rows.iter().enumerate() {
                    for x in r.iter().flatten() {
                        writeln!(w, "{},{},{},{},{},{}", i, x[0], p, x[1], x[2], x[1] + x[2])?;
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(rec)
}

fn write_path(out: &mut OutputDir, path: &PathRecord) -> Result<(), CliError> {
    out.write_with("path.csv", |w| path.write_csv(w))?;
    out.write_with("diagnostics.csv", |w| path.write_diagnostics_csv(w))
}

fn skeleton(out: &mut OutputDir, system: &SdeSystem, h: &Control, time: &TimeGrid) -> Result<(), CliError> {
    let path = system
        .with_epsilon(0.0)
        .and_then(|s| s.solve_skeleton(h, time))
        .map_err(CliError::compute("skeleton"))?;
    out.write_with("skeleton.csv", |w| path.write_csv(w))?;
    out.write_with("diagnostics.csv", |w| path.write_diagnostics_csv(w))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn exit_study(
    cfg: &RunConfig,
    ex: &ExitStudyConfig,
    system: &SdeSystem,
    g: &GConditions,
    out: &mut OutputDir,
    rec: &mut Record,
) -> Result<(), CliError> {
    let k1 = ex.k1_override.unwrap_or(g.k1_measured);
    let ecfg = exit_config(ex, cfg.seed);
    ecfg.validate(k1)
        .map_err(|e| CliError::Config(format!("experiment (measured K1 = {k1}): {e}")))?;
    rec.seed("exit_paths", "exit");
    let estimates = estimate_exit_prob(&ecfg, system).map_err(CliError::compute("exit study"))?;
    let time = ecfg.time_grid().map_err(CliError::compute("exit study"))?;

    let c_hat: Vec<f64> = match ex.c_override {
        Some(c) => {
            rec.constants.c_hat = vec![c];
            vec![c; ex.epsilon_list.len()]
        }
        None => {
            rec.seed("c_constant", "c-constant");
            let mut v = Vec::new();
            for &eps in &ex.epsilon_list {
                let c = estimate_c_constant(system, eps, &time, ex.c_paths, cfg.seed)
                    .map_err(CliError::compute("C(T0, u0)"))?;
                rec.unreliable |= c.unreliable;
                v.push(c.value);
            }
            rec.constants.c_hat = v.clone();
            v
        }
    };

    let action_time = TimeGrid::new(ex.t0, ex.action_n_steps).map_err(CliError::compute("action grid"))?;
    let exit_problem = ActionProblem::new(
        system,
        action_time,
        TargetSpec::BallExterior { r: ex.r },
        ex.action_penalty,
        ex.action_control_dim,
    )
    .map_err(CliError::compute("I*"))?;
    let exit_action = minimize_action(&exit_problem).map_err(CliError::compute("I*"))?;
    let i_star = exit_action.action_value;
    if !exit_action.converged {
        rec.findings.push(format!(
            "I* optimizer did not converge (residual {})",
            exit_action.constraint_residual
        ));
    }
    rec.constants.i_star = Some(i_star);

    let u0_mass = system.params.u0.mass();
    let i_d1 = if u0_mass > ex.r {
        f64::INFINITY
    } else {
        let d1_time = TimeGrid::new(1.0, ex.action_n_steps).map_err(CliError::compute("action grid"))?;
        let stay = ActionProblem::new(
            system,
            d1_time,
            TargetSpec::BallInterior { r: ex.r },
            ex.action_penalty,
            ex.action_control_dim,
        )
        .map_err(CliError::compute("I over D1"))?;
        let res = minimize_action(&stay).map_err(CliError::compute("I over D1"))?;
        if res.constraint_residual > INTERIOR_FEASIBLE {
            f64::INFINITY
        } else {
            res.action_value
        }
    };
    rec.constants.i_d1 = Some(i_d1);

    let inputs = BoundInputs {
        i_star,
        delta: ex.delta,
        k1,
        t0: ex.t0,
        r: ex.r,
        u0_mass_sq: u0_mass,
    };
    let rows: Vec<(SandwichRow, &ExitEstimate)> = estimates
        .iter()
        .zip(&c_hat)
        .map(|(e, &c)| (sandwich_row(e, c, &inputs), e))
        .collect();
    rec.unreliable |= estimates.iter().any(|e| e.unreliable);

    let mut engaged = Vec::new();
    for (row, est) in &rows {
        if !row.lower_holds {
            rec.findings
                .push(format!("lower bound exceeds p_hat + 2 ci at epsilon = {}", row.epsilon));
        }
        if !row.upper_holds {
            rec.findings.push(format!(
                "p_hat - 2 ci exceeds the upper bound at epsilon = {}",
                row.epsilon
            ));
        }
        if row.upper_informative {
            engaged.push(row.epsilon.to_string());
        }
        if est.unreliable {
            rec.findings.push(format!(
                "{} of {} paths aborted at epsilon = {}",
                est.n_aborted, ex.n_paths, est.epsilon
            ));
        }
    }
    rec.findings.push(if engaged.is_empty() {
        "upper bound informative at no listed epsilon".into()
    } else {
        format!("upper bound informative at epsilon in [{}]", engaged.join(", "))
    });

    out.write_with("exit.csv", |w| {
        writeln!(
            w,
            "epsilon,p_hat,ci,lower_bound,upper_bound,C_hat,n_exited,n_censored,n_aborted"
        )?;
        for (row, est) in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                row.epsilon,
                row.p_hat,
                row.ci_halfwidth,
                row.lower_bound,
                fmt_opt(row.upper_bound),
                row.c_hat,
                est.n_exited,
                est.n_censored,
                est.n_aborted
            )?;
        }
        Ok(())
    })?;
    out.write_with("sandwich.csv", |w| {
        writeln!(
            w,
            "epsilon,lower_holds,upper_holds,upper_informative,mean_exit_censored,mean_exit_bound,mean_exit_holds"
        )?;
        for (row, est) in &rows {
            let bound = mean_exit_bound(i_d1, ex.delta, est.epsilon).ok();
            let holds = bound.is_none_or(|b| est.mean_exit_censored <= b);
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.epsilon,
                row.lower_holds,
                row.upper_holds,
                row.upper_informative,
                est.mean_exit_censored,
                fmt_opt(bound),
                holds
            )?;
        }
        Ok(())
    })?;
    out.write_with("h_exit.csv", |w| exit_action.h_star.write_csv(w))?;
    out.write_json("g_conditions.json", g)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
name = "tiny"
seed = 1
[model]
lambda = 1.0
sigma = 1.0
epsilon = 0.1
u0 = { kind = "zero" }
[grid]
n_modes = 4
t_end = 0.1
n_steps = 5
[noise]
gamma = 2.0
trace = 1.0
family = "additive"
amplitude = 1.0
[experiment]
kind = "simulate"
"#;

    #[test]
    fn exit_codes_follow_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml_str(TINY).unwrap();
        let opts = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            workers: Some(1),
        };
        let mut out = run(&cfg, &opts).unwrap();
        assert_eq!(out.exit_code(false), 0);
        out.manifest.unreliable = true;
        assert_eq!(out.exit_code(false), 3);
        assert_eq!(out.exit_code(true), 0);
        out.checks_failed = true;
        assert_eq!(out.exit_code(true), 2);
        let files: Vec<&str> = out.manifest.outputs.iter().map(|o| o.file.as_str()).collect();
        assert_eq!(files, ["path.csv", "diagnostics.csv"]);
    }
}
