//! Rate functional `I(v) = 1/2 inf { int ||h||_{H_0}^2 : v = G(int h) }` and
//! approximate minimum-action controls.
//!
//! Target sets are imposed with a quadratic penalty whose weight is
//! escalated geometrically. Gradients come either from central finite
//! differences or from the discrete adjoint of the skeleton map; the
//! adjoint is used only after it agrees with finite differences at a probe
//! point.

mod gradient;
mod optimizer;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, SdeSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::seed::derive_rng;
use crate::spectral::SpectralField;

use gradient::{pack, relative_difference, unpack, Penalized};
use optimizer::{minimize, LbfgsSettings};

/// Target event for the skeleton path.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// `sup_t ||u(t)||^2 >= r`, i.e. the path leaves the ball of radius `r`.
    BallExterior { r: f64 },
    /// `||u(T) - target|| <= tol`.
    EndpointMatch { target: SpectralField, tol: f64 },
    /// `sup_t ||u(t)||^2 <= r`, the path stays inside.
    BallInterior { r: f64 },
}

impl TargetSpec {
    fn validate(&self) -> Result<()> {
        match self {
            TargetSpec::BallExterior { r } | TargetSpec::BallInterior { r } if !(*r > 0.0) => {
                Err(Error::param("r", "must be positive"))
            }
            TargetSpec::EndpointMatch { tol, .. } if !(*tol > 0.0) => Err(Error::param("tol", "must be positive")),
            _ => Ok(()),
        }
    }

    /// Violation of the target by a path:
    /// exterior `max(0, r - sup ||u||^2)`, interior `max(0, sup ||u||^2 - r)`,
    /// endpoint `max(0, ||u(T) - v_T|| - tol)`.
    pub fn violation(&self, states: &[SpectralField]) -> f64 {
        gradient::violation_and_gradient(self, states, None).0
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            TargetSpec::BallExterior { r } | TargetSpec::BallInterior { r } => Some(*r),
            TargetSpec::EndpointMatch { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    FiniteDifference,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub gradient: GradientMethod,
    pub max_iters_per_round: usize,
    pub penalty_rounds: usize,
    pub penalty_growth: f64,
    /// A round ends the escalation once the violation is at most this.
    pub residual_tol: f64,
    pub grad_tol: f64,
    pub fd_step: f64,
    /// Relative agreement required between adjoint and finite differences.
    pub gradient_check_tol: f64,
    pub lbfgs_memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            gradient: GradientMethod::Adjoint,
            max_iters_per_round: 400,
            penalty_rounds: 5,
            penalty_growth: 10.0,
            residual_tol: 1e-6,
            grad_tol: 1e-9,
            fd_step: 1e-6,
            gradient_check_tol: 1e-4,
            lbfgs_memory: 12,
        }
    }
}

/// `inf_h J(h)` over piecewise-constant controls carried by the first
/// `control_dim` coordinates of `H_0`.
#[derive(Debug, Clone)]
pub struct ActionProblem {
    pub system: SdeSystem,
    pub time: TimeGrid,
    pub target: TargetSpec,
    pub penalty_weight: f64,
    pub control_dim: usize,
    /// Energy cap `M` applied when exporting the control; `None` means uncapped.
    pub budget: Option<f64>,
    pub options: OptimizerOptions,
}

impl ActionProblem {
    /// The noise scale of `system` is ignored (set to zero).
    pub fn new(
        system: &SdeSystem,
        time: TimeGrid,
        target: TargetSpec,
        penalty_weight: f64,
        control_dim: usize,
    ) -> Result<Self> {
        let problem = ActionProblem {
            system: system.with_epsilon(0.0)?,
            time,
            target,
            penalty_weight,
            control_dim,
            budget: None,
            options: OptimizerOptions::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_options(mut self, options: OptimizerOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = Some(budget);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.penalty_weight > 0.0) {
            return Err(Error::param("penalty_weight", "must be positive"));
        }
        if self.control_dim == 0 || self.control_dim > self.system.grid().n_modes() {
            return Err(Error::param("control_dim", "must lie in 1..=n_modes"));
        }
        if let TargetSpec::EndpointMatch { target, .. } = &self.target {
            if target.grid() != self.system.grid() {
                return Err(Error::GridMismatch);
            }
        }
        self.target.validate()
    }

    pub fn n_params(&self) -> usize {
        2 * self.control_dim * self.time.n_steps()
    }

    fn penalized(&self, weight: f64, use_adjoint: bool) -> Penalized<'_> {
        self.penalized_at(weight, use_adjoint, None)
    }

    fn penalized_at(&self, weight: f64, use_adjoint: bool, exit_at: Option<usize>) -> Penalized<'_> {
        Penalized {
            problem: self,
            weight,
            use_adjoint,
            fd_step: self.options.fd_step,
            exit_at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActionResult {
    pub h_star: Control,
    pub action_value: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub penalty_weight: f64,
    pub gradient_used: GradientMethod,
    /// Adjoint-vs-finite-difference relative error at the probe point.
    pub gradient_check: Option<f64>,
    /// `false` when a budget was set and `h_star` exceeds it.
    pub within_budget: bool,
}

#[derive(Serialize)]
struct ActionSummary {
    action_value: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
    penalty_weight: f64,
    gradient_used: GradientMethod,
    gradient_check: Option<f64>,
    within_budget: bool,
}

impl ActionResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(ActionSummary {
            action_value: self.action_value,
            residual: self.constraint_residual,
            iterations: self.iterations,
            converged: self.converged,
            penalty_weight: self.penalty_weight,
            gradient_used: self.gradient_used,
            gradient_check: self.gradient_check,
            within_budget: self.within_budget,
        })
        .expect("plain data serializes")
    }
}

/// `1/2 sum_j ||h_j||_{H_0}^2 dt`.
pub fn action_of_control(h: &Control, time: &TimeGrid) -> f64 {
    0.5 * h.energy(time.dt())
}

/// Adjoint and finite-difference gradients of the penalized objective at
/// the control `h`.
pub fn gradient_pair(problem: &ActionProblem, h: &Control, weight: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    h.check_grid(&problem.time)?;
    let x = pack(problem, h);
    let obj = problem.penalized(weight, true);
    let ev = obj.evaluate(&x)?;
    Ok((obj.adjoint_gradient(&ev), obj.fd_gradient(&x)?))
}

/// Relative error `||g_adj - g_fd|| / ||g_fd||` at `h`.
pub fn gradient_check(problem: &ActionProblem, h: &Control, weight: f64) -> Result<f64> {
    let (a, f) = gradient_pair(problem, h, weight)?;
    Ok(relative_difference(&a, &f))
}

/// Minimize the penalized action starting from `h = 0`.
///
/// For an exterior target the supremum over time makes the penalty
/// nonsmooth, and descent tends to lock onto whichever step is currently
/// the argmax. The problem is therefore solved once per candidate exit
/// step (see `exit_candidates`) and the cheapest feasible run is kept.
pub fn minimize_action(problem: &ActionProblem) -> Result<ActionResult> {
    minimize_action_from(problem, vec![0.0; problem.n_params()])
}

fn probe_point(problem: &ActionProblem, x0: &[f64]) -> Vec<f64> {
    let mut rng = derive_rng(0x5eed, "gradient-probe", 0);
    x0.iter()
        .map(|v| v + 1e-2 * rng.sample::<f64, _>(StandardNormal))
        .take(problem.n_params())
        .collect()
}

fn minimize_action_from(problem: &ActionProblem, x0: Vec<f64>) -> Result<ActionResult> {
    problem.validate()?;
    let opts = &problem.options;

    let (use_adjoint, gradient_check) = match opts.gradient {
        GradientMethod::FiniteDifference => (false, None),
        GradientMethod::Adjoint => {
            let probe = probe_point(problem, &x0);
            let obj = problem.penalized(problem.penalty_weight, true);
            let ev = obj.evaluate(&probe)?;
            let rel = relative_difference(&obj.adjoint_gradient(&ev), &obj.fd_gradient(&probe)?);
            (rel <= opts.gradient_check_tol, Some(rel))
        }
    };

    let exit_times = match problem.target {
        TargetSpec::BallExterior { r } if problem.system.params.u0.mass() < r => {
            exit_candidates(problem.time.n_steps())
        }
        _ => vec![None],
    };
    let runs: Vec<PenaltyRun> = exit_times
        .par_iter()
        .map(|&j| penalty_rounds(problem, x0.clone(), use_adjoint, j))
        .collect::<Result<_>>()?;
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let tol = opts.residual_tol;
    let best = runs
        .into_iter()
        .min_by(|a, b| {
            let key = |r: &PenaltyRun| (r.residual > tol, if r.residual > tol { r.residual } else { r.action });
            key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one run");
    let x = best.x;
    let weight = best.weight;
    let converged = best.converged;
    let residual = problem.penalized(weight, use_adjoint).evaluate(&x)?.violation;

    let control = unpack(problem, &x);
    let action_value = action_of_control(&control, &problem.time);
    let within_budget = problem.budget.is_none_or(|m| control.in_budget(m, problem.time.dt()));
    let h_star = match problem.budget {
        Some(m) if within_budget => Control::new(control.values().to_vec(), m, &problem.time)?,
        _ => control,
    };
    Ok(ActionResult {
        h_star,
        action_value,
        constraint_residual: residual,
        iterations,
        converged,
        penalty_weight: weight,
        gradient_used: if use_adjoint {
            GradientMethod::Adjoint
        } else {
            GradientMethod::FiniteDifference
        },
        gradient_check,
        within_budget,
    })
}

struct PenaltyRun {
    x: Vec<f64>,
    action: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
    weight: f64,
}

/// Penalty escalation from `x0`, with the exterior violation optionally
/// pinned to the state at step `exit_at`.
fn penalty_rounds(
    problem: &ActionProblem,
    x0: Vec<f64>,
    use_adjoint: bool,
    exit_at: Option<usize>,
) -> Result<PenaltyRun> {
    let opts = &problem.options;
    let settings = LbfgsSettings {
        memory: opts.lbfgs_memory,
        max_iters: opts.max_iters_per_round,
        grad_tol: opts.grad_tol,
        f_tol: 1e-14,
    };
    let mut weight = problem.penalty_weight;
    let mut x = x0;
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for round in 0..opts.penalty_rounds.max(1) {
        let obj = problem.penalized_at(weight, use_adjoint, exit_at);
        let out = minimize(&obj, x, settings)?;
        iterations += out.iterations;
        x = out.x;
        residual = obj.evaluate(&x)?.violation;
        if residual <= opts.residual_tol {
            converged = out.converged;
            break;
        }
        if round + 1 < opts.penalty_rounds {
            weight *= opts.penalty_growth;
        }
    }
    let action = action_of_control(&unpack(problem, &x), &problem.time);
    Ok(PenaltyRun {
        x,
        action,
        residual,
        iterations,
        converged,
        weight,
    })
}

/// Candidate exit steps for the exterior target: every step on short
/// grids, an even subset of 32 ending at the horizon otherwise.
fn exit_candidates(n_steps: usize) -> Vec<Option<usize>> {
    let m = n_steps.min(32);
    (1..=m).map(|i| Some(i * n_steps / m)).collect()
}

#[derive(Debug, Clone)]
pub struct RestartReport {
    pub best: ActionResult,
    pub values: Vec<f64>,
    /// Restarts disagree by more than 5% of the smallest value.
    pub multimodal: bool,
}

/// Run `n_restarts` minimizations from random perturbations of `h = 0`.
pub fn minimize_with_restarts(
    problem: &ActionProblem,
    n_restarts: usize,
    scale: f64,
    seed: u64,
) -> Result<RestartReport> {
    if n_restarts == 0 {
        return Err(Error::param("n_restarts", "must be positive"));
    }
    let results: Vec<ActionResult> = (0..n_restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "action-restart", i as u64);
            let x0 = (0..problem.n_params())
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            minimize_action_from(problem, x0)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.action_value).collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let multimodal = hi - lo > 0.05 * lo.max(1e-12);
    let best = results
        .into_iter()
        .min_by(|a, b| {
            let key = |r: &ActionResult| (r.constraint_residual > RESTART_FEASIBLE, r.action_value);
            key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one restart");
    Ok(RestartReport {
        best,
        values,
        multimodal,
    })
}

const RESTART_FEASIBLE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeRow {
    pub r: f64,
    pub i_star: f64,
    pub residual: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Minimal actions indexed by exit radius, sorted by `r`.
pub fn rate_lower_envelope(problems: &[ActionProblem]) -> Result<Vec<EnvelopeRow>> {
    if let Some(first) = problems.first() {
        let p0 = &first.system.params;
        for p in problems {
            let q = &p.system.params;
            if q.lambda != p0.lambda || q.sigma != p0.sigma || q.u0 != p0.u0 || p.time != first.time {
                return Err(Error::param("problems", "must share model parameters and time grid"));
            }
            if p.target.radius().is_none() {
                return Err(Error::param("target", "envelope rows need a radius target"));
            }
        }
    }
    let mut rows: Vec<EnvelopeRow> = problems
        .par_iter()
        .map(|p| {
            let r = p.target.radius().expect("checked above");
            match minimize_action(p) {
                Ok(res) => EnvelopeRow {
                    r,
                    i_star: res.action_value,
                    residual: res.constraint_residual,
                    converged: res.converged,
                    error: None,
                },
                Err(e) => EnvelopeRow {
                    r,
                    i_star: f64::INFINITY,
                    residual: f64::INFINITY,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.r.total_cmp(&b.r));
    Ok(rows)
}

#[cfg(test)]
mod tests;
