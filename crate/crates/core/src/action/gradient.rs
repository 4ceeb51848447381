//! Penalized action `J(h) = action(h) + w * violation(G(h))^2` on the
//! discretized skeleton map, with a discrete adjoint gradient and a central
//! finite-difference gradient.
//!
//! Controls are packed as real vectors: entry `((j * control_dim + k) * 2 + part)`
//! is the real (`part = 0`) or imaginary (`part = 1`) part of coordinate
//! `k + 1` on step `j`.

use std::ops::ControlFlow;

use num_complex::Complex64;

use super::optimizer::Objective;
use super::{ActionProblem, TargetSpec};
use crate::dynamics::{truncation_psi, truncation_psi_slope, Control, LinearFlow};
use crate::error::Result;
use crate::noise::{diffusion_adjoint_control, diffusion_adjoint_state, H0Vector};
use crate::spectral::{NormKind, SpectralField};

pub(crate) fn unpack(problem: &ActionProblem, x: &[f64]) -> Control {
    let cd = problem.control_dim;
    let cov = &problem.system.cov;
    let values = (0..problem.time.n_steps())
        .map(|j| {
            let mut h = H0Vector::zeros(cov);
            for k in 0..cd {
                let i = (j * cd + k) * 2;
                h.coords_mut()[k] = Complex64::new(x[i], x[i + 1]);
            }
            h
        })
        .collect();
    Control::unbounded(values)
}

pub(crate) fn pack(problem: &ActionProblem, control: &Control) -> Vec<f64> {
    let cd = problem.control_dim;
    let mut x = vec![0.0; problem.n_params()];
    for (j, h) in control.values().iter().enumerate() {
        for k in 0..cd {
            let i = (j * cd + k) * 2;
            x[i] = h.coords()[k].re;
            x[i + 1] = h.coords()[k].im;
        }
    }
    x
}

pub(crate) struct Evaluation {
    pub objective: f64,
    pub violation: f64,
    pub states: Vec<SpectralField>,
    pub control: Control,
}

/// Value of the violation and, when positive, the index of the state it
/// depends on together with its gradient there.
///
/// For the exterior target the initial state is handled separately: if it
/// is already outside the violation is zero, otherwise the supremum is
/// taken over the controlled states only. The value is unchanged but the
/// gradient no longer vanishes at `h = 0` when the mass decays.
/// `exit_at` pins the exterior violation to one state instead of the
/// supremum.
pub(crate) fn violation_and_gradient(
    target: &TargetSpec,
    states: &[SpectralField],
    exit_at: Option<usize>,
) -> (f64, Option<(usize, SpectralField)>) {
    let argmax_mass =
        |from: usize| {
            states.iter().enumerate().skip(from).map(|(j, u)| (j, u.mass())).fold(
                (from, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            )
        };
    match target {
        TargetSpec::BallExterior { r } => {
            if states[0].mass() >= *r {
                return (0.0, None);
            }
            let (j, s) = match exit_at {
                Some(j) => (j, states[j].mass()),
                None => argmax_mass(1.min(states.len() - 1)),
            };
            let v = (r - s).max(0.0);
            let grad = (v > 0.0).then(|| (j, &states[j] * -2.0));
            (v, grad)
        }
        TargetSpec::BallInterior { r } => {
            let (j, s) = argmax_mass(0);
            let v = (s - r).max(0.0);
            let grad = (v > 0.0).then(|| (j, &states[j] * 2.0));
            (v, grad)
        }
        TargetSpec::EndpointMatch { target, tol } => {
            let last = states.len() - 1;
            let d = &states[last] - target;
            let dist = d.norm(NormKind::H);
            let v = (dist - tol).max(0.0);
            let grad = (v > 0.0).then(|| (last, &d * (1.0 / dist)));
            (v, grad)
        }
    }
}

pub(crate) struct Penalized<'a> {
    pub problem: &'a ActionProblem,
    pub weight: f64,
    pub use_adjoint: bool,
    pub fd_step: f64,
    pub exit_at: Option<usize>,
}

impl Penalized<'_> {
    pub(crate) fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let p = self.problem;
        let control = unpack(p, x);
        let mut states = Vec::with_capacity(p.time.n_steps() + 1);
        p.system.integrate(Some(&control), &p.time, None, |_, u| {
            states.push(u.clone());
            ControlFlow::Continue(())
        })?;
        let action = super::action_of_control(&control, &p.time);
        let (violation, _) = violation_and_gradient(&p.target, &states, self.exit_at);
        Ok(Evaluation {
            objective: action + self.weight * violation * violation,
            violation,
            states,
            control,
        })
    }

    /// Discrete adjoint of the Lie-splitting skeleton map.
    pub(crate) fn adjoint_gradient(&self, ev: &Evaluation) -> Vec<f64> {
        let p = self.problem;
        let sys = &p.system;
        let params = &sys.params;
        let grid = sys.grid();
        let dt = p.time.dt();
        let flow = LinearFlow::new(grid, dt);
        let cd = p.control_dim;
        let n = p.time.n_steps();

        let (viol, vgrad) = violation_and_gradient(&p.target, &ev.states, self.exit_at);
        let seed_scale = 2.0 * self.weight * viol;
        let mut adj = SpectralField::zeros(grid);
        if let Some((j, g)) = &vgrad {
            if *j == n {
                adj.axpy(Complex64::new(seed_scale, 0.0), g);
            }
        }

        let mut grad = vec![0.0; p.n_params()];
        for j in (0..n).rev() {
            let mut q = adj;
            flow.apply_adjoint(&mut q);
            let u = &ev.states[j];
            let h = &ev.control.values()[j];

            let gh = diffusion_adjoint_control(&sys.diffusion, u, &q, &sys.cov);
            #[allow(clippy::needless_range_loop)]
            for k in 0..cd {
                let z = (gh[k] + h.coords()[k]) * dt;
                let i = (j * cd + k) * 2;
                grad[i] = z.re;
                grad[i + 1] = z.im;
            }

            let mut next = q.clone();
            if params.lambda > 0.0 {
                let norm = u.norm(NormKind::H);
                let (psi, slope) = match params.truncation_r {
                    Some(r) => (truncation_psi(norm, r), truncation_psi_slope(norm, r)),
                    None => (1.0, 0.0),
                };
                if psi != 0.0 {
                    let ja = u.nonlinearity_adjoint(params.sigma, &q);
                    next.axpy(Complex64::new(-dt * params.lambda * psi, 0.0), &ja);
                }
                if slope != 0.0 && norm > 0.0 {
                    let fq = u.nonlinearity(params.sigma).inner(&q).re;
                    next.axpy(Complex64::new(-dt * params.lambda * slope * fq / norm, 0.0), u);
                }
            }
            if !h.is_zero() {
                let w = h.embed(grid).expect("control built from the problem covariance");
                if let Some(back) = diffusion_adjoint_state(&sys.diffusion, &w, &q) {
                    next.axpy(Complex64::new(dt, 0.0), &back);
                }
            }
            if let Some((jv, g)) = &vgrad {
                if *jv == j {
                    next.axpy(Complex64::new(seed_scale, 0.0), g);
                }
            }
            adj = next;
        }
        grad
    }

    pub(crate) fn fd_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let eta = self.fd_step;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] = x[i] + eta;
                let fp = self.evaluate(&xp)?.objective;
                xp[i] = x[i] - eta;
                let fm = self.evaluate(&xp)?.objective;
                Ok((fp - fm) / (2.0 * eta))
            })
            .collect()
    }
}

impl Objective for Penalized<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?.objective)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ev = self.evaluate(x)?;
        let g = if self.use_adjoint {
            self.adjoint_gradient(&ev)
        } else {
            self.fd_gradient(x)?
        };
        Ok((ev.objective, g))
    }
}

/// `||a - b|| / ||b||` in the Euclidean norm.
pub(crate) fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}
