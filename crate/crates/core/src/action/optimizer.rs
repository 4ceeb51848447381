//! Limited-memory BFGS with Armijo backtracking.
//!
//! Accepted iterates have non-increasing objective. Trial points whose
//! evaluation fails (integration blow-up) are treated as `+inf` and the
//! step is halved.

use std::collections::VecDeque;

use crate::error::Result;

pub(crate) trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `max |g_i| <= grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when the relative decrease stays below this for 3 iterations.
    pub f_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, s: LbfgsSettings) -> Result<Outcome> {
    let (mut f, mut g) = obj.value_and_gradient(&x0)?;
    let mut x = x0;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut stalls = 0;

    for it in 0..s.max_iters {
        if inf_norm(&g) <= s.grad_tol * f.abs().max(1.0) {
            return Ok(Outcome {
                x,
                iterations: it,
                converged: true,
            });
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (sv, yv, rho) in hist.iter().rev() {
            let a = rho * dot(sv, &d);
            d.iter_mut().zip(yv).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(sv, yv, _)| dot(sv, yv) / dot(yv, yv))
            .unwrap_or_else(|| 1.0 / inf_norm(&g).max(1e-300));
        d.iter_mut().for_each(|di| *di *= gamma);
        for ((sv, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &d);
            d.iter_mut().zip(sv).for_each(|(di, si)| *di += (a - b) * si);
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v / inf_norm(&g).max(1e-300)).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            match obj.value(&trial) {
                Ok(ft) if ft.is_finite() && ft <= f + 1e-4 * step * slope => {
                    accepted = Some(trial);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some(x_new) = accepted else {
            // No decrease along a descent direction: numerically stationary.
            let tiny = inf_norm(&g) <= 1e3 * s.grad_tol * f.abs().max(1.0);
            return Ok(Outcome {
                x,
                iterations: it,
                converged: tiny,
            });
        };

        let (f_new, g_new) = obj.value_and_gradient(&x_new)?;
        let sv: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() {
            if hist.len() == s.memory {
                hist.pop_front();
            }
            hist.push_back((sv, yv, 1.0 / sy));
        }

        let rel = (f - f_new) / f.abs().max(1.0);
        stalls = if rel < s.f_tol { stalls + 1 } else { 0 };
        x = x_new;
        f = f_new;
        g = g_new;
        if stalls >= 3 {
            return Ok(Outcome {
                x,
                iterations: it + 1,
                converged: true,
            });
        }
    }
    let converged = inf_norm(&g) <= s.grad_tol * f.abs().max(1.0);
    Ok(Outcome {
        x,
        iterations: s.max_iters,
        converged,
    })
}
