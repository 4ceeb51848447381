//! Time integration of the controlled stochastic NLS
//!
//! ```text
//! du = -i A u dt - lambda Psi^R(||u||) f(u) dt + g(t, u) h dt + sqrt(eps) g(t, u) dW
//! ```
//!
//! by Lie splitting: an explicit Euler-Maruyama substep for the nonlinear
//! drift, control and noise (all evaluated at the pre-step state), followed
//! by the exact linear flow `c_k -> exp(-i (k pi)^2 dt) c_k`.

use std::io::{self, Write};
use std::ops::ControlFlow;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{diffusion_of_embedded, same_space, sample_brownian, CovarianceSpec, DiffusionSpec, H0Vector};
use crate::seed::rng_from_seed;
use crate::spectral::{Grid, NormKind, SpectralField};

/// Uniform grid `t_j = j * t_end / n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::param("t_end", "must be finite and positive"));
        }
        if n_steps == 0 {
            return Err(Error::param("n_steps", "must be positive"));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// `t_j`; exact at both ends.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.t_end
        } else {
            self.t_end * j as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|j| self.time(j)).collect()
    }
}

/// Piecewise-constant control `h(t) = values[j]` on `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    values: Vec<H0Vector>,
    budget: f64,
}

impl Control {
    /// A member of `S_M`: checks `sum_j ||h_j||^2 dt <= M` (up to 1e-9).
    pub fn new(values: Vec<H0Vector>, budget: f64, time: &TimeGrid) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(Error::param("budget", "must be positive"));
        }
        let control = Control { values, budget };
        control.check_grid(time)?;
        let energy = control.energy(time.dt());
        if energy > budget + 1e-9 {
            return Err(Error::BudgetExceeded { energy, budget });
        }
        Ok(control)
    }

    /// A control without an energy cap (`M = +inf`).
    pub fn unbounded(values: Vec<H0Vector>) -> Self {
        Control {
            values,
            budget: f64::INFINITY,
        }
    }

    pub fn zero(cov: &Arc<CovarianceSpec>, n_steps: usize) -> Self {
        Control::unbounded(vec![H0Vector::zeros(cov); n_steps])
    }

    /// Same value on every step.
    pub fn constant(h: H0Vector, n_steps: usize) -> Self {
        Control::unbounded(vec![h; n_steps])
    }

    pub fn values(&self) -> &[H0Vector] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `int_0^T ||h||_{H_0}^2 dt`.
    pub fn energy(&self, dt: f64) -> f64 {
        self.values.iter().map(|h| h.norm_sq()).sum::<f64>() * dt
    }

    pub fn in_budget(&self, budget: f64, dt: f64) -> bool {
        self.energy(dt) <= budget + 1e-9
    }

    pub fn check_grid(&self, time: &TimeGrid) -> Result<()> {
        if self.values.len() != time.n_steps() {
            return Err(Error::LengthMismatch {
                expected: time.n_steps(),
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// CSV table `step,mode,re,im`, one row per (step, mode).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,mode,re,im")?;
        for (j, h) in self.values.iter().enumerate() {
            for (k, c) in h.coords().iter().enumerate() {
                writeln!(w, "{},{},{},{}", j, k + 1, c.re, c.im)?;
            }
        }
        Ok(())
    }
}

/// Model parameters: damping `lambda`, power `sigma`, noise scale
/// `epsilon`, optional truncation level `R` and initial datum.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams {
    pub lambda: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub truncation_r: Option<u32>,
    pub u0: SpectralField,
}

impl SdeParams {
    pub fn new(lambda: f64, sigma: f64, epsilon: f64, truncation_r: Option<u32>, u0: SpectralField) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", "must be finite and non-negative"));
        }
        if !(sigma >= 1.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", "must be finite and at least 1"));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::param("epsilon", "must lie in [0, 1]"));
        }
        if truncation_r == Some(0) {
            return Err(Error::param("truncation_r", "must be a positive integer"));
        }
        if !u0.is_finite() {
            return Err(Error::param("u0", "must be finite"));
        }
        u0.grid().check_dealiasing(sigma)?;
        Ok(SdeParams {
            lambda,
            sigma,
            epsilon,
            truncation_r,
            u0,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        SdeParams::new(self.lambda, self.sigma, epsilon, self.truncation_r, self.u0.clone())
    }

    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }
}

/// `Psi^R(r)`: 1 on `[0, R]`, `R + 1 - r` on `(R, R + 1)`, 0 beyond.
pub fn truncation_psi(r: f64, big_r: u32) -> f64 {
    let rr = big_r as f64;
    if r <= rr {
        1.0
    } else if r < rr + 1.0 {
        rr + 1.0 - r
    } else {
        0.0
    }
}

/// Derivative of `Psi^R` (taken as 0 at the two kinks).
pub(crate) fn truncation_psi_slope(r: f64, big_r: u32) -> f64 {
    let rr = big_r as f64;
    if r > rr && r < rr + 1.0 {
        -1.0
    } else {
        0.0
    }
}

/// A sample path with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub fields: Vec<SpectralField>,
    pub time: TimeGrid,
    pub seed: Option<u64>,
    pub params: SdeParams,
    /// `||u(t_j)||^2`.
    pub mass: Vec<f64>,
    /// `||u(t_j)||_V`.
    pub v_norm: Vec<f64>,
}

impl PathRecord {
    pub fn final_field(&self) -> &SpectralField {
        self.fields.last().expect("a path always holds u0")
    }

    pub fn times(&self) -> Vec<f64> {
        self.time.times()
    }

    /// Left-endpoint quadrature of `int_0^T ||u||_V^p dt`.
    pub fn v_norm_lp(&self, p: f64) -> f64 {
        let dt = self.time.dt();
        self.v_norm[..self.time.n_steps()]
            .iter()
            .map(|v| v.powf(p))
            .sum::<f64>()
            * dt
    }

    /// Coefficient table: `step,t,re_1,im_1,...,re_n,im_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.params.grid().n_modes();
        write!(w, "step,t")?;
        for k in 1..=n {
            write!(w, ",re_{k},im_{k}")?;
        }
        writeln!(w)?;
        for (j, f) in self.fields.iter().enumerate() {
            write!(w, "{},{}", j, self.time.time(j))?;
            for c in f.coeffs() {
                write!(w, ",{},{}", c.re, c.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Diagnostics table: `step,t,mass,v_norm`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,t,mass,v_norm")?;
        for j in 0..self.fields.len() {
            writeln!(w, "{},{},{},{}", j, self.time.time(j), self.mass[j], self.v_norm[j])?;
        }
        Ok(())
    }

    /// Manifest fragment: parameters, seed and grids.
    pub fn manifest(&self) -> serde_json::Value {
        let g = self.params.grid();
        serde_json::json!({
            "seed": self.seed,
            "lambda": self.params.lambda,
            "sigma": self.params.sigma,
            "epsilon": self.params.epsilon,
            "truncation_r": self.params.truncation_r,
            "u0": self.params.u0,
            "n_modes": g.n_modes(),
            "n_phys": g.n_phys(),
            "t_end": self.time.t_end(),
            "n_steps": self.time.n_steps(),
        })
    }
}

/// The controlled equation: parameters, diffusion and covariance.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    pub params: SdeParams,
    pub diffusion: DiffusionSpec,
    pub cov: Arc<CovarianceSpec>,
}

/// Per-`dt` cache of the exact linear propagator.
pub(crate) struct LinearFlow {
    phases: Vec<Complex64>,
}

impl LinearFlow {
    pub(crate) fn new(grid: &Grid, dt: f64) -> Self {
        let phases = (1..=grid.n_modes())
            .map(|k| Complex64::from_polar(1.0, -grid.eigenvalue(k) * dt))
            .collect();
        LinearFlow { phases }
    }

    pub(crate) fn apply(&self, u: &mut SpectralField) {
        for (c, p) in u.coeffs_mut().iter_mut().zip(&self.phases) {
            *c *= p;
        }
    }

    /// Adjoint (inverse) of the unitary propagator.
    pub(crate) fn apply_adjoint(&self, u: &mut SpectralField) {
        for (c, p) in u.coeffs_mut().iter_mut().zip(&self.phases) {
            *c *= p.conj();
        }
    }
}

impl SdeSystem {
    pub fn new(params: SdeParams, diffusion: DiffusionSpec, cov: Arc<CovarianceSpec>) -> Result<Self> {
        if cov.n_modes() != params.grid().n_modes() {
            return Err(Error::CovarianceMismatch);
        }
        Ok(SdeSystem { params, diffusion, cov })
    }

    pub fn grid(&self) -> &Grid {
        self.params.grid()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Ok(SdeSystem {
            params: self.params.with_epsilon(epsilon)?,
            diffusion: self.diffusion,
            cov: Arc::clone(&self.cov),
        })
    }

    pub fn with_u0(&self, u0: SpectralField) -> Result<Self> {
        let p = &self.params;
        SdeSystem::new(
            SdeParams::new(p.lambda, p.sigma, p.epsilon, p.truncation_r, u0)?,
            self.diffusion,
            Arc::clone(&self.cov),
        )
    }

    fn check_control(&self, h: &H0Vector) -> Result<()> {
        if same_space(h.covariance(), &self.cov) {
            Ok(())
        } else {
            Err(Error::CovarianceMismatch)
        }
    }

    /// `-lambda Psi^R(||u||) f(u)`, or `None` when it vanishes identically.
    pub(crate) fn nonlinear_drift(&self, u: &SpectralField) -> Option<SpectralField> {
        let p = &self.params;
        if p.lambda == 0.0 {
            return None;
        }
        let psi = p.truncation_r.map_or(1.0, |r| truncation_psi(u.norm(NormKind::H), r));
        if psi == 0.0 {
            return None;
        }
        Some(&u.nonlinearity(p.sigma) * (-p.lambda * psi))
    }

    /// Euler-Maruyama substep `u + dt [drift + g h] + sqrt(eps) g dW`
    /// (no linear flow). `dw` holds Brownian increments in `H_0` coordinates.
    pub(crate) fn euler_substep(
        &self,
        u: &SpectralField,
        t: f64,
        dt: f64,
        h: Option<&H0Vector>,
        dw: Option<&H0Vector>,
    ) -> Result<SpectralField> {
        let mut next = u.clone();
        if let Some(drift) = self.nonlinear_drift(u) {
            next.axpy(Complex64::new(dt, 0.0), &drift);
        }
        let grid = u.grid();
        if let Some(h) = h.filter(|h| !h.is_zero()) {
            self.check_control(h)?;
            let gh = diffusion_of_embedded(&self.diffusion, u, &h.embed(grid)?);
            next.axpy(Complex64::new(dt, 0.0), &gh);
        }
        if let Some(dw) = dw {
            let gw = diffusion_of_embedded(&self.diffusion, u, &dw.embed(grid)?);
            next.axpy(Complex64::new(self.params.epsilon.sqrt(), 0.0), &gw);
        }
        let _ = t;
        Ok(next)
    }

    /// One Lie-splitting step from `t` to `t + dt`. Noise is drawn from
    /// `rng` only when `epsilon > 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_controlled<R: Rng + ?Sized>(
        &self,
        step: usize,
        u: &SpectralField,
        t: f64,
        dt: f64,
        h: Option<&H0Vector>,
        rng: &mut R,
    ) -> Result<SpectralField> {
        let dw = (self.params.epsilon > 0.0).then(|| sample_brownian(&self.cov, dt, rng));
        let mut next = self.euler_substep(u, t, dt, h, dw.as_ref())?;
        LinearFlow::new(u.grid(), dt).apply(&mut next);
        if !next.is_finite() {
            return Err(Error::IntegrationBlowup { step, time: t + dt });
        }
        Ok(next)
    }

    /// Streaming integration: `observe(j, u_j)` is called for `j = 0..=n_steps`
    /// and may stop the run early by returning `Break`.
    pub fn integrate<F>(
        &self,
        control: Option<&Control>,
        time: &TimeGrid,
        seed: Option<u64>,
        mut observe: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &SpectralField) -> ControlFlow<()>,
    {
        if let Some(c) = control {
            c.check_grid(time)?;
        }
        let noisy = self.params.epsilon > 0.0;
        let mut rng = match (noisy, seed) {
            (true, Some(s)) => Some(rng_from_seed(s)),
            (true, None) => return Err(Error::param("seed", "required when epsilon > 0")),
            (false, _) => None,
        };
        let dt = time.dt();
        let flow = LinearFlow::new(self.grid(), dt);
        let mut u = self.params.u0.clone();
        if observe(0, &u).is_break() {
            return Ok(());
        }
        for j in 0..time.n_steps() {
            let t = time.time(j);
            let h = control.map(|c| &c.values()[j]);
            let dw = rng.as_mut().map(|r| sample_brownian(&self.cov, dt, r));
            let mut next = self.euler_substep(&u, t, dt, h, dw.as_ref())?;
            flow.apply(&mut next);
            if !next.is_finite() {
                return Err(Error::IntegrationBlowup {
                    step: j + 1,
                    time: time.time(j + 1),
                });
            }
            u = next;
            if observe(j + 1, &u).is_break() {
                break;
            }
        }
        Ok(())
    }

    /// Full sample path of the controlled equation.
    pub fn simulate_path(&self, control: Option<&Control>, time: &TimeGrid, seed: u64) -> Result<PathRecord> {
        let mut rec = PathRecord {
            fields: Vec::with_capacity(time.n_steps() + 1),
            time: *time,
            seed: Some(seed),
            params: self.params.clone(),
            mass: Vec::with_capacity(time.n_steps() + 1),
            v_norm: Vec::with_capacity(time.n_steps() + 1),
        };
        self.integrate(control, time, Some(seed), |_, u| {
            rec.mass.push(u.mass());
            rec.v_norm.push(u.norm(NormKind::V));
            rec.fields.push(u.clone());
            ControlFlow::Continue(())
        })?;
        Ok(rec)
    }

    /// Skeleton equation: the same discrete map with the noise removed.
    pub fn solve_skeleton(&self, control: &Control, time: &TimeGrid) -> Result<PathRecord> {
        if self.params.epsilon != 0.0 {
            return Err(Error::param("epsilon", "the skeleton equation requires epsilon = 0"));
        }
        let mut rec = PathRecord {
            fields: Vec::with_capacity(time.n_steps() + 1),
            time: *time,
            seed: None,
            params: self.params.clone(),
            mass: Vec::with_capacity(time.n_steps() + 1),
            v_norm: Vec::with_capacity(time.n_steps() + 1),
        };
        self.integrate(Some(control), time, None, |_, u| {
            rec.mass.push(u.mass());
            rec.v_norm.push(u.norm(NormKind::V));
            rec.fields.push(u.clone());
            ControlFlow::Continue(())
        })?;
        Ok(rec)
    }

    /// Drift of the `m`-dimensional Galerkin system with truncation:
    /// `pi_m [-i A u - lambda Psi^R(||u||) f(u) + g(t, u) h]` at `pi_m u`.
    pub fn galerkin_rhs(&self, u: &SpectralField, t: f64, h: &H0Vector, m: usize) -> Result<SpectralField> {
        let um = u.project(m)?;
        let mut rhs = &um.apply_a() * Complex64::new(0.0, -1.0);
        if let Some(drift) = self.nonlinear_drift(&um) {
            rhs.axpy(Complex64::new(1.0, 0.0), &drift.project(m)?);
        }
        if !h.is_zero() {
            self.check_control(h)?;
            let gh = diffusion_of_embedded(&self.diffusion, &um, &h.embed(u.grid())?);
            rhs.axpy(Complex64::new(1.0, 0.0), &gh);
        }
        let _ = t;
        rhs.project(m)
    }
}
