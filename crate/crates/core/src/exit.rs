//! Exit from the ball `{ ||u||^2 <= r }` before `T0`: Monte Carlo estimates
//! and the analytic bounds
//!
//! ```text
//! exp(-(I* + delta) / eps) <= P(tau <= T0)
//!     <= 2 sqrt(eps K1) C(T0, u0) / (r (1 - eps K1 T0) - ||u0||^2 - eps K1 T0)
//! E[tau] <= 1 / (1 - exp(-(I_D1 - delta) / eps))
//! ```
//!
//! with `C(T0, u0) = E[int_0^T0 (1 + ||u||^2) ||u||^2 ds]^{1/2}`.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PathRecord, SdeSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::stats::{mean_ci, proportion_ci};

/// Fraction of aborted paths above which an estimate is flagged.
pub const ABORT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitConfig {
    /// Exit radius for the mass `||u||^2`.
    pub r: f64,
    pub t0: f64,
    pub n_steps: usize,
    pub epsilon_list: Vec<f64>,
    pub n_paths: usize,
    pub delta: f64,
    pub seed: u64,
}

impl ExitConfig {
    /// Structural checks plus `eps < 1 / (K1 T0)` for every listed `eps`.
    pub fn validate(&self, k1: f64) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::param("r", "must be positive"));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::param("t0", "must be positive"));
        }
        if self.n_paths < 100 {
            return Err(Error::param("n_paths", "must be at least 100"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        if self.epsilon_list.is_empty() {
            return Err(Error::param("epsilon_list", "must not be empty"));
        }
        for &eps in &self.epsilon_list {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::param("epsilon_list", "entries must lie in [0, 1]"));
            }
            if eps * k1 * self.t0 >= 1.0 {
                return Err(Error::param(
                    "epsilon_list",
                    format!(
                        "epsilon = {eps} violates epsilon < 1 / (K1 T0) = {}",
                        1.0 / (k1 * self.t0)
                    ),
                ));
            }
        }
        TimeGrid::new(self.t0, self.n_steps).map(|_| ())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.n_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitEstimate {
    pub epsilon: f64,
    pub r: f64,
    pub p_hat: f64,
    /// 95% half-width; normal approximation, Wilson when `n_exited < 10`.
    pub ci_halfwidth: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean of `min(tau, T0)`: a lower estimate of `E[tau]`.
    pub mean_exit_censored: f64,
    pub n_exited: usize,
    pub n_censored: usize,
    pub n_aborted: usize,
    /// More than 1% of the paths aborted.
    pub unreliable: bool,
}

/// First recorded time with `||u||^2 > r`.
pub fn detect_exit(path: &PathRecord, r: f64) -> Option<f64> {
    detect_exit_in_series(&path.mass, &path.time, r)
}

/// [`detect_exit`] on a bare mass series `mass[j] = ||u(t_j)||^2`.
pub fn detect_exit_in_series(mass: &[f64], time: &TimeGrid, r: f64) -> Option<f64> {
    mass.iter().position(|&m| m > r).map(|j| time.time(j))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PathOutcome {
    Exited(f64),
    Censored,
    Aborted,
}

fn run_exit_path(system: &SdeSystem, time: &TimeGrid, r: f64, seed: u64) -> PathOutcome {
    let mut hit = None;
    let res = system.integrate(None, time, Some(seed), |j, u| {
        if u.mass() > r {
            hit = Some(time.time(j));
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    match (res, hit) {
        (Err(_), _) => PathOutcome::Aborted,
        (Ok(()), Some(t)) => PathOutcome::Exited(t),
        (Ok(()), None) => PathOutcome::Censored,
    }
}

/// Seed of path `i`. It does not depend on `eps` or `r`, so sweeps over
/// either use common random numbers.
pub fn exit_path_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, "exit", i as u64)
}

/// Monte Carlo estimate of `P(tau <= T0)` for each `eps` in the config.
/// The system's own noise level is replaced by each listed value.
pub fn estimate_exit_prob(cfg: &ExitConfig, system: &SdeSystem) -> Result<Vec<ExitEstimate>> {
    cfg.validate(0.0)?;
    let time = cfg.time_grid()?;
    cfg.epsilon_list
        .iter()
        .map(|&eps| {
            let sys = system.with_epsilon(eps)?;
            let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
                .into_par_iter()
                .map(|i| run_exit_path(&sys, &time, cfg.r, exit_path_seed(cfg.seed, i)))
                .collect();
            Ok(summarize(eps, cfg.r, cfg.t0, &outcomes))
        })
        .collect()
}

fn summarize(epsilon: f64, r: f64, t0: f64, outcomes: &[PathOutcome]) -> ExitEstimate {
    let mut n_exited = 0;
    let mut n_censored = 0;
    let mut n_aborted = 0;
    let mut stopped = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match *o {
            PathOutcome::Exited(t) => {
                n_exited += 1;
                stopped.push(t);
            }
            PathOutcome::Censored => {
                n_censored += 1;
                stopped.push(t0);
            }
            PathOutcome::Aborted => n_aborted += 1,
        }
    }
    let n_ok = outcomes.len() - n_aborted;
    let (p_hat, ci_halfwidth, ci_low, ci_high) = proportion_ci(n_exited, n_ok);
    let mean_exit_censored = if n_ok > 0 {
        stopped.iter().sum::<f64>() / n_ok as f64
    } else {
        f64::NAN
    };
    ExitEstimate {
        epsilon,
        r,
        p_hat,
        ci_halfwidth,
        ci_low,
        ci_high,
        mean_exit_censored,
        n_exited,
        n_censored,
        n_aborted,
        unreliable: n_aborted as f64 > ABORT_THRESHOLD * outcomes.len() as f64,
    }
}

/// `2 sqrt(eps K1) C / (r (1 - eps K1 T0) - ||u0||^2 - eps K1 T0)`.
///
/// The value may exceed one; callers clamp it for reporting.
pub fn theorem_upper_bound(epsilon: f64, k1: f64, t0: f64, r: f64, u0_mass_sq: f64, c: f64) -> Result<f64> {
    let ekt = epsilon * k1 * t0;
    if ekt >= 1.0 {
        return Err(Error::BoundInapplicable(format!(
            "epsilon K1 T0 = {ekt} is not below 1"
        )));
    }
    let denom = r * (1.0 - ekt) - u0_mass_sq - ekt;
    if denom <= 0.0 {
        return Err(Error::BoundInapplicable(format!(
            "denominator r(1 - eps K1 T0) - ||u0||^2 - eps K1 T0 = {denom} is not positive"
        )));
    }
    Ok(2.0 * (epsilon * k1).sqrt() * c / denom)
}

/// `exp(-(I* + delta) / eps)`; zero when `I*` is infinite.
pub fn ldp_lower_bound(i_star: f64, delta: f64, epsilon: f64) -> f64 {
    (-(i_star + delta) / epsilon).exp()
}

/// `1 / (1 - exp(-(I_D1 - delta) / eps))`; requires `I_D1 > delta`.
pub fn mean_exit_bound(i_d1: f64, delta: f64, epsilon: f64) -> Result<f64> {
    if !(i_d1 > delta) {
        return Err(Error::BoundInapplicable(format!(
            "inf over D1 of I = {i_d1} does not exceed delta = {delta}"
        )));
    }
    Ok(1.0 / (1.0 - (-(i_d1 - delta) / epsilon).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CEstimate {
    /// Monte Carlo estimate of `C(T0, u0)`.
    pub value: f64,
    /// Delta-method 95% half-width of `value`.
    pub ci_halfwidth: f64,
    pub n_aborted: usize,
    pub unreliable: bool,
}

/// Trapezoidal `int_0^T (1 + m) m ds` for a mass series on a uniform grid.
pub fn c_integrand(mass: &[f64], dt: f64) -> f64 {
    let n = mass.len();
    if n < 2 {
        return 0.0;
    }
    let q = |m: f64| (1.0 + m) * m;
    let inner: f64 = mass[1..n - 1].iter().map(|&m| q(m)).sum();
    dt * (0.5 * (q(mass[0]) + q(mass[n - 1])) + inner)
}

/// Seed of path `i` in [`estimate_c_constant`].
pub fn c_path_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, "c-constant", i as u64)
}

/// Monte Carlo estimate of `C(T0, u0)` at noise level `epsilon`.
pub fn estimate_c_constant(
    system: &SdeSystem,
    epsilon: f64,
    time: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CEstimate> {
    if n_paths < 100 {
        return Err(Error::param("n_paths", "must be at least 100"));
    }
    let sys = system.with_epsilon(epsilon)?;
    let dt = time.dt();
    let samples: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut mass = Vec::with_capacity(time.n_steps() + 1);
            sys.integrate(None, time, Some(c_path_seed(seed, i)), |_, u| {
                mass.push(u.mass());
                ControlFlow::Continue(())
            })
            .ok()
            .map(|()| c_integrand(&mass, dt))
        })
        .collect();
    let ok: Vec<f64> = samples.iter().flatten().copied().collect();
    let n_aborted = n_paths - ok.len();
    if ok.is_empty() {
        return Err(Error::param("n_paths", "every path aborted"));
    }
    let (mean, half) = mean_ci(&ok);
    let value = mean.sqrt();
    let ci_halfwidth = if value > 0.0 { half / (2.0 * value) } else { half.sqrt() };
    Ok(CEstimate {
        value,
        ci_halfwidth,
        n_aborted,
        unreliable: n_aborted as f64 > ABORT_THRESHOLD * n_paths as f64,
    })
}

/// One line of the bound comparison at a given noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    pub epsilon: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub lower_bound: f64,
    /// Unclamped upper bound, absent when inapplicable.
    pub upper_bound: Option<f64>,
    pub c_hat: f64,
    /// `lower <= p_hat + 2 ci`.
    pub lower_holds: bool,
    /// `p_hat - 2 ci <= min(1, upper)`; true when the bound is inapplicable.
    pub upper_holds: bool,
    /// The upper bound is applicable and below one.
    pub upper_informative: bool,
    pub note: Option<String>,
}

/// Inputs to the bound comparison that do not come from the Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub i_star: f64,
    pub delta: f64,
    pub k1: f64,
    pub t0: f64,
    pub r: f64,
    pub u0_mass_sq: f64,
}

pub fn sandwich_row(est: &ExitEstimate, c_hat: f64, b: &BoundInputs) -> SandwichRow {
    let lower = ldp_lower_bound(b.i_star, b.delta, est.epsilon);
    let upper = theorem_upper_bound(est.epsilon, b.k1, b.t0, b.r, b.u0_mass_sq, c_hat);
    let lower_holds = lower <= est.p_hat + 2.0 * est.ci_halfwidth;
    let (upper_bound, upper_holds, upper_informative, note) = match upper {
        Ok(u) => (Some(u), est.p_hat - 2.0 * est.ci_halfwidth <= u.min(1.0), u < 1.0, None),
        Err(e) => (None, true, false, Some(e.to_string())),
    };
    SandwichRow {
        epsilon: est.epsilon,
        p_hat: est.p_hat,
        ci_halfwidth: est.ci_halfwidth,
        lower_bound: lower,
        upper_bound,
        c_hat,
        lower_holds,
        upper_holds,
        upper_informative,
        note,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use num_complex::Complex64;

    use super::*;
    use crate::dynamics::SdeParams;
    use crate::noise::{CovarianceSpec, DiffusionSpec};
    use crate::spectral::{Grid, SpectralField};

    fn system(lambda: f64, u0_amp: f64) -> SdeSystem {
        let grid = Grid::new(8, 16).unwrap();
        let cov = Arc::new(CovarianceSpec::power_law(8, 2.0, 1.0).unwrap());
        let u0 = SpectralField::mode(&grid, 1, Complex64::new(u0_amp, 0.0)).unwrap();
        SdeSystem::new(
            SdeParams::new(lambda, 1.0, 0.0, None, u0).unwrap(),
            DiffusionSpec::additive(1.0, &cov),
            cov,
        )
        .unwrap()
    }

    fn config(r: f64, eps: Vec<f64>) -> ExitConfig {
        ExitConfig {
            r,
            t0: 1.0,
            n_steps: 100,
            epsilon_list: eps,
            n_paths: 200,
            delta: 0.1,
            seed: 17,
        }
    }

    fn record(mass: Vec<f64>) -> PathRecord {
        let sys = system(0.0, 1.0);
        let time = TimeGrid::new(1.0, mass.len() - 1).unwrap();
        let fields = vec![sys.params.u0.clone(); mass.len()];
        PathRecord {
            v_norm: mass.clone(),
            fields,
            time,
            seed: None,
            params: sys.params.clone(),
            mass,
        }
    }

    #[test]
    fn detect_exit_examples() {
        assert_eq!(detect_exit(&record(vec![0.5; 5]), 1.0), None);
        assert_eq!(detect_exit(&record(vec![2.0, 0.5, 0.5]), 1.0), Some(0.0));
        let p = record(vec![0.5, 0.8, 1.0, 1.2, 0.4]);
        assert_eq!(detect_exit(&p, 1.0), Some(0.75));
        assert_eq!(detect_exit(&p, 0.8), Some(0.5));
    }

    #[test]
    fn upper_bound_examples() {
        let v = theorem_upper_bound(0.01, 1.0, 1.0, 4.0, 1.0, 1.0).unwrap();
        assert!((v - 0.2 / 2.95).abs() < 1e-12);
        assert!((v - 0.06780).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for eps in [0.1, 0.01, 1e-3, 1e-4, 1e-6] {
            let b = theorem_upper_bound(eps, 1.0, 1.0, 4.0, 1.0, 1.0).unwrap();
            assert!(b < prev);
            prev = b;
        }
        assert!(prev < 1e-2);
        // r (1 - eps K1 T0) = 0.99 * 1.0 <= 1.0 + 0.01.
        assert!(matches!(
            theorem_upper_bound(0.01, 1.0, 1.0, 1.0, 1.0, 1.0),
            Err(Error::BoundInapplicable(_))
        ));
        assert!(theorem_upper_bound(1.0, 1.0, 1.0, 4.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lower_and_mean_bound_examples() {
        assert!((ldp_lower_bound(0.0, 0.1, 0.5) - (-0.2f64).exp()).abs() < 1e-15);
        assert!((ldp_lower_bound(1.0, 0.1, 0.5) - 0.110_803).abs() < 1e-6);
        assert!(ldp_lower_bound(1.0, 0.1, 1e-3) < 1e-300);
        assert_eq!(ldp_lower_bound(f64::INFINITY, 0.1, 0.5), 0.0);

        let b = mean_exit_bound(1.0, 0.1, 0.1).unwrap();
        assert!((b - 1.0 / (1.0 - (-9.0f64).exp())).abs() < 1e-12);
        assert!((b - 1.000_123).abs() < 1e-6);
        assert!(mean_exit_bound(1.0, 0.1, 1e-3).unwrap() - 1.0 < 1e-300);
        assert!(mean_exit_bound(0.1, 0.1, 0.1).is_err());
        assert_eq!(mean_exit_bound(f64::INFINITY, 0.1, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn config_checks_the_hypothesis() {
        let cfg = config(2.0, vec![0.1, 0.4]);
        assert!(cfg.validate(2.0).is_ok());
        assert!(cfg.validate(2.5).is_err());
        assert!(ExitConfig {
            n_paths: 99,
            ..cfg.clone()
        }
        .validate(0.0)
        .is_err());
        assert!(ExitConfig { delta: 0.0, ..cfg }.validate(0.0).is_err());
    }

    #[test]
    fn trivial_exit_probabilities() {
        let sys = system(1.0, 1.0);
        let est = estimate_exit_prob(&config(1.5, vec![0.0]), &sys).unwrap();
        assert_eq!(est[0].p_hat, 0.0);
        assert_eq!(est[0].n_censored, 200);
        assert_eq!(est[0].mean_exit_censored, 1.0);

        let est = estimate_exit_prob(&config(0.5, vec![0.01, 0.1]), &sys).unwrap();
        for e in &est {
            assert_eq!(e.p_hat, 1.0);
            assert_eq!(e.mean_exit_censored, 0.0);
        }
    }

    #[test]
    fn estimates_are_deterministic_and_consistent() {
        let sys = system(1.0, 0.8);
        let cfg = config(1.0, vec![0.05, 0.2]);
        let a = estimate_exit_prob(&cfg, &sys).unwrap();
        let b = estimate_exit_prob(&cfg, &sys).unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert_eq!(e.n_exited + e.n_censored + e.n_aborted, cfg.n_paths);
            assert_eq!(e.p_hat, e.n_exited as f64 / (cfg.n_paths - e.n_aborted) as f64);
        }
        assert!(a[1].p_hat + 2.0 * a[1].ci_halfwidth >= a[0].p_hat);
    }

    #[test]
    fn exit_probability_non_increasing_in_radius() {
        let sys = system(1.0, 0.8);
        let mut prev = 1.0;
        for r in [0.7, 0.8, 1.0, 1.3] {
            let p = estimate_exit_prob(&config(r, vec![0.1]), &sys).unwrap()[0].p_hat;
            assert!(p <= prev, "r = {r}: {p} > {prev}");
            prev = p;
        }
    }

    #[test]
    fn c_constant_deterministic_mass() {
        let sys = system(0.0, 0.7);
        let time = TimeGrid::new(1.0, 50).unwrap();
        let c = estimate_c_constant(&sys, 0.0, &time, 100, 1).unwrap();
        let m2: f64 = 0.49;
        assert!((c.value - ((1.0 + m2) * m2).sqrt()).abs() < 1e-12);
        assert!(c.ci_halfwidth < 1e-12);
    }

    #[test]
    fn c_constant_matches_recorded_paths() {
        let sys = system(1.0, 0.0).with_epsilon(0.05).unwrap();
        let time = TimeGrid::new(1.0, 40).unwrap();
        let c = estimate_c_constant(&sys, 0.05, &time, 120, 3).unwrap();
        let mut acc = 0.0;
        for i in 0..120 {
            let path = sys.simulate_path(None, &time, c_path_seed(3, i)).unwrap();
            let mut s = 0.0;
            for j in 0..time.n_steps() {
                let q = |m: f64| m + m * m;
                s += 0.5 * (q(path.mass[j]) + q(path.mass[j + 1])) * time.dt();
            }
            acc += s;
        }
        let direct = (acc / 120.0).sqrt();
        assert!((c.value - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn c_constant_stable_under_doubling() {
        let sys = system(1.0, 0.5);
        let time = TimeGrid::new(1.0, 50).unwrap();
        let a = estimate_c_constant(&sys, 0.1, &time, 200, 5).unwrap();
        let b = estimate_c_constant(&sys, 0.1, &time, 400, 5).unwrap();
        assert!((a.value - b.value).abs() < 2.0 * a.ci_halfwidth.max(b.ci_halfwidth));
    }

    #[test]
    fn sandwich_row_flags() {
        let est = ExitEstimate {
            epsilon: 0.01,
            r: 4.0,
            p_hat: 0.01,
            ci_halfwidth: 0.005,
            ci_low: 0.005,
            ci_high: 0.015,
            mean_exit_censored: 1.0,
            n_exited: 10,
            n_censored: 990,
            n_aborted: 0,
            unreliable: false,
        };
        let b = BoundInputs {
            i_star: 0.5,
            delta: 0.1,
            k1: 1.0,
            t0: 1.0,
            r: 4.0,
            u0_mass_sq: 1.0,
        };
        let row = sandwich_row(&est, 1.0, &b);
        assert!((row.upper_bound.unwrap() - 0.2 / 2.95).abs() < 1e-12);
        assert!(row.lower_holds && row.upper_holds && row.upper_informative);
        let row = sandwich_row(&est, 1.0, &BoundInputs { r: 1.0, ..b });
        assert!(row.upper_bound.is_none() && row.upper_holds && row.note.is_some());
    }
}
