use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{SdeSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::exit::ABORT_THRESHOLD;
use crate::seed::derive_seed;
use crate::stats::mean_ci;

/// Monte Carlo energy moments at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub epsilon: f64,
    pub p: u32,
    /// `E[sup_t ||u(t)||^p]`.
    pub sup_moment: f64,
    pub sup_ci: f64,
    /// `E[int_0^T ||u(t)||_V^p dt]`.
    pub v_integral: f64,
    pub v_ci: f64,
    pub n_paths: usize,
    pub n_aborted: usize,
    pub unreliable: bool,
}

/// Moments of the uncontrolled equation for each even `p <= 8` in `p_list`.
/// All orders share the same paths.
pub fn empirical_moments(
    system: &SdeSystem,
    time: &TimeGrid,
    p_list: &[u32],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    if p_list.iter().any(|&p| p == 0 || p % 2 == 1 || p > 8) {
        return Err(Error::param("p_list", "entries must be even integers in 2..=8"));
    }
    if n_paths == 0 {
        return Err(Error::param("n_paths", "must be positive"));
    }
    let per_path: Vec<Option<Vec<(f64, f64)>>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = system
                .simulate_path(None, time, derive_seed(seed, "moments", i as u64))
                .ok()?;
            let sup_mass = path.mass.iter().cloned().fold(0.0, f64::max);
            Some(
                p_list
                    .iter()
                    .map(|&p| (sup_mass.powf(p as f64 / 2.0), path.v_norm_lp(p as f64)))
                    .collect(),
            )
        })
        .collect();
    let ok: Vec<&Vec<(f64, f64)>> = per_path.iter().flatten().collect();
    let n_aborted = n_paths - ok.len();
    Ok(p_list
        .iter()
        .enumerate()
        .map(|(n, &p)| {
            let sup: Vec<f64> = ok.iter().map(|r| r[n].0).collect();
            let vint: Vec<f64> = ok.iter().map(|r| r[n].1).collect();
            let (sup_moment, sup_ci) = mean_ci(&sup);
            let (v_integral, v_ci) = mean_ci(&vint);
            MomentRow {
                epsilon: system.params.epsilon,
                p,
                sup_moment,
                sup_ci,
                v_integral,
                v_ci,
                n_paths,
                n_aborted,
                unreliable: n_aborted as f64 > ABORT_THRESHOLD * n_paths as f64,
            }
        })
        .collect())
}

/// [`empirical_moments`] over a list of noise levels, reusing the seeds.
pub fn moment_sweep(
    system: &SdeSystem,
    time: &TimeGrid,
    epsilons: &[f64],
    p_list: &[u32],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    let mut rows = Vec::new();
    for &eps in epsilons {
        rows.extend(empirical_moments(
            &system.with_epsilon(eps)?,
            time,
            p_list,
            n_paths,
            seed,
        )?);
    }
    Ok(rows)
}
