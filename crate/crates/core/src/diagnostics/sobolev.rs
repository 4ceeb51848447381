//! `W^{alpha,p}(0, T; X)` norms of recorded paths:
//!
//! ```text
//! ||v||^p = int_0^T ||v(t)||_X^p dt
//!         + int_0^T int_0^T ||v(t) - v(s)||_X^p / |t - s|^{1 + alpha p} ds dt
//! ```
//!
//! The path is taken as the piecewise-linear interpolant of its samples and
//! the double integral is evaluated cell pair by cell pair. On a diagonal
//! cell the integrand is `||v'||^p |t - s|^{p - 1 - alpha p}`, integrated
//! exactly. On adjacent cells the corner singularity is removed by a
//! polar-type substitution with the radial integral done exactly. Remote
//! cells use tensor Gauss-Legendre rules whose order shrinks with the gap.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{PathRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::spectral::{NormKind, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevParts {
    /// `int ||v||^p dt`.
    pub lp: f64,
    /// The double-integral seminorm raised to the power `p`.
    pub seminorm: f64,
}

impl SobolevParts {
    /// `||v||^p`.
    pub fn total(&self) -> f64 {
        self.lp + self.seminorm
    }

    pub fn norm(&self, p: f64) -> f64 {
        self.total().powf(1.0 / p)
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

struct Rules {
    by_order: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Rules {
    const MAX: usize = 16;

    fn new() -> Self {
        Rules {
            by_order: (0..=Self::MAX)
                .map(|n| if n == 0 { (vec![], vec![]) } else { gauss_legendre(n) })
                .collect(),
        }
    }

    fn get(&self, n: usize) -> (&[f64], &[f64]) {
        let (x, w) = &self.by_order[n.min(Self::MAX)];
        (x, w)
    }
}

/// Order of the tensor rule for two cells `gap` apart.
fn far_order(gap: usize) -> usize {
    (24usize.div_ceil(gap)).clamp(3, 12)
}

fn norm_p(a: &[f64], p: f64) -> f64 {
    let s: f64 = a.iter().map(|x| x * x).sum();
    if p == 2.0 {
        s
    } else {
        s.powf(0.5 * p)
    }
}

fn weighted(field: &SpectralField, kind: NormKind) -> Vec<f64> {
    field
        .coeffs()
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            let w = kind.weight(i + 1).sqrt();
            [w * c.re, w * c.im]
        })
        .collect()
}

fn check_args(n_points: usize, alpha: f64, p: f64) -> Result<()> {
    if n_points < 3 {
        return Err(Error::TooFewTimePoints(n_points));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1)"));
    }
    if !(p > 1.0) {
        return Err(Error::param("p", "must exceed 1"));
    }
    Ok(())
}

/// Both parts of the `W^{alpha,p}` norm of the samples `fields[j] = v(t_j)`.
pub fn fractional_sobolev_parts(
    fields: &[SpectralField],
    time: &TimeGrid,
    alpha: f64,
    p: f64,
    kind: NormKind,
) -> Result<SobolevParts> {
    check_args(fields.len(), alpha, p)?;
    if fields.len() != time.n_steps() + 1 {
        return Err(Error::LengthMismatch {
            expected: time.n_steps() + 1,
            found: fields.len(),
        });
    }
    let v: Vec<Vec<f64>> = fields.iter().map(|f| weighted(f, kind)).collect();
    let h = time.dt();
    let n_cells = v.len() - 1;
    let dim = v[0].len();
    let slopes: Vec<Vec<f64>> = v
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) / h).collect())
        .collect();
    let rules = Rules::new();
    let beta = p - 1.0 - alpha * p;
    let kernel = 1.0 + alpha * p;

    let (gx, gw) = rules.get(8);
    let lp: f64 = (0..n_cells)
        .map(|i| {
            let mut buf = vec![0.0; dim];
            gx.iter()
                .zip(gw)
                .map(|(&x, &w)| {
                    buf.iter_mut()
                        .zip(v[i].iter().zip(&slopes[i]))
                        .for_each(|(b, (a, s))| *b = a + s * x * h);
                    w * norm_p(&buf, p)
                })
                .sum::<f64>()
                * h
        })
        .sum();

    let diag_factor = 2.0 * h.powf(beta + 2.0) / ((beta + 1.0) * (beta + 2.0));
    let per_row: Vec<f64> = (0..n_cells)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; dim];
            let mut row = norm_p(&slopes[i], p) * diag_factor;

            if i + 1 < n_cells {
                let (a, b) = (&slopes[i], &slopes[i + 1]);
                let (x16, w16) = rules.get(16);
                // x = t_{i+1} - s, y = t - t_{i+1}; the difference is a x + b y.
                let near: f64 = x16
                    .iter()
                    .zip(w16)
                    .map(|(&th, &w)| {
                        buf.iter_mut()
                            .zip(a.iter().zip(b))
                            .for_each(|(o, (ai, bi))| *o = ai * th + bi * (1.0 - th));
                        w * norm_p(&buf, p)
                    })
                    .sum::<f64>()
                    * h.powf(beta + 2.0)
                    / (beta + 2.0);
                let mut rest = 0.0;
                for (&xu, &wx) in x16.iter().zip(w16) {
                    let x = xu * h;
                    for (&tau, &wt) in x16.iter().zip(w16) {
                        let y = h - x + x * tau;
                        buf.iter_mut()
                            .zip(a.iter().zip(b))
                            .for_each(|(o, (ai, bi))| *o = ai * x + bi * y);
                        rest += wx * wt * norm_p(&buf, p) / (x + y).powf(kernel) * x * h;
                    }
                }
                row += 2.0 * (near + rest);
            }

            for j in i + 2..n_cells {
                let (x, w) = rules.get(far_order(j - i));
                let mut cell = 0.0;
                for (&su, &ws) in x.iter().zip(w) {
                    for (&tu, &wt) in x.iter().zip(w) {
                        let ds = (j - i) as f64 * h + (tu - su) * h;
                        for (k, o) in buf.iter_mut().enumerate() {
                            *o = (v[j][k] + slopes[j][k] * tu * h) - (v[i][k] + slopes[i][k] * su * h);
                        }
                        cell += ws * wt * norm_p(&buf, p) / ds.powf(kernel);
                    }
                }
                row += 2.0 * cell * h * h;
            }
            row
        })
        .collect();
    let seminorm = per_row.iter().sum();
    Ok(SobolevParts { lp, seminorm })
}

/// `||v||^p_{W^{alpha,p}(0,T;X)}` of a recorded path.
pub fn fractional_sobolev_norm(path: &PathRecord, alpha: f64, p: f64, kind: NormKind) -> Result<f64> {
    Ok(fractional_sobolev_parts(&path.fields, &path.time, alpha, p, kind)?.total())
}

/// `int ||v||^p dt + int ||v'||^p dt` of the piecewise-linear interpolant.
pub fn sobolev_w1p_norm(fields: &[SpectralField], time: &TimeGrid, p: f64, kind: NormKind) -> Result<SobolevParts> {
    let base = fractional_sobolev_parts(fields, time, 0.5, p, kind)?;
    let h = time.dt();
    let v: Vec<Vec<f64>> = fields.iter().map(|f| weighted(f, kind)).collect();
    let deriv: f64 = v
        .windows(2)
        .map(|w| {
            let s: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) / h).collect();
            norm_p(&s, p) * h
        })
        .sum();
    Ok(SobolevParts {
        lp: base.lp,
        seminorm: deriv,
    })
}
