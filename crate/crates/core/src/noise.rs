//! Q-Wiener noise, the Cameron-Martin space `H_0 = Q^{1/2} H`, and the
//! diffusion families `g(t, u)`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Grid, NormKind, SpectralField};

/// Eigenvalues `lambda_k` of the covariance `Q`, with `Q e_k = lambda_k e_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    eigenvalues: Vec<f64>,
    decay_exponent: Option<f64>,
    trace: f64,
}

impl CovarianceSpec {
    /// `lambda_k = c k^{-gamma}` with `c` chosen so that `tr Q = trace`.
    pub fn power_law(n_modes: usize, gamma: f64, trace: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::param("n_modes", "must be positive"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param("gamma", "must be finite and non-negative"));
        }
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(Error::param("trace", "must be finite and positive"));
        }
        let raw: Vec<f64> = (1..=n_modes).map(|k| (k as f64).powf(-gamma)).collect();
        let c = trace / raw.iter().sum::<f64>();
        let mut cov = CovarianceSpec::from_eigenvalues(raw.into_iter().map(|l| c * l).collect())?;
        cov.decay_exponent = Some(gamma);
        Ok(cov)
    }

    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::param("eigenvalues", "empty"));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::param("eigenvalues", "must be finite and positive"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::param("eigenvalues", "must be non-increasing"));
        }
        let trace = eigenvalues.iter().sum();
        Ok(CovarianceSpec {
            eigenvalues,
            decay_exponent: None,
            trace,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn decay_exponent(&self) -> Option<f64> {
        self.decay_exponent
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }
}

/// Element of `H_0`, stored by its coordinates against the
/// `H_0`-orthonormal system `sqrt(lambda_k) e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct H0Vector {
    coords: Vec<Complex64>,
    cov: Arc<CovarianceSpec>,
}

impl H0Vector {
    pub fn new(cov: &Arc<CovarianceSpec>, coords: Vec<Complex64>) -> Result<Self> {
        if coords.len() != cov.n_modes() {
            return Err(Error::LengthMismatch {
                expected: cov.n_modes(),
                found: coords.len(),
            });
        }
        Ok(H0Vector {
            coords,
            cov: Arc::clone(cov),
        })
    }

    pub fn zeros(cov: &Arc<CovarianceSpec>) -> Self {
        H0Vector {
            coords: vec![Complex64::new(0.0, 0.0); cov.n_modes()],
            cov: Arc::clone(cov),
        }
    }

    /// The `k`-th `H_0`-orthonormal direction (1-based).
    pub fn unit(cov: &Arc<CovarianceSpec>, k: usize) -> Result<Self> {
        if k == 0 || k > cov.n_modes() {
            return Err(Error::ModeOutOfRange {
                mode: k,
                n_modes: cov.n_modes(),
            });
        }
        let mut h = H0Vector::zeros(cov);
        h.coords[k - 1] = Complex64::new(1.0, 0.0);
        Ok(h)
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [Complex64] {
        &mut self.coords
    }

    pub fn covariance(&self) -> &Arc<CovarianceSpec> {
        &self.cov
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        h0_norm(self)
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// The inclusion `H_0 -> H`: coefficient `k` is `sqrt(lambda_k) coords_k`.
    pub fn embed(&self, grid: &Grid) -> Result<SpectralField> {
        if grid.n_modes() != self.cov.n_modes() {
            return Err(Error::CovarianceMismatch);
        }
        let coeffs = self
            .coords
            .iter()
            .zip(self.cov.eigenvalues())
            .map(|(c, l)| c * l.sqrt())
            .collect();
        SpectralField::from_coeffs(grid, coeffs)
    }

    /// `a h1 + b h2` for vectors of the same space.
    pub fn combine(a: Complex64, h1: &Self, b: Complex64, h2: &Self) -> Result<Self> {
        if !same_space(&h1.cov, &h2.cov) {
            return Err(Error::CovarianceMismatch);
        }
        let coords = h1.coords.iter().zip(&h2.coords).map(|(x, y)| a * x + b * y).collect();
        Ok(H0Vector {
            coords,
            cov: Arc::clone(&h1.cov),
        })
    }
}

pub(crate) fn same_space(a: &Arc<CovarianceSpec>, b: &Arc<CovarianceSpec>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// `||h||_{H_0} = ||Q^{-1/2} h||`.
pub fn h0_norm(h: &H0Vector) -> f64 {
    h.norm_sq().sqrt()
}

/// Brownian increment over `dt` in `H_0` coordinates: independent real
/// `N(0, dt)` entries.
pub fn sample_brownian<R: Rng + ?Sized>(cov: &Arc<CovarianceSpec>, dt: f64, rng: &mut R) -> H0Vector {
    let s = dt.sqrt();
    let coords = (0..cov.n_modes())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            Complex64::new(s * z, 0.0)
        })
        .collect();
    H0Vector {
        coords,
        cov: Arc::clone(cov),
    }
}

/// `W(t + dt) - W(t) = sum_k sqrt(lambda_k) e_k (W_k(t + dt) - W_k(t))` as an
/// `H`-field. Coefficient `k` is real with variance `lambda_k dt`.
pub fn sample_increment<R: Rng + ?Sized>(
    cov: &Arc<CovarianceSpec>,
    grid: &Grid,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    sample_brownian(cov, dt, rng).embed(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionFamily {
    /// `g(t, u) h = amplitude * h`.
    Additive,
    /// `g(t, u) h = amplitude * (u . h)`, pointwise product projected on the modes.
    DiagonalMultiplicative,
}

/// Declarative description of `g` with its declared growth (`k1`) and
/// Lipschitz (`k2`) constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub family: DiffusionFamily,
    pub amplitude: f64,
    pub k1: f64,
    pub k2: f64,
}

impl DiffusionSpec {
    pub fn new(family: DiffusionFamily, amplitude: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::param("amplitude", "must be finite and non-negative"));
        }
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::param("k1", "must be finite and non-negative"));
        }
        if !(k2 >= 0.0 && k2.is_finite()) {
            return Err(Error::param("k2", "must be finite and non-negative"));
        }
        Ok(DiffusionSpec {
            family,
            amplitude,
            k1,
            k2,
        })
    }

    /// Additive noise with its exact constants `K1 = a^2 tr Q`, `K2 = 0`.
    pub fn additive(amplitude: f64, cov: &CovarianceSpec) -> Self {
        DiffusionSpec {
            family: DiffusionFamily::Additive,
            amplitude,
            k1: amplitude * amplitude * cov.trace(),
            k2: 0.0,
        }
    }

    /// Multiplicative noise with the a-priori constants `K1 = K2 = 2 a^2 tr Q`
    /// (from `||e_k||_inf^2 = 2`); `diagnostics` measures sharper ones.
    pub fn multiplicative(amplitude: f64, cov: &CovarianceSpec) -> Self {
        let k = 2.0 * amplitude * amplitude * cov.trace();
        DiffusionSpec {
            family: DiffusionFamily::DiagonalMultiplicative,
            amplitude,
            k1: k,
            k2: k,
        }
    }

    pub fn is_state_dependent(&self) -> bool {
        self.family == DiffusionFamily::DiagonalMultiplicative && self.amplitude != 0.0
    }
}

/// `g(t, u) h`.
pub fn apply_diffusion(spec: &DiffusionSpec, _t: f64, u: &SpectralField, h: &H0Vector) -> Result<SpectralField> {
    let w = h.embed(u.grid())?;
    Ok(diffusion_of_embedded(spec, u, &w))
}

/// `g(t, u)` applied to an already embedded `w = i(h)`.
pub(crate) fn diffusion_of_embedded(spec: &DiffusionSpec, u: &SpectralField, w: &SpectralField) -> SpectralField {
    match spec.family {
        DiffusionFamily::Additive => w * spec.amplitude,
        DiffusionFamily::DiagonalMultiplicative => &u.product(w) * spec.amplitude,
    }
}

/// Transpose of `u -> g(t, u) h` applied to `adj`; `w = i(h)`.
pub(crate) fn diffusion_adjoint_state(
    spec: &DiffusionSpec,
    w: &SpectralField,
    adj: &SpectralField,
) -> Option<SpectralField> {
    match spec.family {
        DiffusionFamily::Additive => None,
        DiffusionFamily::DiagonalMultiplicative => Some(&adj.product(&w.conj()) * spec.amplitude),
    }
}

/// Transpose of `h -> g(t, u) h` applied to `adj`, in `H_0` coordinates.
pub(crate) fn diffusion_adjoint_control(
    spec: &DiffusionSpec,
    u: &SpectralField,
    adj: &SpectralField,
    cov: &CovarianceSpec,
) -> Vec<Complex64> {
    let back = match spec.family {
        DiffusionFamily::Additive => adj * spec.amplitude,
        DiffusionFamily::DiagonalMultiplicative => &adj.product(&u.conj()) * spec.amplitude,
    };
    back.coeffs()
        .iter()
        .zip(cov.eigenvalues())
        .map(|(c, l)| c * l.sqrt())
        .collect()
}

/// `||g(t, u)||_{L_2(H_0, X)} = (sum_k ||g(t, u) sqrt(lambda_k) e_k||_X^2)^{1/2}`
/// for `X` in `{H, V}`.
pub fn hs_norm(
    spec: &DiffusionSpec,
    t: f64,
    u: &SpectralField,
    cov: &Arc<CovarianceSpec>,
    target: NormKind,
) -> Result<f64> {
    if target == NormKind::VDual {
        return Err(Error::param(
            "target",
            "Hilbert-Schmidt norm is defined into H or V only",
        ));
    }
    let mut total = 0.0;
    for k in 1..=cov.n_modes() {
        let col = apply_diffusion(spec, t, u, &H0Vector::unit(cov, k)?)?;
        total += col.norm_sq(target);
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use std::f64::consts::{PI, SQRT_2};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup(n: usize) -> (Grid, Arc<CovarianceSpec>) {
        let grid = Grid::new(n, 4 * n).unwrap();
        let cov = Arc::new(CovarianceSpec::power_law(n, 4.0, 1.0).unwrap());
        (grid, cov)
    }

    #[test]
    fn power_law_normalization() {
        let cov = CovarianceSpec::power_law(16, 4.0, 1.0).unwrap();
        let s: f64 = cov.eigenvalues().iter().sum();
        assert!((cov.trace() - 1.0).abs() < 1e-14);
        assert!((s - cov.trace()).abs() <= 1e-14 * s);
        assert!(cov.eigenvalues().windows(2).all(|w| w[1] <= w[0]));
        assert!((cov.eigenvalues()[1] / cov.eigenvalues()[0] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_covariance() {
        assert!(CovarianceSpec::from_eigenvalues(vec![1.0, 2.0]).is_err());
        assert!(CovarianceSpec::from_eigenvalues(vec![1.0, 0.0]).is_err());
        assert!(CovarianceSpec::from_eigenvalues(vec![]).is_err());
        assert!(CovarianceSpec::power_law(4, 4.0, -1.0).is_err());
    }

    #[test]
    fn h0_norm_examples() {
        let cov = Arc::new(CovarianceSpec::from_eigenvalues(vec![1.0, 0.25]).unwrap());
        let h = H0Vector::new(&cov, vec![c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_eq!(h0_norm(&h), 5.0);
        assert_eq!(h0_norm(&H0Vector::zeros(&cov)), 0.0);
        let e = H0Vector::unit(&cov, 1).unwrap();
        assert_eq!(h0_norm(&e), 1.0);
        let grid = Grid::new(2, 4).unwrap();
        let emb = e.embed(&grid).unwrap();
        assert_eq!(emb.coeffs()[0], c(1.0, 0.0)); // sqrt(lambda_1) = 1
    }

    #[test]
    fn additive_embedding_and_hs_norm() {
        let (grid, cov) = setup(8);
        let spec = DiffusionSpec::additive(1.0, &cov);
        let u = SpectralField::mode(&grid, 2, c(0.3, -1.0)).unwrap();
        let h = H0Vector::unit(&cov, 1).unwrap();
        let g = apply_diffusion(&spec, 0.0, &u, &h).unwrap();
        let l1 = cov.eigenvalues()[0];
        assert!((g.coeffs()[0] - c(l1.sqrt(), 0.0)).norm() < 1e-15);
        assert!(g.coeffs()[1..].iter().all(|z| z.norm() == 0.0));
        let hs = hs_norm(&spec, 0.0, &u, &cov, NormKind::H).unwrap();
        assert!((hs * hs - cov.trace()).abs() < 1e-14);
        assert!(hs_norm(&spec, 0.0, &u, &cov, NormKind::VDual).is_err());
    }

    #[test]
    fn multiplicative_zero_state() {
        let (grid, cov) = setup(8);
        let spec = DiffusionSpec::multiplicative(1.0, &cov);
        let z = SpectralField::zeros(&grid);
        let h = H0Vector::unit(&cov, 3).unwrap();
        assert!(apply_diffusion(&spec, 0.0, &z, &h).unwrap().norm(NormKind::H) == 0.0);
        assert_eq!(hs_norm(&spec, 0.0, &z, &cov, NormKind::H).unwrap(), 0.0);
    }

    #[test]
    fn multiplicative_matches_quadrature_oracle() {
        // u = e_1, h = unit_1: g h = sqrt(lambda_1) 2 sin^2(pi x), projected.
        let (grid, cov) = setup(8);
        let spec = DiffusionSpec::multiplicative(1.0, &cov);
        let u = SpectralField::mode(&grid, 1, c(1.0, 0.0)).unwrap();
        let g = apply_diffusion(&spec, 0.0, &u, &H0Vector::unit(&cov, 1).unwrap()).unwrap();
        let l1 = cov.eigenvalues()[0].sqrt();
        let n = 4096;
        for k in 1..=8 {
            let q: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    l1 * 2.0 * (PI * x).sin().powi(2) * SQRT_2 * (k as f64 * PI * x).sin()
                })
                .sum::<f64>()
                / n as f64;
            assert!((g.coeffs()[k - 1] - c(q, 0.0)).norm() < 1e-7, "mode {k}");
        }
    }

    #[test]
    fn diffusion_is_linear_in_control() {
        let (grid, cov) = setup(6);
        let u = SpectralField::from_coeffs(&grid, (0..6).map(|k| c(1.0 / (k + 1) as f64, 0.2)).collect()).unwrap();
        let mut rng = rng_from_seed(11);
        for spec in [
            DiffusionSpec::additive(0.7, &cov),
            DiffusionSpec::multiplicative(0.7, &cov),
        ] {
            let h1 = sample_brownian(&cov, 1.0, &mut rng);
            let mut h2 = sample_brownian(&cov, 1.0, &mut rng);
            h2.coords_mut().iter_mut().for_each(|z| *z *= c(0.0, 1.0));
            let (a, b) = (c(0.3, -1.2), c(2.0, 0.5));
            let lhs = apply_diffusion(&spec, 0.0, &u, &H0Vector::combine(a, &h1, b, &h2).unwrap()).unwrap();
            let mut rhs = &apply_diffusion(&spec, 0.0, &u, &h1).unwrap() * a;
            rhs.axpy(b, &apply_diffusion(&spec, 0.0, &u, &h2).unwrap());
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn covariance_mismatch_is_rejected() {
        let (grid, _) = setup(6);
        let other = Arc::new(CovarianceSpec::power_law(4, 4.0, 1.0).unwrap());
        let spec = DiffusionSpec::additive(1.0, &other);
        let u = SpectralField::zeros(&grid);
        let h = H0Vector::unit(&other, 1).unwrap();
        assert_eq!(apply_diffusion(&spec, 0.0, &u, &h), Err(Error::CovarianceMismatch));
    }

    #[test]
    fn increments_are_real_and_deterministic() {
        let (grid, cov) = setup(4);
        let a = sample_increment(&cov, &grid, 0.1, &mut rng_from_seed(5)).unwrap();
        let b = sample_increment(&cov, &grid, 0.1, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.coeffs().iter().all(|z| z.im == 0.0));
        assert!(sample_increment(&cov, &grid, 0.0, &mut rng_from_seed(5)).is_err());
    }

    #[test]
    fn increment_covariance_two_modes() {
        // lambda = {1, 0.25}, dt = 1, 1e5 samples: empirical covariance -> diag(1, 0.25).
        let cov = Arc::new(CovarianceSpec::from_eigenvalues(vec![1.0, 0.25]).unwrap());
        let grid = Grid::new(2, 4).unwrap();
        let mut rng = rng_from_seed(2024);
        let n = 100_000;
        let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let w = sample_increment(&cov, &grid, 1.0, &mut rng).unwrap();
            let (a, b) = (w.coeffs()[0].re, w.coeffs()[1].re);
            s11 += a * a;
            s22 += b * b;
            s12 += a * b;
        }
        let nf = n as f64;
        // Var of a sample second moment of N(0, v) is 2 v^2 / n.
        assert!((s11 / nf - 1.0).abs() < 3.0 * (2.0 / nf).sqrt());
        assert!((s22 / nf - 0.25).abs() < 3.0 * 0.25 * (2.0 / nf).sqrt());
        assert!((s12 / nf).abs() < 3.0 * 0.5 / nf.sqrt());
    }
}
