//! Dirichlet sine Galerkin basis on (0, 1).
//!
//! Basis functions are `e_k(x) = sqrt(2) sin(k pi x)`, `k = 1..=n_modes`,
//! orthonormal in `H = L^2(0, 1)` and eigenfunctions of `A = -d^2/dx^2`
//! with eigenvalue `(k pi)^2`.
//!
//! The physical grid consists of the `n_phys` interior nodes
//! `x_j = j / (n_phys + 1)`. Transforms are type-I discrete sine
//! transforms computed through a complex FFT of length `2 (n_phys + 1)`.
//! On that grid the discrete inner product `(1 / (n_phys + 1)) sum_j`
//! reproduces the continuous one exactly for sine polynomials whose
//! degree stays below the aliasing limit.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::ser::{Serialize, SerializeSeq, Serializer};
use serde::Deserialize;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which of the three Hilbert norms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `L^2`: weights 1.
    H,
    /// `H^1`: weights `1 + (k pi)^2`.
    V,
    /// Discrete dual of `V`: weights `1 / (1 + (k pi)^2)`.
    VDual,
}

impl NormKind {
    #[inline]
    pub fn weight(self, k: usize) -> f64 {
        let a = (k as f64 * PI).powi(2);
        match self {
            NormKind::H => 1.0,
            NormKind::V => 1.0 + a,
            NormKind::VDual => 1.0 / (1.0 + a),
        }
    }
}

/// Minimum number of physical nodes per mode that makes the projection of
/// `|u|^{2 sigma} u` alias-free.
pub fn dealias_factor(sigma: f64) -> usize {
    (sigma + 1.0).ceil() as usize
}

/// Galerkin dimension plus the transform machinery shared by every field
/// living on it. Cloning is cheap.
#[derive(Clone)]
pub struct Grid {
    n_modes: usize,
    n_phys: usize,
    fft: Arc<dyn Fft<f64>>,
    /// `cos_sine[m * n_modes + (k - 1)] = int_0^1 cos(m pi x) e_k(x) dx`,
    /// `m = 0..=2 n_modes`.
    cos_sine: Arc<[f64]>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_modes", &self.n_modes)
            .field("n_phys", &self.n_phys)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_modes == other.n_modes && self.n_phys == other.n_phys
    }
}

impl Grid {
    /// Build the basis. Requires `n_phys >= 2 n_modes`, which is the
    /// dealiasing requirement for the cubic case.
    pub fn new(n_modes: usize, n_phys: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidGrid("n_modes must be at least 1".into()));
        }
        if n_phys < 2 * n_modes {
            return Err(Error::Dealiasing {
                n_phys,
                required: 2 * n_modes,
                sigma: 1.0,
            });
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * (n_phys + 1));
        let mut cos_sine = vec![0.0; (2 * n_modes + 1) * n_modes];
        for m in 0..=2 * n_modes {
            for k in 1..=n_modes {
                if (k + m) % 2 == 1 {
                    let (kf, mf) = (k as f64, m as f64);
                    cos_sine[m * n_modes + k - 1] = SQRT_2 * 2.0 * kf / (PI * (kf * kf - mf * mf));
                }
            }
        }
        Ok(Grid {
            n_modes,
            n_phys,
            fft,
            cos_sine: cos_sine.into(),
        })
    }

    /// Build the basis and check dealiasing for the nonlinearity power.
    pub fn for_sigma(n_modes: usize, n_phys: usize, sigma: f64) -> Result<Self> {
        let grid = Grid::new(n_modes, n_phys)?;
        grid.check_dealiasing(sigma)?;
        Ok(grid)
    }

    pub fn check_dealiasing(&self, sigma: f64) -> Result<()> {
        let required = dealias_factor(sigma) * self.n_modes;
        if self.n_phys < required {
            return Err(Error::Dealiasing {
                n_phys: self.n_phys,
                required,
                sigma,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    #[inline]
    pub fn n_phys(&self) -> usize {
        self.n_phys
    }

    pub fn domain_length(&self) -> f64 {
        1.0
    }

    /// Eigenvalue `(k pi)^2` of `A` for mode `k` (1-based).
    #[inline]
    pub fn eigenvalue(&self, k: usize) -> f64 {
        (k as f64 * PI).powi(2)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_modes).map(|k| self.eigenvalue(k)).collect()
    }

    pub fn nodes(&self) -> Vec<f64> {
        let m = (self.n_phys + 1) as f64;
        (1..=self.n_phys).map(|j| j as f64 / m).collect()
    }

    /// `out[k-1] = sum_{j=1}^{len} x[j-1] sin(pi k j / M)` for `k = 1..=out_len`.
    fn dst(&self, x: &[Complex64], out_len: usize) -> Vec<Complex64> {
        let m = self.n_phys + 1;
        let mut buf = vec![ZERO; 2 * m];
        for (j, &v) in x.iter().enumerate() {
            buf[j + 1] = v;
            buf[2 * m - j - 1] = -v;
        }
        self.fft.process(&mut buf);
        // FFT of the odd extension is -2i times the sine sum.
        buf[1..=out_len]
            .iter()
            .map(|z| Complex64::new(-0.5 * z.im, 0.5 * z.re))
            .collect()
    }

    /// Values of the expansion with coefficients `coeffs` at the nodes.
    pub fn to_physical(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut v = self.dst(coeffs, self.n_phys);
        v.iter_mut().for_each(|z| *z *= SQRT_2);
        v
    }

    /// Discrete projection of nodal values onto `e_1..e_{n_modes}`.
    pub fn from_physical(&self, values: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.n_phys);
        let scale = SQRT_2 / (self.n_phys + 1) as f64;
        let mut c = self.dst(values, self.n_modes);
        c.iter_mut().for_each(|z| *z *= scale);
        c
    }

    /// Exact `L^2` projection of the pointwise product of two sine
    /// expansions onto the sine modes.
    ///
    /// `e_a e_b = cos((a-b) pi x) - cos((a+b) pi x)`, so the product is a
    /// cosine polynomial of degree `<= 2 n_modes`; its sine coefficients
    /// follow from the tabulated `int cos(m pi x) e_k dx`.
    pub fn product_projection(&self, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n_modes;
        debug_assert!(a.len() == n && b.len() == n);
        let mut cos_coeffs = vec![ZERO; 2 * n + 1];
        for (i, &ai) in a.iter().enumerate() {
            if ai == ZERO {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                let p = ai * bj;
                cos_coeffs[i.abs_diff(j)] += p;
                cos_coeffs[i + j + 2] -= p;
            }
        }
        let mut out = vec![ZERO; n];
        for (m, &d) in cos_coeffs.iter().enumerate() {
            if d == ZERO {
                continue;
            }
            let row = &self.cos_sine[m * n..(m + 1) * n];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += d * w;
            }
        }
        out
    }
}

/// A complex function on (0, 1) stored by its coordinates against `e_k`.
#[derive(Debug, Clone)]
pub struct SpectralField {
    coeffs: Vec<Complex64>,
    grid: Grid,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(grid: &Grid) -> Self {
        SpectralField {
            coeffs: vec![ZERO; grid.n_modes],
            grid: grid.clone(),
        }
    }

    pub fn from_coeffs(grid: &Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n_modes {
            return Err(Error::LengthMismatch {
                expected: grid.n_modes,
                found: coeffs.len(),
            });
        }
        Ok(SpectralField {
            coeffs,
            grid: grid.clone(),
        })
    }

    /// `value * e_k`.
    pub fn mode(grid: &Grid, k: usize, value: Complex64) -> Result<Self> {
        if k == 0 || k > grid.n_modes {
            return Err(Error::ModeOutOfRange {
                mode: k,
                n_modes: grid.n_modes,
            });
        }
        let mut f = SpectralField::zeros(grid);
        f.coeffs[k - 1] = value;
        Ok(f)
    }

    /// Parse the `[[re, im], ...]` serialization, ordered `k = 1..=n_modes`.
    pub fn from_pairs(grid: &Grid, pairs: &[[f64; 2]]) -> Result<Self> {
        let coeffs = pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        SpectralField::from_coeffs(grid, coeffs)
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.coeffs.iter().map(|z| [z.re, z.im]).collect()
    }

    /// Project nodal values on the physical grid.
    pub fn from_physical(grid: &Grid, values: &[Complex64]) -> Result<Self> {
        if values.len() != grid.n_phys {
            return Err(Error::LengthMismatch {
                expected: grid.n_phys,
                found: values.len(),
            });
        }
        Ok(SpectralField {
            coeffs: grid.from_physical(values),
            grid: grid.clone(),
        })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn to_physical(&self) -> Vec<Complex64> {
        self.grid.to_physical(&self.coeffs)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `A u`: multiply mode `k` by `(k pi)^2`.
    pub fn apply_a(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * self.grid.eigenvalue(i + 1))
            .collect();
        SpectralField {
            coeffs,
            grid: self.grid.clone(),
        }
    }

    /// `pi_m u`: keep modes `1..=m`, zero the rest.
    pub fn project(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.grid.n_modes {
            return Err(Error::ModeOutOfRange {
                mode: m,
                n_modes: self.grid.n_modes,
            });
        }
        let mut out = self.clone();
        out.coeffs[m..].iter_mut().for_each(|c| *c = ZERO);
        Ok(out)
    }

    pub fn norm_sq(&self, kind: NormKind) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| kind.weight(i + 1) * c.norm_sqr())
            .sum()
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        self.norm_sq(kind).sqrt()
    }

    /// Mass `||u||^2` in `H`.
    pub fn mass(&self) -> f64 {
        self.norm_sq(NormKind::H)
    }

    /// `(u, v) = int u conj(v) dx`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert!(self.grid == other.grid);
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn conj(&self) -> Self {
        SpectralField {
            coeffs: self.coeffs.iter().map(|c| c.conj()).collect(),
            grid: self.grid.clone(),
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: Complex64, x: &Self) {
        debug_assert!(self.grid == x.grid);
        for (s, &v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s += a * v;
        }
    }

    pub fn scale_mut(&mut self, a: Complex64) {
        self.coeffs.iter_mut().for_each(|c| *c *= a);
    }

    /// Pseudo-spectral `f(u) = |u|^{2 sigma} u` projected back on the modes.
    ///
    /// Exact for integer `sigma` when the grid satisfies the dealiasing
    /// bound; for fractional `sigma` the padding only limits aliasing.
    pub fn nonlinearity(&self, sigma: f64) -> Self {
        let mut phys = self.to_physical();
        let integer = sigma.fract() == 0.0 && sigma <= i32::MAX as f64;
        for z in phys.iter_mut() {
            let m = z.norm_sqr().max(0.0);
            let w = if integer { m.powi(sigma as i32) } else { m.powf(sigma) };
            *z *= w;
        }
        SpectralField {
            coeffs: self.grid.from_physical(&phys),
            grid: self.grid.clone(),
        }
    }

    /// Transpose of the real Jacobian of [`SpectralField::nonlinearity`] at
    /// `self`, applied to `adj`, with respect to `Re (., .)`.
    ///
    /// Pointwise: `(sigma+1)|u|^{2 sigma} p + sigma |u|^{2 sigma - 2} u^2 conj(p)`.
    pub fn nonlinearity_adjoint(&self, sigma: f64, adj: &Self) -> Self {
        let u = self.to_physical();
        let mut p = adj.to_physical();
        for (pz, uz) in p.iter_mut().zip(&u) {
            let m = uz.norm_sqr().max(0.0);
            let lo = m.powf(sigma - 1.0);
            *pz = (sigma + 1.0) * lo * m * *pz + sigma * lo * uz * uz * pz.conj();
        }
        SpectralField {
            coeffs: self.grid.from_physical(&p),
            grid: self.grid.clone(),
        }
    }

    /// Sine projection of the pointwise product `self * other`.
    pub fn product(&self, other: &Self) -> Self {
        debug_assert!(self.grid == other.grid);
        SpectralField {
            coeffs: self.grid.product_projection(&self.coeffs, &other.coeffs),
            grid: self.grid.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Serialize for SpectralField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.coeffs.len()))?;
        for c in &self.coeffs {
            seq.serialize_element(&[c.re, c.im])?;
        }
        seq.end()
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), rhs);
        out
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self * -1.0
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }
}

impl Mul<Complex64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: Complex64) -> SpectralField {
        let mut out = self.clone();
        out.scale_mut(a);
        out
    }
}
