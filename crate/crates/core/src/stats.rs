//! Small Monte Carlo summaries.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean with a 95% normal-approximation half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    (m, Z95 * (v / xs.len() as f64).sqrt())
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Proportion estimate with a 95% interval: normal approximation, or
/// Wilson when fewer than 10 successes were seen. Returns
/// `(p_hat, half_width, low, high)`; for Wilson the half-width is the
/// larger distance from `p_hat` to an endpoint.
pub fn proportion_ci(k: usize, n: usize) -> (f64, f64, f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN, 0.0, 1.0);
    }
    let p = k as f64 / n as f64;
    if k < 10 {
        let (lo, hi) = wilson(k, n);
        let half = (p - lo).max(hi - p);
        (p, half, lo, hi)
    } else {
        let half = Z95 * (p * (1.0 - p) / n as f64).sqrt();
        (p, half, (p - half).max(0.0), (p + half).min(1.0))
    }
}
