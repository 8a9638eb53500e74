//! Filter functions of free evolution and CPMG-type decoupling.

use super::{check_even, NoiseError};

/// Pulse instants `(2j - 1) t / (2N)` for `j = 1..=N`.
pub fn cpmg_pulse_times(t: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|j| (2 * j - 1) as f64 * t / (2 * n) as f64).collect()
}

/// `sin(N x) / cos(x)`, switching to a finite sum near the secant poles.
fn sin_ratio(n: usize, x: f64) -> f64 {
    let c = x.cos();
    if c.abs() > 1e-3 {
        return (n as f64 * x).sin() / c;
    }
    // sin(Nx) = 2 cos(x) sum_{j<N/2} (-1)^j sin((N-1-2j) x) for even N
    let mut s = 0.0;
    for j in 0..n / 2 {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * (((n - 1 - 2 * j) as f64) * x).sin();
    }
    2.0 * s
}

/// `F_N(t, w) = 2 sin^2(wt/2) (1 - sec(wt/2N))^2 / w^2` for even `N`.
///
/// Equal to half the squared Fourier transform of the CPMG toggling function.
/// Evaluated as `8 S^2 sin^4(x/2) / w^2` with `x = wt/2N` and `S = sin(Nx)/cos(x)`,
/// which is finite at the removable secant poles.
pub fn filter_function(t: f64, omega: f64, n: usize) -> Result<f64, NoiseError> {
    check_even(n)?;
    if !(t > 0.0) {
        return Err(NoiseError::InvalidParameter { field: "t", reason: "must be > 0".into() });
    }
    Ok(filter_unchecked(t, omega, n))
}

pub(crate) fn filter_unchecked(t: f64, omega: f64, n: usize) -> f64 {
    let w = omega.abs();
    if w == 0.0 {
        return 0.0;
    }
    let x = w * t / (2 * n) as f64;
    let s = sin_ratio(n, x);
    let h = (0.5 * x).sin();
    let small = 8.0 * s * s * h.powi(4) / (w * w);
    small.max(0.0)
}

/// Free-evolution filter `2 sin^2(wt/2) / w^2`, normalised like [`filter_function`].
pub fn ramsey_filter(t: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        return 0.5 * t * t;
    }
    let s = (0.5 * omega * t).sin();
    2.0 * s * s / (omega * omega)
}
