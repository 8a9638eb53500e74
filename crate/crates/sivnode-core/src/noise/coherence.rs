//! Coherence from the filter-function integral and from its exact time-domain form.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::filter::{filter_unchecked, ramsey_filter};
use super::{check_even, BathSet, DecouplingSequence, LorentzianBath, NoiseError};

const GL_ORDER: usize = 12;

fn gauss_legendre() -> &'static [(f64, f64); GL_ORDER] {
    static NODES: OnceLock<[(f64, f64); GL_ORDER]> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        let mut out = [(0.0, 0.0); GL_ORDER];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out[i] = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        out
    })
}

fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    gauss_legendre().iter().map(|&(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

fn integrate_breaks<F: Fn(f64) -> f64>(f: &F, breaks: &[f64]) -> f64 {
    breaks.windows(2).map(|w| integrate(f, w[0], w[1])).sum()
}

/// Panel edges: geometric near zero (resolving narrow Lorentzians) then
/// half-period linear panels up to `w_max`.
fn panel_edges(t: f64, tau_min: f64, w_max: f64) -> Vec<f64> {
    let h = PI / t;
    let mut edges = vec![0.0];
    let mut w = 1e-6 * (1.0 / t).min(1.0 / tau_min);
    while w < h {
        edges.push(w);
        w *= 2.0;
    }
    let mut k = 1.0;
    while k * h <= w_max {
        edges.push(k * h);
        k += 1.0;
    }
    if *edges.last().unwrap() < w_max {
        edges.push(w_max);
    }
    edges
}

fn linear_edges(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = ((b - a) / h).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// `chi = integral_0^inf S(w) F(w) dw` with doubling of the upper limit until the
/// coherence changes by less than `tol`.
fn chi_quadrature<F: Fn(f64) -> f64>(filter: F, t: f64, n_scale: f64, baths: &[LorentzianBath], tol: f64) -> Result<f64, NoiseError> {
    let tau_min = baths.iter().map(|b| b.correlation_tau_us).fold(f64::INFINITY, f64::min);
    let integrand = |w: f64| baths.iter().map(|b| b.spectral_density(w)).sum::<f64>() * filter(w);
    let mut w_max = (8.0 * PI * n_scale / t).max(20.0 / tau_min).max(8.0 * PI / t);
    let mut chi = integrate_breaks(&integrand, &panel_edges(t, tau_min, w_max));
    let mut change = f64::INFINITY;
    for _ in 0..40 {
        let extra = integrate_breaks(&integrand, &linear_edges(w_max, 2.0 * w_max, PI / t));
        let next = chi + extra;
        change = ((-chi).exp() - (-next).exp()).abs();
        chi = next;
        w_max *= 2.0;
        if change < tol {
            return Ok(chi);
        }
    }
    Err(NoiseError::Quadrature(change))
}

/// Coherence `exp(-chi)` after total time `t` under an `N`-pulse sequence, by quadrature.
pub fn coherence(t: f64, seq: &DecouplingSequence, baths: &BathSet) -> Result<f64, NoiseError> {
    check_even(seq.n_pulses)?;
    if baths.baths.is_empty() || t <= 0.0 {
        return Ok(1.0);
    }
    let n = seq.n_pulses;
    let chi = chi_quadrature(|w| filter_unchecked(t, w, n), t, n as f64, &baths.baths, 1e-9)?;
    Ok((-chi).exp())
}

/// DEER variant: the bath at `flipped` (if any) loses echo protection and sees the free-evolution filter.
pub fn deer_coherence(t: f64, seq: &DecouplingSequence, baths: &BathSet, flipped: Option<usize>) -> Result<f64, NoiseError> {
    let Some(k) = flipped else { return coherence(t, seq, baths) };
    if k >= baths.baths.len() {
        return Err(NoiseError::BathIndex(k));
    }
    let rest = coherence(t, seq, &baths.without(k))?;
    let chi = chi_quadrature(|w| ramsey_filter(t, w), t, 1.0, &baths.baths[k..=k], 1e-9)?;
    Ok(rest * (-chi).exp())
}

/// `x - 1 + exp(-x)` without cancellation for small `x`.
fn ramp(x: f64) -> f64 {
    if x < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    } else {
        x - 1.0 + (-x).exp()
    }
}

/// Exact `chi` for a piecewise-constant toggling function with segment
/// lengths `lengths` and signs alternating from +1.
fn chi_segments(lengths: &[f64], bath: &LorentzianBath) -> f64 {
    let tau = bath.correlation_tau_us;
    let mut self_terms = 0.0;
    let mut cross = 0.0;
    let mut acc = 0.0;
    let mut sign = 1.0;
    for &l in lengths {
        let a = -(-l / tau).exp_m1();
        self_terms += ramp(l / tau);
        cross += sign * a * acc;
        acc = acc * (-l / tau).exp() + sign * a;
        sign = -sign;
    }
    // chi = (b^2/4) double-integral of y(s1) y(s2) exp(-|s1 - s2|/tau)
    let b = bath.rate();
    0.5 * b * b * tau * tau * (self_terms + cross)
}

/// Exact time-domain `chi` of one bath under `n` CPMG pulses (`n = 0` is free evolution).
pub fn chi_exact(t: f64, n: usize, bath: &LorentzianBath) -> f64 {
    if n == 0 {
        return chi_segments(&[t], bath);
    }
    let mut lengths = Vec::with_capacity(n + 1);
    lengths.push(t / (2 * n) as f64);
    lengths.extend(std::iter::repeat_n(t / n as f64, n - 1));
    lengths.push(t / (2 * n) as f64);
    chi_segments(&lengths, bath)
}

/// Closed-form counterpart of [`coherence`], linear in the pulse count.
pub fn coherence_exact(t: f64, n: usize, baths: &BathSet) -> f64 {
    (-baths.baths.iter().map(|b| chi_exact(t, n, b)).sum::<f64>()).exp()
}

/// Closed-form counterpart of [`deer_coherence`].
pub fn deer_coherence_exact(t: f64, n: usize, baths: &BathSet, flipped: Option<usize>) -> f64 {
    let chi: f64 = baths.baths.iter().enumerate().map(|(i, b)| chi_exact(t, if Some(i) == flipped { 0 } else { n }, b)).sum();
    (-chi).exp()
}

/// Time at which a monotone decay crosses `1/e`, by bisection in `ln t`.
fn one_over_e<F: FnMut(f64) -> Result<f64, NoiseError>>(mut f: F) -> Result<f64, NoiseError> {
    let target = (-1.0f64).exp();
    let (mut lo, mut hi) = (1.0, 1.0);
    let mut tries = 0;
    while f(hi)? > target {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(NoiseError::NoDecay);
        }
    }
    while f(lo)? <= target {
        lo *= 0.5;
        tries += 1;
        if tries > 400 {
            return Err(NoiseError::NoDecay);
        }
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if f(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-11 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// `T2(N)` from the quadrature route.
pub fn t2_quadrature(n: usize, baths: &BathSet) -> Result<f64, NoiseError> {
    let seq = DecouplingSequence::cpmg(n, 1.0);
    one_over_e(|t| coherence(t, &seq, baths))
}

/// `T2(N)` from the exact time-domain route.
pub fn t2_exact(n: usize, baths: &BathSet) -> Result<f64, NoiseError> {
    check_even(n)?;
    one_over_e(|t| Ok(coherence_exact(t, n, baths)))
}
