//! Stretched-exponential T2 extraction and two-bath global fits.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coherence::coherence_exact;
use super::{BathSet, CoherenceCurve, LorentzianBath, NoiseError};
use crate::fit::{levenberg_marquardt, numeric_jacobian, LmOptions, LmResult};

/// Fit of `A + B exp(-(t/T2)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2Fit {
    pub t2_us: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub residual: f64,
}

fn stretched(p: &[f64], t: f64, beta: f64) -> f64 {
    p[0] + p[1] * (-(t / p[2].exp()).powf(beta)).exp()
}

/// Least-squares T2 with optional fixed stretch exponent.
pub fn t2_extract(curve: &CoherenceCurve, beta_fixed: Option<f64>) -> Result<T2Fit, NoiseError> {
    curve.validate()?;
    let n = curve.signal.len();
    if n < 6 {
        return Err(NoiseError::InsufficientData { what: "points", needed: 6, got: n });
    }
    let (lo, hi) = curve.signal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if hi - lo < 1e-6 * hi.abs().max(1.0) {
        return Err(NoiseError::NoDecay);
    }
    let (ts, ys) = (&curve.total_times_us, &curve.signal);
    let a0 = *ys.last().unwrap();
    let b0 = ys[0] - a0;
    let level = a0 + b0 / std::f64::consts::E;
    let cross = ts.iter().zip(ys).find(|(_, &y)| (y - level) * b0.signum() <= 0.0).map(|(t, _)| *t).unwrap_or(ts[n / 2]);

    let run = |beta0: f64| -> Option<(LmResult, f64)> {
        let res = |p: &[f64]| {
            let beta = beta_fixed.unwrap_or_else(|| p[3]);
            DVector::from_iterator(n, ts.iter().zip(ys).map(|(&t, &y)| stretched(p, t, beta) - y))
        };
        let jac = |p: &[f64]| numeric_jacobian(&res, p, 1e-7);
        let mut x0 = vec![a0, b0, cross.ln()];
        if beta_fixed.is_none() {
            x0.push(beta0);
        }
        let out = levenberg_marquardt(res, jac, &x0, &LmOptions::default()).ok()?;
        let beta = beta_fixed.unwrap_or(out.params.get(3).copied().unwrap_or(beta0));
        Some((out, beta))
    };
    let starts: &[f64] = if beta_fixed.is_some() { &[0.0] } else { &[1.0, 2.0, 3.0] };
    let best = starts
        .iter()
        .filter_map(|&b| run(b))
        .filter(|(r, beta)| r.cost.is_finite() && *beta > 0.0)
        .min_by(|a, b| a.0.cost.total_cmp(&b.0.cost))
        .ok_or(NoiseError::Fit(crate::fit::FitError::Degenerate("no start converged".into())))?;
    let (r, beta) = best;
    if r.params[1].abs() < 1e-6 {
        return Err(NoiseError::NoDecay);
    }
    Ok(T2Fit { t2_us: r.params[2].exp(), a: r.params[0], b: r.params[1], beta, residual: r.cost })
}

/// Slope of `ln T2` against `ln N` by ordinary least squares.
pub fn power_law_exponent(ns: &[usize], t2s: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = t2s.iter().map(|t| t.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathFit {
    /// Fast bath first.
    pub baths: BathSet,
    pub cost: f64,
    /// Condition number of `J^T J` at the optimum (log-parameter space).
    pub condition_number: f64,
    pub starts: usize,
}

/// Global two-bath fit across curves of several pulse counts.
///
/// Parameters are `(b1, ln tau1, b2, ln tau2)`; strengths enter squared so a
/// bath may switch off. Starts come from a fixed grid jittered by `seed`.
pub fn fit_baths(curves: &[CoherenceCurve], seed: u64) -> Result<BathFit, NoiseError> {
    let mut ns: Vec<usize> = curves.iter().map(|c| c.n_pulses).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(NoiseError::InsufficientData { what: "distinct pulse counts", needed: 3, got: ns.len() });
    }
    for c in curves {
        c.validate()?;
        super::check_even(c.n_pulses)?;
    }
    let total: usize = curves.iter().map(|c| c.signal.len()).sum();
    let model = |p: &[f64]| {
        BathSet::new(vec![LorentzianBath::new(p[0], p[1].exp()), LorentzianBath::new(p[2], p[3].exp())])
    };
    let res = |p: &[f64]| {
        let baths = model(p);
        let mut out = Vec::with_capacity(total);
        for c in curves {
            for (&t, &y) in c.total_times_us.iter().zip(&c.signal) {
                out.push(coherence_exact(t, c.n_pulses, &baths) - y);
            }
        }
        DVector::from_vec(out)
    };
    let jac = |p: &[f64]| {
        let mut q = p.to_vec();
        for k in [0, 2] {
            if q[k].abs() < 1e-6 {
                q[k] = 1e-6;
            }
        }
        numeric_jacobian(&res, &q, 1e-6)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::new();
    for &b1 in &[2.0, 20.0] {
        for &t1 in &[0.3f64, 3.0] {
            for &b2 in &[50.0, 400.0] {
                for &t2 in &[100.0f64, 3000.0] {
                    let j = |rng: &mut ChaCha8Rng| 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
                    starts.push(vec![b1 * j(&mut rng), (t1 * j(&mut rng)).ln(), b2 * j(&mut rng), (t2 * j(&mut rng)).ln()]);
                }
            }
        }
    }
    let opts = LmOptions { max_iter: 300, ..LmOptions::default() };
    let best = starts
        .iter()
        .filter_map(|x0| levenberg_marquardt(&res, &jac, x0, &opts).ok())
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(NoiseError::Fit(crate::fit::FitError::Degenerate("no start converged".into())))?;

    let mut pair = [
        LorentzianBath::new(best.params[0].abs(), best.params[1].exp()),
        LorentzianBath::new(best.params[2].abs(), best.params[3].exp()),
    ];
    pair.sort_by(|a, b| a.correlation_tau_us.total_cmp(&b.correlation_tau_us));
    Ok(BathFit { baths: BathSet::new(pair.to_vec()), cost: best.cost, condition_number: best.condition_number(), starts: starts.len() })
}

/// Seeded synthetic curves: `points` samples per pulse count spanning
/// `0.1..2.0 T2(N)`, with additive Gaussian noise of size `noise`.
pub fn simulate_curves(baths: &BathSet, ns: &[usize], points: usize, noise: f64, seed: u64) -> Result<Vec<CoherenceCurve>, NoiseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    ns.iter()
        .map(|&n| {
            let t2 = super::coherence::t2_exact(n, baths)?;
            let ts: Vec<f64> = (0..points).map(|i| t2 * (0.1 + 1.9 * i as f64 / (points - 1) as f64)).collect();
            let signal = ts.iter().map(|&t| coherence_exact(t, n, baths) + noise * rand_distr::Distribution::<f64>::sample(&normal, &mut rng)).collect();
            Ok(CoherenceCurve { total_times_us: ts, signal, n_pulses: n })
        })
        .collect()
}
