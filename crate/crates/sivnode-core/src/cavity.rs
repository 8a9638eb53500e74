//! Cavity-QED reflection spectrum of a single SiV transition in a one-sided cavity.
//!
//! Rates (`kappa_*`, `gamma_atom`) are full linewidths (energy decay rates) and,
//! like all other fields of [`CavityAtomParams`], are stored in angular units
//! (rad/ns). The input-output amplitude uses the half-width field decay rates:
//!
//! `r(w) = 1 - kappa_in / (i(w - w_c) + kappa_total/2 + g^2 / (i(w - w_a) + gamma/2))`
//!
//! With this convention the reflection feature at zero detuning has full width
//! `gamma (1 + C)` with `C = 4 g^2 / (kappa gamma)`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, FitError, LmOptions};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CavityError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("empty frequency grid")]
    EmptyGrid,
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("fit failed: {source}")]
    Fit { source: FitError, last: Option<Box<CavityAtomParams>> },
}

/// Cavity and atom parameters, angular units (rad/ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityAtomParams {
    pub kappa_in: f64,
    pub kappa_total: f64,
    pub omega_cavity: f64,
    pub omega_atom: f64,
    pub g_coupling: f64,
    pub gamma_atom: f64,
}

/// Ratio `kappa_in / kappa_total` leaving roughly 10% residual off-resonant dip reflection.
pub const DEFAULT_COUPLING_RATIO: f64 = 0.45;

impl CavityAtomParams {
    /// Builds from ordinary frequencies (GHz).
    pub fn from_ghz(kappa_in: f64, kappa_total: f64, f_cavity: f64, f_atom: f64, g: f64, gamma: f64) -> Self {
        Self {
            kappa_in: TAU * kappa_in,
            kappa_total: TAU * kappa_total,
            omega_cavity: TAU * f_cavity,
            omega_atom: TAU * f_atom,
            g_coupling: TAU * g,
            gamma_atom: TAU * gamma,
        }
    }

    /// Measured device: g = 5.6, kappa = 33, gamma = 0.1 (all 2pi x GHz), atom at `detuning_ghz` from the cavity.
    pub fn reference_device(detuning_ghz: f64) -> Self {
        Self::from_ghz(DEFAULT_COUPLING_RATIO * 33.0, 33.0, 0.0, detuning_ghz, 5.6, 0.1)
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        let bad = |field, reason: &str| Err(CavityError::InvalidParameter { field, reason: reason.into() });
        if !(self.kappa_in > 0.0) {
            return bad("kappa_in", "must be > 0");
        }
        if !(self.kappa_in <= self.kappa_total) {
            return bad("kappa_in", "must not exceed kappa_total");
        }
        if !(self.g_coupling >= 0.0) {
            return bad("g_coupling", "must be >= 0");
        }
        if !(self.gamma_atom > 0.0) {
            return bad("gamma_atom", "must be > 0");
        }
        if !(self.omega_cavity.is_finite() && self.omega_atom.is_finite()) {
            return bad("omega_cavity", "resonances must be finite");
        }
        Ok(())
    }

    pub fn with_atom_ghz(self, f_atom: f64) -> Self {
        Self { omega_atom: TAU * f_atom, ..self }
    }

    fn to_vec(self) -> [f64; 6] {
        [self.kappa_in, self.kappa_total, self.omega_cavity, self.omega_atom, self.g_coupling, self.gamma_atom]
    }

    fn from_slice(v: &[f64]) -> Self {
        Self { kappa_in: v[0], kappa_total: v[1], omega_cavity: v[2], omega_atom: v[3], g_coupling: v[4], gamma_atom: v[5] }
    }
}

/// Complex reflection amplitude at angular frequency `omega`.
pub fn reflection_amplitude(omega: f64, p: &CavityAtomParams) -> C64 {
    let atom = C64::new(0.5 * p.gamma_atom, omega - p.omega_atom);
    let d = C64::new(0.5 * p.kappa_total, omega - p.omega_cavity) + p.g_coupling * p.g_coupling / atom;
    C64::new(1.0, 0.0) - p.kappa_in / d
}

/// Reflectance at angular frequency `omega`, clamped to 1 against roundoff.
pub fn reflectance(omega: f64, p: &CavityAtomParams) -> f64 {
    reflection_amplitude(omega, p).norm_sqr().min(1.0)
}

pub fn reflectance_ghz(f: f64, p: &CavityAtomParams) -> f64 {
    reflectance(TAU * f, p)
}

/// Purcell-broadened atomic linewidth (angular).
pub fn purcell_linewidth(p: &CavityAtomParams) -> f64 {
    let k = p.kappa_total;
    let d = p.omega_cavity - p.omega_atom;
    p.gamma_atom + 4.0 * p.g_coupling * p.g_coupling / k / (1.0 + 4.0 * d * d / (k * k))
}

pub fn cooperativity(p: &CavityAtomParams) -> f64 {
    4.0 * p.g_coupling * p.g_coupling / (p.kappa_total * p.gamma_atom)
}

/// Interaction is deterministic (C > 1).
pub fn is_deterministic(p: &CavityAtomParams) -> bool {
    cooperativity(p) > 1.0
}

/// Full width (angular) of the atomic reflection feature, measured from the
/// change in reflectance caused by the atom. Meaningful for `omega_atom == omega_cavity`.
pub fn feature_fwhm(p: &CavityAtomParams) -> f64 {
    let bare = CavityAtomParams { g_coupling: 0.0, ..*p };
    let feature = |w: f64| (reflectance(w, p) - reflectance(w, &bare)).abs();
    let w0 = p.omega_atom;
    let half = 0.5 * feature(w0);
    let edge = |dir: f64| {
        let mut lo = 0.0;
        let mut hi = 0.5 * purcell_linewidth(p).max(p.gamma_atom);
        while feature(w0 + dir * hi) > half {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if feature(w0 + dir * mid) > half {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    edge(1.0) + edge(-1.0)
}

/// Reflectance samples on an ordinary-frequency grid (GHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    pub frequencies: Vec<f64>,
    pub reflectance: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl SpectrumTrace {
    pub fn validate(&self) -> Result<(), CavityError> {
        if self.frequencies.len() != self.reflectance.len() {
            return Err(CavityError::InvalidTrace("frequency and reflectance lengths differ".into()));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.frequencies.len() || s.iter().any(|v| !(*v > 0.0)) {
                return Err(CavityError::InvalidTrace("sigma must be positive with matching length".into()));
            }
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CavityError::InvalidTrace("frequencies must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn simulate(grid_ghz: &[f64], p: &CavityAtomParams) -> Self {
        Self { frequencies: grid_ghz.to_vec(), reflectance: grid_ghz.iter().map(|&f| reflectance_ghz(f, p)).collect(), sigma: None }
    }

    /// Copy with seeded multiplicative Gaussian noise of relative size `rel`.
    pub fn with_noise(&self, rel: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let reflectance = self.reflectance.iter().map(|r| r * (1.0 + rel * n.sample(&mut rng))).collect();
        Self { frequencies: self.frequencies.clone(), reflectance, sigma: self.sigma.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_ghz,reflectance,sigma\n");
        for (i, (f, r)) in self.frequencies.iter().zip(&self.reflectance).enumerate() {
            let s = self.sigma.as_ref().map(|s| format!("{:.9e}", s[i])).unwrap_or_default();
            out.push_str(&format!("{f:.9e},{r:.9e},{s}\n"));
        }
        out
    }
}

/// Evenly spaced grid of `n` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Spin-resolved spectra and their absolute difference.
pub fn spin_spectrum(p_up: &CavityAtomParams, p_down: &CavityAtomParams, grid_ghz: &[f64]) -> (SpectrumTrace, SpectrumTrace, Vec<f64>) {
    let up = SpectrumTrace::simulate(grid_ghz, p_up);
    let down = SpectrumTrace::simulate(grid_ghz, p_down);
    let contrast = up.reflectance.iter().zip(&down.reflectance).map(|(a, b)| (a - b).abs()).collect();
    (up, down, contrast)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub f_q_ghz: f64,
    pub peak_contrast: f64,
    /// Set when the spin states are spectrally indistinguishable.
    pub degenerate: bool,
}

/// Probe frequency of maximal spin contrast; ties resolve toward the midpoint of the atomic lines.
pub fn optimal_probe(p_up: &CavityAtomParams, p_down: &CavityAtomParams, grid_ghz: &[f64]) -> Result<ProbePoint, CavityError> {
    if grid_ghz.is_empty() {
        return Err(CavityError::EmptyGrid);
    }
    let (_, _, contrast) = spin_spectrum(p_up, p_down, grid_ghz);
    let mid = 0.5 * (p_up.omega_atom + p_down.omega_atom) / TAU;
    let mut best = 0;
    for i in 1..grid_ghz.len() {
        let better = contrast[i] > contrast[best] + 1e-15
            || ((contrast[i] - contrast[best]).abs() <= 1e-15 && (grid_ghz[i] - mid).abs() < (grid_ghz[best] - mid).abs());
        if better {
            best = i;
        }
    }
    let peak = contrast[best];
    Ok(ProbePoint { f_q_ghz: grid_ghz[best], peak_contrast: peak, degenerate: peak <= 1e-12 })
}

/// Spin-split pair: the two atomic lines sit at `center_ghz +/- splitting_ghz / 2` (up above).
pub fn spin_pair(base: &CavityAtomParams, center_ghz: f64, splitting_ghz: f64) -> (CavityAtomParams, CavityAtomParams) {
    (base.with_atom_ghz(center_ghz + 0.5 * splitting_ghz), base.with_atom_ghz(center_ghz - 0.5 * splitting_ghz))
}

/// Index of each fit parameter in the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CavityParam {
    KappaIn = 0,
    KappaTotal = 1,
    OmegaCavity = 2,
    OmegaAtom = 3,
    G = 4,
    Gamma = 5,
}

/// Parameters held fixed during a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMask {
    pub frozen: [bool; 6],
}

impl FitMask {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn freeze(mut self, p: CavityParam) -> Self {
        self.frozen[p as usize] = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub params: CavityAtomParams,
    /// Weighted sum of squared residuals.
    pub residual: f64,
    pub iterations: usize,
}

fn amplitude_gradient(omega: f64, p: &[f64; 6]) -> (C64, [C64; 6]) {
    let [kl, kt, wc, wa, g, ga] = *p;
    let i = C64::new(0.0, 1.0);
    let a = C64::new(0.5 * ga, omega - wa);
    let d = C64::new(0.5 * kt, omega - wc) + g * g / a;
    let r = C64::new(1.0, 0.0) - kl / d;
    let dr_dd = kl / (d * d);
    let dd_da = -g * g / (a * a);
    let grads = [
        -1.0 / d,
        dr_dd * 0.5,
        dr_dd * (-i),
        dr_dd * dd_da * (-i),
        dr_dd * (2.0 * g / a),
        dr_dd * dd_da * 0.5,
    ];
    (r, grads)
}

/// Weighted least-squares fit of the reflection model to a trace.
pub fn fit_spectrum(trace: &SpectrumTrace, initial: &CavityAtomParams, mask: FitMask) -> Result<SpectrumFit, CavityError> {
    trace.validate()?;
    if trace.frequencies.len() < 5 {
        return Err(CavityError::InvalidTrace("at least 5 points required".into()));
    }
    let (lo, hi) = trace.reflectance.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    if hi - lo < 1e-12 {
        return Err(CavityError::Fit { source: FitError::Degenerate("constant trace".into()), last: None });
    }
    let free: Vec<usize> = (0..6).filter(|&k| !mask.frozen[k]).collect();
    let base = initial.to_vec();
    let w: Vec<f64> = match &trace.sigma {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; trace.frequencies.len()],
    };
    let full = |x: &[f64]| {
        let mut v = base;
        for (j, &k) in free.iter().enumerate() {
            v[k] = x[j];
        }
        v
    };
    let residual = |x: &[f64]| {
        let v = full(x);
        let p = CavityAtomParams::from_slice(&v);
        DVector::from_iterator(
            trace.frequencies.len(),
            trace.frequencies.iter().zip(&trace.reflectance).zip(&w).map(|((&f, &y), &wi)| wi * (reflection_amplitude(TAU * f, &p).norm_sqr() - y)),
        )
    };
    let jacobian = |x: &[f64]| {
        let v = full(x);
        let mut jac = DMatrix::zeros(trace.frequencies.len(), free.len());
        for (row, (&f, &wi)) in trace.frequencies.iter().zip(&w).enumerate() {
            let (r, grads) = amplitude_gradient(TAU * f, &v);
            for (j, &k) in free.iter().enumerate() {
                jac[(row, j)] = wi * 2.0 * (r.conj() * grads[k]).re;
            }
        }
        jac
    };
    let x0: Vec<f64> = free.iter().map(|&k| base[k]).collect();
    match levenberg_marquardt(residual, jacobian, &x0, &LmOptions::default()) {
        Ok(res) => Ok(SpectrumFit { params: CavityAtomParams::from_slice(&full(&res.params)), residual: res.cost, iterations: res.iterations }),
        Err(e) => {
            let last = match &e {
                FitError::NonConvergence { last, .. } => Some(Box::new(CavityAtomParams::from_slice(&full(last)))),
                _ => None,
            };
            Err(CavityError::Fit { source: e, last })
        }
    }
}

/// Both stages of the linewidth-then-coupling workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageFit {
    pub far_detuned: SpectrumFit,
    pub resonant: SpectrumFit,
}

/// Fits a far-detuned trace for `kappa_in`, `kappa_total` and `gamma`, then
/// freezes them and fits the coupling (and line positions) on resonance.
pub fn fit_two_stage(far: &SpectrumTrace, resonant: &SpectrumTrace, far_initial: &CavityAtomParams, resonant_initial: &CavityAtomParams) -> Result<TwoStageFit, CavityError> {
    let far_detuned = fit_spectrum(far, far_initial, FitMask::free())?;
    let f = far_detuned.params;
    let seeded = CavityAtomParams { kappa_in: f.kappa_in, kappa_total: f.kappa_total, gamma_atom: f.gamma_atom, ..*resonant_initial };
    let mask = FitMask::free().freeze(CavityParam::KappaIn).freeze(CavityParam::KappaTotal).freeze(CavityParam::Gamma);
    let resonant = fit_spectrum(resonant, &seeded, mask)?;
    Ok(TwoStageFit { far_detuned, resonant })
}
