//! Time-bin spin-photon Bell protocol: carving, interferometric photon
//! measurement, single-shot spin readout and Monte Carlo statistics.
//!
//! Joint layout is photon bin (outer: early, late) by spin (inner: up, down),
//! i.e. `[e_up, e_down, l_up, l_down]`. The spin-up state is the bright
//! (reflecting) state for both carving and readout.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{reflection_amplitude, CavityAtomParams};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidParameter { name, reason: reason.into() }
}

/// Weak-coherent time-bin photonic qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinQubit {
    pub bin_delay_ns: f64,
    pub pulse_width_ns: f64,
    pub relative_phase: f64,
    pub mean_photons: f64,
}

impl Default for TimeBinQubit {
    fn default() -> Self {
        Self { bin_delay_ns: 30.0, pulse_width_ns: 5.0, relative_phase: 0.0, mean_photons: 0.008 }
    }
}

impl TimeBinQubit {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.pulse_width_ns > 0.0 && self.pulse_width_ns < self.bin_delay_ns) {
            return Err(invalid("pulse_width_ns", "must satisfy 0 < pulse_width < bin_delay"));
        }
        if !(self.mean_photons >= 0.0) || !self.mean_photons.is_finite() {
            return Err(invalid("mean_photons", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Spin-conditioned reflection amplitudes at the probe frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Carving {
    pub r_up: C64,
    pub r_down: C64,
}

impl Carving {
    pub fn ideal() -> Self {
        Self { r_up: C64::new(1.0, 0.0), r_down: C64::new(0.0, 0.0) }
    }

    /// Bright state fully reflected; dark state reflects `fraction` of the intensity.
    pub fn spurious(fraction: f64) -> Self {
        Self { r_up: C64::new(1.0, 0.0), r_down: C64::new(fraction.sqrt(), 0.0) }
    }

    /// Amplitudes from the cavity model at probe frequency `f_q_ghz`.
    pub fn from_cavity(p_up: &CavityAtomParams, p_down: &CavityAtomParams, f_q_ghz: f64) -> Self {
        let w = std::f64::consts::TAU * f_q_ghz;
        Self { r_up: reflection_amplitude(w, p_up), r_down: reflection_amplitude(w, p_down) }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.r_up.norm() > 1.0 + 1e-12 || self.r_down.norm() > 1.0 + 1e-12 {
            return Err(invalid("carving", "|r| must be <= 1"));
        }
        Ok(())
    }

    fn of(&self, spin: usize) -> C64 {
        if spin == 0 { self.r_up } else { self.r_down }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bin {
    Early,
    Late,
}

impl Bin {
    fn index(self) -> usize {
        match self {
            Bin::Early => 0,
            Bin::Late => 1,
        }
    }
}

/// Single-photon joint state with an incoherent loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub amplitudes: Vector4<C64>,
    pub lost: f64,
}

impl JointState {
    /// `|phi_photon> (x) |->_spin`, photon `(|e> + e^{i phi}|l>)/sqrt2`.
    pub fn initial(relative_phase: f64) -> Self {
        let a = C64::new(0.5, 0.0);
        let b = C64::from_polar(0.5, relative_phase);
        Self { amplitudes: Vector4::new(a, a, b, b), lost: 0.0 }
    }

    pub fn total_probability(&self) -> f64 {
        self.amplitudes.norm_squared() + self.lost
    }

    /// Normalised density matrix of the surviving photon.
    pub fn conditional_density(&self) -> Matrix4<C64> {
        let n = self.amplitudes.norm_squared();
        self.amplitudes * self.amplitudes.adjoint() / C64::new(n, 0.0)
    }
}

/// Reflects one time bin off the spin-dependent cavity; lost weight is tracked.
pub fn carve_step(state: &JointState, carving: &Carving, bin: Bin) -> JointState {
    let mut out = state.clone();
    let b = bin.index();
    for s in 0..2 {
        let k = 2 * b + s;
        let r = carving.of(s);
        let before = out.amplitudes[k].norm_sqr();
        out.amplitudes[k] *= r;
        out.lost += before - out.amplitudes[k].norm_sqr();
    }
    out
}

fn spin_x() -> Matrix2<C64> {
    Matrix2::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0))
}

fn spin_y() -> Matrix2<C64> {
    Matrix2::new(C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0))
}

fn spin_z() -> Matrix2<C64> {
    Matrix2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0))
}

fn on_spin(op: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix2::<C64>::identity().kronecker(op)
}

/// Carving Kraus operator on the `[e, l] x [up, down]` space.
fn carve_kraus(carving: &Carving, bin: Bin) -> Matrix4<C64> {
    let mut k = Matrix4::identity();
    let b = bin.index();
    for s in 0..2 {
        k[(2 * b + s, 2 * b + s)] = carving.of(s);
    }
    k
}

/// Spin-flip pulse with a depolarizing error of probability `p`.
fn mw_pi_channel(rho: &Matrix4<C64>, p: f64) -> Matrix4<C64> {
    let x = on_spin(&spin_x());
    let flipped = &x * rho * &x;
    if p == 0.0 {
        return flipped;
    }
    let y = on_spin(&spin_y());
    let z = on_spin(&spin_z());
    let twirl = (&x * &flipped * &x + &y * &flipped * &y + &z * &flipped * &z + &flipped) * C64::new(0.25, 0.0);
    flipped * C64::new(1.0 - p, 0.0) + twirl * C64::new(p, 0.0)
}

/// Target `(|e down> + e^{i phase}|l up>)/sqrt2`.
pub fn bell_target(phase: f64) -> Vector4<C64> {
    let r = FRAC_1_SQRT_2;
    Vector4::new(C64::new(0.0, 0.0), C64::new(r, 0.0), C64::from_polar(r, phase), C64::new(0.0, 0.0))
}

pub fn state_fidelity(rho: &Matrix4<C64>, target: &Vector4<C64>) -> f64 {
    (target.adjoint() * rho * target)[(0, 0)].re
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellOutcome {
    /// Photon-survival-conditioned joint density matrix.
    pub rho: Matrix4<C64>,
    /// Probability that a single photon survives both carving steps.
    pub heralding_probability: f64,
    pub fidelity: f64,
}

/// Early carve, spin pi pulse with depolarizing error, late carve (single-photon sector).
pub fn run_bell_sequence(q: &TimeBinQubit, carving: &Carving, mw_pi_error: f64) -> Result<BellOutcome, ProtocolError> {
    q.validate()?;
    carving.validate()?;
    if !(0.0..=1.0).contains(&mw_pi_error) {
        return Err(invalid("mw_pi_error", "must lie in [0, 1]"));
    }
    let psi = JointState::initial(q.relative_phase).amplitudes;
    let mut rho = psi * psi.adjoint();
    let ke = carve_kraus(carving, Bin::Early);
    rho = &ke * rho * ke.adjoint();
    rho = mw_pi_channel(&rho, mw_pi_error);
    let kl = carve_kraus(carving, Bin::Late);
    rho = &kl * rho * kl.adjoint();
    let p = rho.trace().re;
    let rho = rho / C64::new(p, 0.0);
    let fidelity = state_fidelity(&rho, &bell_target(q.relative_phase));
    Ok(BellOutcome { rho, heralding_probability: p, fidelity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Fraction of X-basis detections landing in the overlapping middle window.
pub const X_ACCEPTANCE: f64 = 0.25;

/// Photon outcome distribution for a single-photon amplitude pair `(a_e, a_l)`.
///
/// Z returns `[p_e, p_l]`; X returns `[p_plus, p_minus]` inside the accepted
/// window (normalised; the acceptance factor is applied at heralding).
pub fn measure_photon(a_e: C64, a_l: C64, basis: Basis, interferometer_phase: f64) -> [f64; 2] {
    let n = a_e.norm_sqr() + a_l.norm_sqr();
    if n == 0.0 {
        return [0.0, 0.0];
    }
    match basis {
        Basis::Z => [a_e.norm_sqr() / n, a_l.norm_sqr() / n],
        Basis::X => {
            let ph = C64::from_polar(1.0, interferometer_phase);
            let p = (a_e + ph * a_l).norm_sqr() / (2.0 * n);
            [p, 1.0 - p]
        }
    }
}

/// Counting model for single-shot spin readout.
///
/// The bright state scatters until a spin flip, geometric with parameter
/// `spin_flip_per_scatter`, capped by the readout window; each scattered
/// photon is detected with `collection_efficiency`. Both states add Poisson
/// background `dark_counts`. Counts `>= threshold` declare spin up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub mean_detected_photons_bright: f64,
    pub spin_flip_per_scatter: f64,
    pub collection_efficiency: f64,
    pub dark_counts: f64,
    pub threshold: u32,
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.threshold < 1 {
            return Err(invalid("threshold", "must be >= 1"));
        }
        for (name, v) in [("spin_flip_per_scatter", self.spin_flip_per_scatter), ("collection_efficiency", self.collection_efficiency)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(name, "must lie in (0, 1]"));
            }
        }
        if !(self.mean_detected_photons_bright >= 0.0) || !(self.dark_counts >= 0.0) {
            return Err(invalid("counts", "expected counts must be >= 0"));
        }
        Ok(())
    }

    /// Scattering events available in the readout window.
    pub fn window_scatters(&self) -> u64 {
        (self.mean_detected_photons_bright / self.collection_efficiency).round() as u64
    }

    /// Exact `(F_up, F_down)`.
    pub fn fidelities(&self) -> (f64, f64) {
        let t = self.threshold as usize;
        // distribution of detected bright photons, capped at t
        let s = self.window_scatters();
        let (p, eta) = (self.spin_flip_per_scatter, self.collection_efficiency);
        let mut alive = vec![0.0; t + 1];
        alive[0] = 1.0;
        let mut done = vec![0.0; t + 1];
        for _ in 0..s {
            let mut next = vec![0.0; t + 1];
            for (k, &w) in alive.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                // flip before this scatter ends the signal
                done[k] += w * p;
                let go = w * (1.0 - p);
                next[(k + 1).min(t)] += go * eta;
                next[k] += go * (1.0 - eta);
            }
            alive = next;
            if alive.iter().sum::<f64>() < 1e-16 {
                break;
            }
        }
        let bright: Vec<f64> = (0..=t).map(|k| alive[k] + done[k]).collect();
        let dark = poisson_cdf_table(self.dark_counts, t);
        let mut below = 0.0;
        for (k, &pb) in bright.iter().enumerate().take(t) {
            below += pb * dark[t - 1 - k];
        }
        (1.0 - below, dark[t - 1])
    }

    /// Declared state (`true` = up) and detected count.
    pub fn sample(&self, spin_up: bool, rng: &mut impl Rng) -> (bool, u64) {
        let mut count = if self.dark_counts > 0.0 { Poisson::new(self.dark_counts).expect("rate").sample(rng) as u64 } else { 0 };
        if spin_up {
            let g = if self.spin_flip_per_scatter >= 1.0 { 0 } else { Geometric::new(self.spin_flip_per_scatter).expect("p").sample(rng) };
            let l = g.min(self.window_scatters());
            count += Binomial::new(l, self.collection_efficiency).expect("eta").sample(rng);
        }
        (count >= self.threshold as u64, count)
    }

    /// Bisects the flip probability so that `F_up` hits `target`.
    pub fn with_f_up(mut self, target: f64) -> Self {
        let (mut lo, mut hi) = (1e-7f64.ln(), 0.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            self.spin_flip_per_scatter = mid.exp();
            if self.fidelities().0 > target { lo = mid } else { hi = mid }
        }
        self.spin_flip_per_scatter = (0.5 * (lo + hi)).exp();
        self
    }

    /// Sets the background so that `F_down` hits `target`.
    pub fn with_f_down(mut self, target: f64) -> Self {
        let (mut lo, mut hi) = (0.0f64, 50.0f64);
        for _ in 0..100 {
            self.dark_counts = 0.5 * (lo + hi);
            if self.fidelities().1 > target { lo = self.dark_counts } else { hi = self.dark_counts }
        }
        self
    }

    /// Aligned field, high cyclicity, threshold 13: mean fidelity 0.97.
    pub fn aligned() -> Self {
        let base = Self { mean_detected_photons_bright: 40.0, spin_flip_per_scatter: 1e-3, collection_efficiency: 0.05, dark_counts: 1.0, threshold: 13 };
        let f_down = base.fidelities().1;
        base.with_f_up(2.0 * 0.97 - f_down)
    }

    /// Misaligned field, threshold of two photons: mean fidelity 0.92.
    pub fn misaligned() -> Self {
        let base = Self { mean_detected_photons_bright: 20.0, spin_flip_per_scatter: 1e-2, collection_efficiency: 0.05, dark_counts: 0.1, threshold: 2 };
        let f_down = base.fidelities().1;
        base.with_f_up(2.0 * 0.92 - f_down)
    }

    /// Spin-photon experiment: `F_up = 0.85`, `F_down = 0.84`.
    pub fn spin_photon() -> Self {
        Self { mean_detected_photons_bright: 20.0, spin_flip_per_scatter: 1e-2, collection_efficiency: 0.05, dark_counts: 0.0, threshold: 1 }
            .with_f_down(0.84)
            .with_f_up(0.85)
    }

    /// Perfect readout.
    pub fn ideal() -> Self {
        Self { mean_detected_photons_bright: 1e3, spin_flip_per_scatter: 1e-12, collection_efficiency: 1.0, dark_counts: 0.0, threshold: 1 }
    }
}

/// `P(Poisson(mu) <= k)` for `k = 0..n-1` (index `n` holds 1).
fn poisson_cdf_table(mu: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut term = (-mu).exp();
    let mut acc = 0.0;
    for k in 0..n {
        acc += term;
        out.push(acc.min(1.0));
        term *= mu / (k + 1) as f64;
    }
    out.push(1.0);
    out
}

/// Samples a spin readout for a spin density matrix measured in `basis`.
pub fn simulate_spin_readout(spin_rho: &Matrix2<C64>, basis: Basis, model: &ReadoutModel, rng: &mut impl Rng) -> (bool, u64) {
    let p_up = match basis {
        Basis::Z => spin_rho[(0, 0)].re,
        // rotate -> onto up before the bright/dark readout
        Basis::X => 0.5 + spin_rho[(0, 1)].re,
    };
    let up = rng.random::<f64>() < p_up;
    model.sample(up, rng)
}

/// Outcome counts for one basis: `cells[photon][spin]`, spin 0 = up / ->.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub basis: Basis,
    pub cells: [[u64; 2]; 2],
    /// Heralded events; equals the cell sum.
    pub shots: u64,
    /// Attempted shots before heralding.
    pub trials: u64,
    pub double_heralds: u64,
}

impl Histogram {
    pub fn new(basis: Basis) -> Self {
        Self { basis, cells: [[0; 2]; 2], shots: 0, trials: 0, double_heralds: 0 }
    }

    pub fn add(&mut self, photon: usize, spin: usize) {
        self.cells[photon][spin] += 1;
        self.shots += 1;
    }

    /// Associative, order-independent merge.
    pub fn merge(&mut self, other: &Histogram) {
        for p in 0..2 {
            for s in 0..2 {
                self.cells[p][s] += other.cells[p][s];
            }
        }
        self.shots += other.shots;
        self.trials += other.trials;
        self.double_heralds += other.double_heralds;
    }

    /// Cell frequencies in `[p00, p01, p10, p11]` order.
    pub fn probabilities(&self) -> [f64; 4] {
        let n = self.shots.max(1) as f64;
        [self.cells[0][0] as f64 / n, self.cells[0][1] as f64 / n, self.cells[1][0] as f64 / n, self.cells[1][1] as f64 / n]
    }

    pub fn labels(&self) -> ([&'static str; 2], [&'static str; 2]) {
        match self.basis {
            Basis::Z => (["early", "late"], ["up", "down"]),
            Basis::X => (["plus", "minus"], ["right", "left"]),
        }
    }

    /// CSV rows `basis,photon_outcome,spin_outcome,counts` (no header).
    pub fn csv_rows(&self) -> String {
        let (ph, sp) = self.labels();
        let b = match self.basis {
            Basis::Z => "ZZ",
            Basis::X => "XX",
        };
        let mut s = String::new();
        for p in 0..2 {
            for q in 0..2 {
                s.push_str(&format!("{b},{},{},{}\n", ph[p], sp[q], self.cells[p][q]));
            }
        }
        s
    }
}

/// Monte Carlo configuration beyond the source and carving amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// End-to-end photon detection efficiency.
    pub detection_efficiency: f64,
    /// Background detection probability per shot.
    pub detector_dark_probability: f64,
    pub mw_pi_error: f64,
    pub interferometer_phase: f64,
}

/// Depolarizing probability per protocol pi pulse: assumed, not derived.
pub const DEFAULT_MW_PI_ERROR: f64 = 0.01;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { detection_efficiency: 0.4, detector_dark_probability: 0.0, mw_pi_error: DEFAULT_MW_PI_ERROR, interferometer_phase: 0.0 }
    }
}

impl ExperimentConfig {
    pub fn ideal() -> Self {
        Self { detection_efficiency: 1.0, detector_dark_probability: 0.0, mw_pi_error: 0.0, interferometer_phase: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        for (name, v) in [
            ("detection_efficiency", self.detection_efficiency),
            ("detector_dark_probability", self.detector_dark_probability),
            ("mw_pi_error", self.mw_pi_error),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Pure state of the spin and `k` photons, each photon in modes
/// `{e, l, lost_e, lost_l}`; spin is the fastest index.
struct MultiPhoton {
    k: usize,
    amps: Vec<C64>,
}

impl MultiPhoton {
    fn new(k: usize, phase: f64) -> Self {
        let dim = 2 * 4usize.pow(k as u32);
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        let norm = (0.5f64).powf(0.5 * (k + 1) as f64);
        for (idx, a) in amps.iter_mut().enumerate() {
            let mut rest = idx / 2;
            let mut val = C64::new(norm, 0.0);
            for _ in 0..k {
                match rest % 4 {
                    0 => {}
                    1 => val *= C64::from_polar(1.0, phase),
                    _ => val = C64::new(0.0, 0.0),
                }
                rest /= 4;
            }
            *a = val;
        }
        Self { k, amps }
    }

    fn mode(idx: usize, photon: usize) -> usize {
        (idx / 2 / 4usize.pow(photon as u32)) % 4
    }

    fn with_mode(idx: usize, photon: usize, m: usize) -> usize {
        let stride = 2 * 4usize.pow(photon as u32);
        idx - Self::mode(idx, photon) * stride + m * stride
    }

    fn carve(&mut self, carving: &Carving, bin: usize) {
        let old = self.amps.clone();
        for a in self.amps.iter_mut() {
            *a = C64::new(0.0, 0.0);
        }
        // photons sharing a bin reflect independently off the same spin
        for (idx, &a) in old.iter().enumerate() {
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            let spin = idx % 2;
            let r = carving.of(spin);
            let t = (1.0 - r.norm_sqr()).max(0.0).sqrt();
            let mut branches = vec![(idx, a)];
            for p in 0..self.k {
                let mut next = Vec::with_capacity(branches.len() * 2);
                for (j, w) in branches {
                    if Self::mode(j, p) == bin {
                        next.push((j, w * r));
                        next.push((Self::with_mode(j, p, 2 + bin), w * t));
                    } else {
                        next.push((j, w));
                    }
                }
                branches = next;
            }
            for (j, w) in branches {
                self.amps[j] += w;
            }
        }
    }

    fn spin_op(&mut self, op: &Matrix2<C64>) {
        for i in (0..self.amps.len()).step_by(2) {
            let (u, d) = (self.amps[i], self.amps[i + 1]);
            self.amps[i] = op[(0, 0)] * u + op[(0, 1)] * d;
            self.amps[i + 1] = op[(1, 0)] * u + op[(1, 1)] * d;
        }
    }

    /// Applies photon Kraus operator rows `m[out_mode] = sum_in coeff * in_mode`
    /// with the photon index collapsed to mode 0 afterwards.
    fn apply_photon(&self, photon: usize, row: &[C64; 4]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.amps.len()];
        for (idx, &a) in self.amps.iter().enumerate() {
            let m = Self::mode(idx, photon);
            if row[m] != C64::new(0.0, 0.0) {
                out[Self::with_mode(idx, photon, 0)] += row[m] * a;
            }
        }
        out
    }

    fn spin_density(&self) -> Matrix2<C64> {
        let mut rho = Matrix2::<C64>::zeros();
        for i in (0..self.amps.len()).step_by(2) {
            let v = [self.amps[i], self.amps[i + 1]];
            for a in 0..2 {
                for b in 0..2 {
                    rho[(a, b)] += v[a] * v[b].conj();
                }
            }
        }
        let tr = rho.trace();
        rho / tr
    }
}

/// Detection outcome of one photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhotonClick {
    None,
    Outcome(usize),
    Side,
}

fn measure_photon_sampled(state: &mut MultiPhoton, photon: usize, basis: Basis, cfg: &ExperimentConfig, rng: &mut impl Rng) -> PhotonClick {
    let z = C64::new(0.0, 0.0);
    let eta = cfg.detection_efficiency;
    let se = C64::new(eta.sqrt(), 0.0);
    let mut kraus: Vec<(PhotonClick, [C64; 4])> = Vec::new();
    match basis {
        Basis::Z => {
            kraus.push((PhotonClick::Outcome(0), [se, z, z, z]));
            kraus.push((PhotonClick::Outcome(1), [z, se, z, z]));
        }
        Basis::X => {
            let a = C64::new((eta * X_ACCEPTANCE / 2.0).sqrt(), 0.0);
            let ph = C64::from_polar(1.0, cfg.interferometer_phase);
            kraus.push((PhotonClick::Outcome(0), [a, a * ph, z, z]));
            kraus.push((PhotonClick::Outcome(1), [a, -a * ph, z, z]));
            let side = C64::new((eta * (1.0 - X_ACCEPTANCE)).sqrt(), 0.0);
            kraus.push((PhotonClick::Side, [side, z, z, z]));
            kraus.push((PhotonClick::Side, [z, side, z, z]));
        }
    }
    let miss = C64::new((1.0 - eta).sqrt(), 0.0);
    let one = C64::new(1.0, 0.0);
    kraus.push((PhotonClick::None, [miss, z, z, z]));
    kraus.push((PhotonClick::None, [z, miss, z, z]));
    kraus.push((PhotonClick::None, [z, z, one, z]));
    kraus.push((PhotonClick::None, [z, z, z, one]));

    let branches: Vec<(PhotonClick, Vec<C64>, f64)> = kraus
        .iter()
        .map(|(click, row)| {
            let v = state.apply_photon(photon, row);
            let p = v.iter().map(|a| a.norm_sqr()).sum::<f64>();
            (*click, v, p)
        })
        .collect();
    let total: f64 = branches.iter().map(|b| b.2).sum();
    let mut u = rng.random::<f64>() * total;
    let last = branches.iter().rposition(|b| b.2 > 0.0).unwrap_or(0);
    for (i, (click, v, p)) in branches.into_iter().enumerate() {
        if u < p || i == last {
            let n = p.sqrt();
            state.amps = v.into_iter().map(|a| a / n).collect();
            return click;
        }
        u -= p;
    }
    unreachable!("probabilities sum to total")
}

fn pauli_error(p: f64, rng: &mut impl Rng) -> Option<Matrix2<C64>> {
    if p == 0.0 {
        return None;
    }
    let u = rng.random::<f64>();
    if u < 0.25 * p {
        Some(spin_x())
    } else if u < 0.5 * p {
        Some(spin_y())
    } else if u < 0.75 * p {
        Some(spin_z())
    } else {
        None
    }
}

const SHARD: u64 = 1 << 16;

/// Monte Carlo of the full protocol, `shots` attempts per basis.
///
/// Shots are split into fixed-size shards, each driven by its own stream of
/// the seeded generator, so results do not depend on evaluation order.
pub fn run_experiment(
    q: &TimeBinQubit,
    carving: &Carving,
    readout: &ReadoutModel,
    cfg: &ExperimentConfig,
    shots: u64,
    bases: &[Basis],
    seed: u64,
) -> Result<Vec<Histogram>, ProtocolError> {
    q.validate()?;
    carving.validate()?;
    readout.validate()?;
    cfg.validate()?;
    if shots == 0 {
        return Err(invalid("shots", "must be > 0"));
    }
    let poisson = if q.mean_photons > 0.0 { Some(Poisson::new(q.mean_photons).expect("mean")) } else { None };
    let mut out = Vec::with_capacity(bases.len());
    for (bi, &basis) in bases.iter().enumerate() {
        let mut hist = Histogram::new(basis);
        let n_shards = shots.div_ceil(SHARD);
        for shard in 0..n_shards {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((bi as u64) << 32) | shard);
            let count = SHARD.min(shots - shard * SHARD);
            let mut part = Histogram::new(basis);
            part.trials = count;
            for _ in 0..count {
                let k = poisson.map_or(0, |d| d.sample(&mut rng) as usize);
                let dark = cfg.detector_dark_probability > 0.0 && rng.random::<f64>() < cfg.detector_dark_probability;
                if k == 0 && !dark {
                    continue;
                }
                let mut st = MultiPhoton::new(k, q.relative_phase);
                st.carve(carving, 0);
                st.spin_op(&spin_x());
                if let Some(e) = pauli_error(cfg.mw_pi_error, &mut rng) {
                    st.spin_op(&e);
                }
                st.carve(carving, 1);
                let mut clicks = Vec::new();
                for ph in 0..k {
                    match measure_photon_sampled(&mut st, ph, basis, cfg, &mut rng) {
                        PhotonClick::None => {}
                        c => clicks.push(c),
                    }
                }
                if dark {
                    let outcome = rng.random_range(0..2);
                    let informative = basis == Basis::Z || rng.random::<f64>() < X_ACCEPTANCE;
                    clicks.push(if informative { PhotonClick::Outcome(outcome) } else { PhotonClick::Side });
                }
                if clicks.len() > 1 {
                    part.double_heralds += 1;
                    continue;
                }
                let Some(&PhotonClick::Outcome(photon)) = clicks.first() else { continue };
                let (up, _) = simulate_spin_readout(&st.spin_density(), basis, readout, &mut rng);
                part.add(photon, if up { 0 } else { 1 });
            }
            hist.merge(&part);
        }
        out.push(hist);
    }
    Ok(out)
}

/// Noiseless-readout herald distribution implied by a conditional density matrix.
pub fn analytic_distribution(rho: &Matrix4<C64>, basis: Basis, interferometer_phase: f64) -> [f64; 4] {
    match basis {
        Basis::Z => [rho[(0, 0)].re, rho[(1, 1)].re, rho[(2, 2)].re, rho[(3, 3)].re],
        Basis::X => {
            let r = FRAC_1_SQRT_2;
            let ph = C64::from_polar(1.0, -interferometer_phase);
            let mut out = [0.0; 4];
            for (pi, sgn_p) in [1.0, -1.0].iter().enumerate() {
                for (si, sgn_s) in [1.0, -1.0].iter().enumerate() {
                    let photon = [C64::new(r, 0.0), ph * (r * sgn_p)];
                    let spin = [C64::new(r, 0.0), C64::new(r * sgn_s, 0.0)];
                    let v = Vector4::new(photon[0] * spin[0], photon[0] * spin[1], photon[1] * spin[0], photon[1] * spin[1]);
                    out[2 * pi + si] = (v.adjoint() * rho * v)[(0, 0)].re;
                }
            }
            out
        }
    }
}

/// Applies the readout confusion to a noiseless distribution.
pub fn with_readout(dist: &[f64; 4], f_up: f64, f_down: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for b in 0..2 {
        let (u, d) = (dist[2 * b], dist[2 * b + 1]);
        out[2 * b] = f_up * u + (1.0 - f_down) * d;
        out[2 * b + 1] = (1.0 - f_up) * u + f_down * d;
    }
    out
}

/// Multinomial bootstrap of a statistic over jointly resampled histograms.
pub fn bootstrap<F>(hists: &[Histogram], resamples: usize, seed: u64, statistic: F) -> Result<(f64, f64), ProtocolError>
where
    F: Fn(&[Histogram]) -> f64,
{
    if resamples < 100 {
        return Err(ProtocolError::TooFewResamples(resamples));
    }
    if hists.is_empty() || hists.iter().any(|h| h.shots == 0) {
        return Err(ProtocolError::EmptyHistogram);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let drawn: Vec<Histogram> = hists.iter().map(|h| resample(h, &mut rng)).collect();
        values.push(statistic(&drawn));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

fn resample(h: &Histogram, rng: &mut impl Rng) -> Histogram {
    let p = h.probabilities();
    let mut out = Histogram { cells: [[0; 2]; 2], shots: 0, ..h.clone() };
    // sequential binomials give an exact multinomial draw
    let mut left = h.shots;
    let mut mass = 1.0;
    for (i, &pi) in p.iter().enumerate() {
        let c = if i == 3 || mass <= 0.0 {
            left
        } else {
            let q = (pi / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("prob").sample(rng)
        };
        out.cells[i / 2][i % 2] = c;
        left -= c;
        mass -= pi;
    }
    out.shots = h.shots;
    out
}

/// Dense helper for statistics that need a probability vector.
pub fn as_vector(p: &[f64; 4]) -> DVector<f64> {
    DVector::from_row_slice(p)
}

/// Confusion matrix estimated from simulated calibrations: `m[(declared, true)]`.
pub fn calibrate_confusion(model: &ReadoutModel, repetitions: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(2, 2);
    for (col, up) in [true, false].into_iter().enumerate() {
        let hits = (0..repetitions).filter(|_| model.sample(up, &mut rng).0).count() as f64;
        m[(0, col)] = hits / repetitions as f64;
        m[(1, col)] = 1.0 - m[(0, col)];
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carving_ideal_matches_protocol_states() {
        let s0 = JointState::initial(0.0);
        let s1 = carve_step(&s0, &Carving::ideal(), Bin::Early);
        assert!(s1.amplitudes[1].norm() < 1e-15);
        assert!((s1.total_probability() - 1.0).abs() < 1e-12);
        let rho = mw_pi_channel(&(s1.amplitudes * s1.amplitudes.adjoint()), 0.0);
        // after the flip: (|e down> + |l down> + |l up>)/sqrt3 up to normalisation
        let n = rho.trace().re;
        for k in [1, 2, 3] {
            assert!((rho[(k, k)].re / n - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(rho[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn carving_limits() {
        let s0 = JointState::initial(0.3);
        let one = Carving { r_up: C64::new(1.0, 0.0), r_down: C64::new(1.0, 0.0) };
        assert_eq!(carve_step(&s0, &one, Bin::Late), s0);
        let zero = Carving { r_up: C64::new(0.0, 0.0), r_down: C64::new(0.0, 0.0) };
        let s = carve_step(&carve_step(&s0, &zero, Bin::Early), &zero, Bin::Late);
        assert!(s.amplitudes.norm() < 1e-15 && (s.lost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_bell_state() {
        let out = run_bell_sequence(&TimeBinQubit::default(), &Carving::ideal(), 0.0).unwrap();
        assert!((out.fidelity - 1.0).abs() < 1e-12);
        assert!((out.heralding_probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inverted_phase_gives_orthogonal_state() {
        let q = TimeBinQubit { relative_phase: std::f64::consts::PI, ..TimeBinQubit::default() };
        let out = run_bell_sequence(&q, &Carving::ideal(), 0.0).unwrap();
        assert!(state_fidelity(&out.rho, &bell_target(0.0)) < 1e-12);
        let x0 = analytic_distribution(&run_bell_sequence(&TimeBinQubit::default(), &Carving::ideal(), 0.0).unwrap().rho, Basis::X, 0.0);
        let xpi = analytic_distribution(&out.rho, Basis::X, 0.0);
        assert!((x0[0] - 0.5).abs() < 1e-12 && (xpi[0]).abs() < 1e-12 && (xpi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spurious_reflection_fidelity() {
        let out = run_bell_sequence(&TimeBinQubit::default(), &Carving::spurious(0.1), 0.0).unwrap();
        // amplitudes (1, r, 1, r)/2 after both carves
        assert!((out.fidelity - 1.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn photon_measurement() {
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        assert_eq!(measure_photon(one, z, Basis::Z, 0.0), [1.0, 0.0]);
        let r = C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((measure_photon(r, r, Basis::X, 0.0)[0] - 1.0).abs() < 1e-15);
        for k in 0..16 {
            let phi = 0.4 * k as f64;
            let p = measure_photon(r, C64::from_polar(FRAC_1_SQRT_2, phi), Basis::X, 0.0);
            assert!((p[0] - 0.5 * (1.0 + phi.cos())).abs() < 1e-14);
        }
    }

    #[test]
    fn readout_presets_hit_targets() {
        let a = ReadoutModel::aligned().fidelities();
        assert!((0.5 * (a.0 + a.1) - 0.97).abs() < 1e-6);
        let m = ReadoutModel::misaligned().fidelities();
        assert!((0.5 * (m.0 + m.1) - 0.92).abs() < 1e-6);
        let s = ReadoutModel::spin_photon().fidelities();
        assert!((s.0 - 0.85).abs() < 1e-6 && (s.1 - 0.84).abs() < 1e-6);
    }

    #[test]
    fn confusion_from_sampling() {
        let m = ReadoutModel::spin_photon();
        let c = calibrate_confusion(&m, 100_000, 3);
        assert!((c[(0, 0)] - 0.85).abs() < 0.01 && (c[(1, 1)] - 0.84).abs() < 0.01);
    }

    #[test]
    fn ideal_experiment_populates_target_cells() {
        let q = TimeBinQubit { mean_photons: 0.05, ..TimeBinQubit::default() };
        let h = run_experiment(&q, &Carving::ideal(), &ReadoutModel::ideal(), &ExperimentConfig::ideal(), 200_000, &[Basis::Z], 5).unwrap();
        let p = h[0].probabilities();
        assert_eq!(h[0].cells[0][0] + h[0].cells[1][1], 0);
        assert!((p[1] - 0.5).abs() < 0.03 && (p[2] - 0.5).abs() < 0.03);
    }

    #[test]
    fn deterministic_per_seed() {
        let q = TimeBinQubit { mean_photons: 0.05, ..TimeBinQubit::default() };
        let run = |s| run_experiment(&q, &Carving::spurious(0.1), &ReadoutModel::spin_photon(), &ExperimentConfig::default(), 100_000, &[Basis::Z, Basis::X], s).unwrap();
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn double_heralds_follow_poisson() {
        let n = 0.1;
        let q = TimeBinQubit { mean_photons: n, ..TimeBinQubit::default() };
        let all = Carving { r_up: C64::new(1.0, 0.0), r_down: C64::new(1.0, 0.0) };
        let shots = 400_000;
        let h = run_experiment(&q, &all, &ReadoutModel::ideal(), &ExperimentConfig::ideal(), shots, &[Basis::Z], 1).unwrap();
        let expect = (-n).exp() * n * n / 2.0 * shots as f64;
        let got = h[0].double_heralds as f64;
        // two-photon pulses dominate; three-photon adds n^3/6
        assert!((got - expect).abs() < 5.0 * expect.sqrt() + n.powi(3) / 6.0 * shots as f64, "{got} vs {expect}");
    }

    #[test]
    fn phase_covariance() {
        let base = TimeBinQubit::default();
        let out = run_bell_sequence(&TimeBinQubit { relative_phase: 0.7, ..base }, &Carving::spurious(0.1), 0.02).unwrap();
        let shifted = run_bell_sequence(&TimeBinQubit { relative_phase: 0.7 + 0.4, ..base }, &Carving::spurious(0.1), 0.02).unwrap();
        let a = analytic_distribution(&out.rho, Basis::X, 0.1);
        let b = analytic_distribution(&shifted.rho, Basis::X, 0.1 - 0.4);
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_limits() {
        let mut h = Histogram::new(Basis::Z);
        for _ in 0..50 {
            h.add(0, 1);
        }
        let (m, se) = bootstrap(&[h.clone()], 200, 1, |hs| hs[0].probabilities()[1]).unwrap();
        assert!((m - 1.0).abs() < 1e-15 && se == 0.0);
        assert!(matches!(bootstrap(&[Histogram::new(Basis::Z)], 200, 1, |_| 0.0), Err(ProtocolError::EmptyHistogram)));
        assert!(matches!(bootstrap(&[h], 99, 1, |_| 0.0), Err(ProtocolError::TooFewResamples(99))));
    }

    #[test]
    fn bootstrap_matches_multinomial_error() {
        let mut h = Histogram::new(Basis::Z);
        h.cells = [[300, 700], [600, 400]];
        h.shots = 2000;
        let p = 0.35;
        let (_, se) = bootstrap(&[h], 2000, 4, |hs| hs[0].probabilities()[1]).unwrap();
        let expect = (p * (1.0 - p) / 2000.0f64).sqrt();
        assert!((se / expect - 1.0).abs() < 0.1, "{se} vs {expect}");
    }
}
