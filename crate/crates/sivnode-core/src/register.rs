//! Electron (SiV) tensor 13C two-spin register under dynamical-decoupling gates.
//!
//! Basis `{|up,up>, |up,down>, |down,up>, |down,down>}` (electron outer). In the
//! frame rotating at the electron qubit frequency the nuclear spin sees, for
//! electron state `s = +1 (up) / -1 (down)`,
//!
//! `h_s = 2 pi 1e-3 [ (w_L + s A_par/2) I_z + s (A_perp/2) I_x ]`   (rad/us, inputs in kHz).
//!
//! Rotation axes in [`GateReport`] follow the gate-table convention
//! `U = cos(phi/2) + i sin(phi/2) n.sigma`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix2, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, numeric_jacobian, FitError, LmOptions};
use crate::noise::RfHeatingPenalty;
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegisterError {
    #[error("sequence leaves the electron flipped (off-block norm {0:.2e})")]
    NotBlockDiagonal(f64),
    #[error("invalid sequence event {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("calibration failed: {0}")]
    Calibration(#[from] FitError),
}

/// Hyperfine couplings and nuclear Larmor frequency (kHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineParams {
    pub a_parallel_khz: f64,
    pub a_perp_khz: f64,
    pub nuclear_larmor_khz: f64,
}

/// Calibrated couplings; see `fixtures/hyperfine_calibration.json`.
pub const CALIBRATED_HYPERFINE: HyperfineParams =
    HyperfineParams { a_parallel_khz: 1469.756, a_perp_khz: 391.476, nuclear_larmor_khz: 1997.182 };

/// Pulse spacing `2 tau` of the maximally entangling N=8 gate: tau in us.
pub const TAU_ENTANGLING_US: f64 = 2.859;
/// Same gate as quoted alongside the initialisation gate.
pub const TAU_ENTANGLING_ALT_US: f64 = 2.851;
pub const TAU_UNCONDITIONAL_US: f64 = 0.731;
pub const TAU_INIT_US: f64 = 2.857;

impl Default for HyperfineParams {
    fn default() -> Self {
        CALIBRATED_HYPERFINE
    }
}

impl HyperfineParams {
    pub fn validate(&self) -> Result<(), RegisterError> {
        if !(self.nuclear_larmor_khz >= 0.0) || !self.a_parallel_khz.is_finite() || !self.a_perp_khz.is_finite() {
            return Err(RegisterError::InvalidEvent { index: 0, reason: "nuclear_larmor_khz must be >= 0 and couplings finite".into() });
        }
        Ok(())
    }

    /// Nuclear Hamiltonian (rad/us) for electron state `s = +1/-1`.
    pub fn nuclear_hamiltonian(&self, s: f64) -> Matrix2<C64> {
        let k = TAU * 1e-3;
        let z = k * (self.nuclear_larmor_khz + s * self.a_parallel_khz / 2.0) / 2.0;
        let x = k * s * self.a_perp_khz / 4.0;
        Matrix2::new(c(z), c(x), c(x), c(-z))
    }

    /// Precession frequency (rad/us) of the nucleus with the electron in state `s`.
    pub fn precession(&self, s: f64) -> f64 {
        let k = TAU * 1e-3;
        k * (self.nuclear_larmor_khz + s * self.a_parallel_khz / 2.0).hypot(s * self.a_perp_khz / 2.0)
    }

    pub fn zero_coupling(larmor_khz: f64) -> Self {
        Self { a_parallel_khz: 0.0, a_perp_khz: 0.0, nuclear_larmor_khz: larmor_khz }
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// One timed element of a two-spin pulse program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SequenceEvent {
    Delay { duration_us: f64 },
    /// Instantaneous electron pi pulse about an equatorial axis.
    MwPi { phase_rad: f64 },
    /// Electron rotation; `duration_us == 0` is instantaneous.
    MwPulse { angle_rad: f64, phase_rad: f64, duration_us: f64 },
    /// Lab-frame transverse nuclear drive `rabi cos(2 pi f t + phase) I_x`.
    RfPulse { frequency_khz: f64, rabi_khz: f64, duration_us: f64, phase_rad: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoSpinSequence {
    pub events: Vec<SequenceEvent>,
    /// Integration step for time-dependent drives (us).
    #[serde(default = "default_step")]
    pub rf_step_us: f64,
}

fn default_step() -> f64 {
    1e-3
}

impl TwoSpinSequence {
    pub fn new(events: Vec<SequenceEvent>) -> Self {
        Self { events, rf_step_us: default_step() }
    }

    /// `N` ideal pi pulses in units `tau - pi - 2tau - pi - tau`.
    pub fn decoupling(n_pulses: usize, tau_us: f64) -> Self {
        let mut ev = Vec::with_capacity(2 * n_pulses + 1);
        ev.push(SequenceEvent::Delay { duration_us: tau_us });
        for k in 0..n_pulses {
            ev.push(SequenceEvent::MwPi { phase_rad: 0.0 });
            let wait = if k + 1 == n_pulses { tau_us } else { 2.0 * tau_us };
            ev.push(SequenceEvent::Delay { duration_us: wait });
        }
        Self::new(ev)
    }

    pub fn validate(&self) -> Result<(), RegisterError> {
        for (index, e) in self.events.iter().enumerate() {
            let d = match *e {
                SequenceEvent::Delay { duration_us } => duration_us,
                SequenceEvent::MwPi { .. } => 0.0,
                SequenceEvent::MwPulse { duration_us, .. } => duration_us,
                SequenceEvent::RfPulse { duration_us, .. } => duration_us,
            };
            if !(d >= 0.0) || !d.is_finite() {
                return Err(RegisterError::InvalidEvent { index, reason: "durations must be finite and >= 0".into() });
            }
        }
        if !(self.rf_step_us > 0.0) {
            return Err(RegisterError::InvalidEvent { index: 0, reason: "rf_step_us must be > 0".into() });
        }
        Ok(())
    }

    pub fn pi_pulse_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, SequenceEvent::MwPi { .. })).count()
    }
}

/// `exp(-i t h)` for a 2x2 Hermitian `h`.
fn expm2(h: &Matrix2<C64>, t: f64) -> Matrix2<C64> {
    let a0 = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let az = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let ax = h[(1, 0)].re;
    let ay = h[(1, 0)].im;
    let norm = (ax * ax + ay * ay + az * az).sqrt();
    let (s, co) = (norm * t).sin_cos();
    let phase = C64::from_polar(1.0, -a0 * t);
    if norm == 0.0 {
        return Matrix2::identity() * phase;
    }
    let (nx, ny, nz) = (ax / norm, ay / norm, az / norm);
    let mi = C64::new(0.0, -s);
    let u = Matrix2::new(c(co) + mi * nz, mi * C64::new(nx, -ny), mi * C64::new(nx, ny), c(co) - mi * nz);
    u * phase
}

/// `exp(-i t H)` for a 4x4 Hermitian `H`.
fn expm4(h: &Matrix4<C64>, t: f64) -> Matrix4<C64> {
    let eig = h.symmetric_eigen();
    let mut d = Matrix4::<C64>::zeros();
    for k in 0..4 {
        d[(k, k)] = C64::from_polar(1.0, -eig.eigenvalues[k] * t);
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

fn block_diag(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(b);
    m
}

fn electron_op(op: &Matrix2<C64>) -> Matrix4<C64> {
    op.kronecker(&Matrix2::identity())
}

fn nuclear_op(op: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix2::identity().kronecker(op)
}

/// Electron rotation `exp(-i angle/2 (cos(phase) X + sin(phase) Y))`.
pub fn electron_rotation(angle: f64, phase: f64) -> Matrix2<C64> {
    let (s, co) = (0.5 * angle).sin_cos();
    let (sp, cp) = phase.sin_cos();
    let mi = C64::new(0.0, -s);
    Matrix2::new(c(co), mi * C64::new(cp, -sp), mi * C64::new(cp, sp), c(co))
}

fn hyperfine4(hf: &HyperfineParams) -> Matrix4<C64> {
    block_diag(&hf.nuclear_hamiltonian(1.0), &hf.nuclear_hamiltonian(-1.0))
}

fn drive_x(amp: f64) -> Matrix2<C64> {
    Matrix2::new(c(0.0), c(0.5 * amp), c(0.5 * amp), c(0.0))
}

/// Propagator of a pulse program.
///
/// Delays use the exact block-diagonal exponential; RF drives are integrated
/// by exponential midpoint steps of at most `rf_step_us`.
pub fn propagate(seq: &TwoSpinSequence, hf: &HyperfineParams) -> Matrix4<C64> {
    let mut u = Matrix4::<C64>::identity();
    let mut clock = 0.0;
    let hu = hf.nuclear_hamiltonian(1.0);
    let hd = hf.nuclear_hamiltonian(-1.0);
    for e in &seq.events {
        let step = match *e {
            SequenceEvent::Delay { duration_us } => {
                clock += duration_us;
                block_diag(&expm2(&hu, duration_us), &expm2(&hd, duration_us))
            }
            SequenceEvent::MwPi { phase_rad } => electron_op(&electron_rotation(PI, phase_rad)),
            SequenceEvent::MwPulse { angle_rad, phase_rad, duration_us } => {
                if duration_us == 0.0 {
                    electron_op(&electron_rotation(angle_rad, phase_rad))
                } else {
                    let omega = angle_rad / duration_us;
                    let (sp, cp) = phase_rad.sin_cos();
                    let drive = Matrix2::new(c(0.0), C64::new(cp, -sp) * 0.5 * omega, C64::new(cp, sp) * 0.5 * omega, c(0.0));
                    clock += duration_us;
                    expm4(&(hyperfine4(hf) + electron_op(&drive)), duration_us)
                }
            }
            SequenceEvent::RfPulse { frequency_khz, rabi_khz, duration_us, phase_rad } => {
                let n = (duration_us / seq.rf_step_us).ceil().max(1.0) as usize;
                let dt = duration_us / n as f64;
                let (w, amp) = (TAU * 1e-3 * frequency_khz, TAU * 1e-3 * rabi_khz);
                let h0 = hyperfine4(hf);
                let mut v = Matrix4::identity();
                for k in 0..n {
                    let tm = clock + (k as f64 + 0.5) * dt;
                    let h = h0 + nuclear_op(&drive_x(amp * (w * tm + phase_rad).cos()));
                    v = expm4(&h, dt) * v;
                }
                clock += duration_us;
                v
            }
        };
        u = step * u;
    }
    u
}

/// Axis-angle form of a single-qubit gate in the gate-table convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    /// In `[0, pi]` after choosing the SU(2) representative with non-negative trace.
    pub angle: f64,
}

/// Decomposes `u = e^{i g} (cos(phi/2) + i sin(phi/2) n.sigma)`.
pub fn axis_angle(u: &Matrix2<C64>) -> AxisAngle {
    let det = u.determinant();
    let mut v = u / det.sqrt();
    if (v[(0, 0)] + v[(1, 1)]).re < 0.0 {
        v = -v;
    }
    let cos_half = (0.5 * (v[(0, 0)] + v[(1, 1)]).re).clamp(-1.0, 1.0);
    let angle = 2.0 * cos_half.acos();
    // v = cI + i s (nx X + ny Y + nz Z)
    let nx = 0.5 * (v[(0, 1)] + v[(1, 0)]).im;
    let ny = 0.5 * (v[(0, 1)] - v[(1, 0)]).re;
    let nz = 0.5 * (v[(0, 0)] - v[(1, 1)]).im;
    let n = Vector3::new(nx, ny, nz);
    let norm = n.norm();
    let axis = if norm > 1e-300 { [nx / norm, ny / norm, nz / norm] } else { [0.0, 0.0, 1.0] };
    AxisAngle { axis, angle }
}

/// Inverse of [`axis_angle`].
pub fn rotation(axis: [f64; 3], angle: f64) -> Matrix2<C64> {
    let (s, co) = (0.5 * angle).sin_cos();
    let [nx, ny, nz] = axis;
    let is = C64::new(0.0, s);
    Matrix2::new(c(co) + is * nz, is * C64::new(nx, -ny), is * C64::new(nx, ny), c(co) - is * nz)
}

/// Conditional nuclear rotations of a block-diagonal two-spin gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub axis_up: [f64; 3],
    pub axis_down: [f64; 3],
    pub angle_up: f64,
    pub angle_down: f64,
    /// Half the rotation angle of `U_down^dagger U_up`; pi/2 is maximally entangling.
    pub entangling_phi: f64,
    /// Row-major 4x4 unitary as `[re, im]` pairs.
    pub unitary: Vec<[f64; 2]>,
}

fn blocks(u: &Matrix4<C64>) -> (Matrix2<C64>, Matrix2<C64>, f64) {
    let up = u.fixed_view::<2, 2>(0, 0).into_owned();
    let down = u.fixed_view::<2, 2>(2, 2).into_owned();
    let off = (u.fixed_view::<2, 2>(0, 2).norm_squared() + u.fixed_view::<2, 2>(2, 0).norm_squared()).sqrt();
    (up, down, off)
}

pub fn flatten(u: &Matrix4<C64>) -> Vec<[f64; 2]> {
    (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| [u[(i, j)].re, u[(i, j)].im]).collect()
}

fn report_from_blocks(up: &Matrix2<C64>, down: &Matrix2<C64>, full: &Matrix4<C64>) -> GateReport {
    let a = axis_angle(up);
    let b = axis_angle(down);
    let rel = axis_angle(&(down.adjoint() * up));
    GateReport {
        axis_up: a.axis,
        axis_down: b.axis,
        angle_up: a.angle,
        angle_down: b.angle,
        entangling_phi: 0.5 * rel.angle,
        unitary: flatten(full),
    }
}

/// Axis-angle analysis of an even-flip sequence.
pub fn conditional_rotation(seq: &TwoSpinSequence, hf: &HyperfineParams) -> Result<GateReport, RegisterError> {
    seq.validate()?;
    let u = propagate(seq, hf);
    let (up, down, off) = blocks(&u);
    if off > 1e-10 {
        return Err(RegisterError::NotBlockDiagonal(off));
    }
    Ok(report_from_blocks(&up, &down, &u))
}

/// Nuclear blocks of an N-pulse decoupling gate, evaluated with 2x2 algebra only.
pub fn dd_blocks(hf: &HyperfineParams, n_pulses: usize, tau_us: f64) -> (Matrix2<C64>, Matrix2<C64>) {
    let hu = hf.nuclear_hamiltonian(1.0);
    let hd = hf.nuclear_hamiltonian(-1.0);
    let unit = |a: &Matrix2<C64>, b: &Matrix2<C64>| expm2(a, tau_us) * expm2(b, 2.0 * tau_us) * expm2(a, tau_us);
    let (mut uu, mut ud) = (unit(&hu, &hd), unit(&hd, &hu));
    // electron starts up: even pulse count returns it to up with a -1 per pulse pair
    let pairs = n_pulses / 2;
    uu = pow2(&uu, pairs);
    ud = pow2(&ud, pairs);
    let sign = if pairs % 2 == 0 { 1.0 } else { -1.0 };
    (uu * c(sign), ud * c(sign))
}

fn pow2(m: &Matrix2<C64>, k: usize) -> Matrix2<C64> {
    let mut out = Matrix2::identity();
    for _ in 0..k {
        out = m * out;
    }
    out
}

/// Fast [`conditional_rotation`] for plain decoupling gates (even `n_pulses`).
pub fn dd_gate(hf: &HyperfineParams, n_pulses: usize, tau_us: f64) -> GateReport {
    let (up, down) = dd_blocks(hf, n_pulses, tau_us);
    report_from_blocks(&up, &down, &block_diag(&up, &down))
}

/// Electron `<sigma_x>` after the gate acting on `|+>` tensor a mixed nucleus.
pub fn echo_signal(hf: &HyperfineParams, n_pulses: usize, tau_us: f64) -> f64 {
    let (up, down) = dd_blocks(hf, n_pulses, tau_us);
    0.5 * (up * down.adjoint()).trace().re
}

/// Echo signal averaged over independent single-nucleus registers.
pub fn ensemble_echo(nuclei: &[HyperfineParams], n_pulses: usize, tau_us: f64) -> f64 {
    if nuclei.is_empty() {
        return 1.0;
    }
    nuclei.iter().map(|hf| echo_signal(hf, n_pulses, tau_us)).sum::<f64>() / nuclei.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePoint {
    pub tau_us: f64,
    pub signal: f64,
}

/// Echo signal over a list of half-spacings.
pub fn find_resonances(hf: &HyperfineParams, n_pulses: usize, taus: &[f64]) -> Vec<ResonancePoint> {
    taus.iter().map(|&tau_us| ResonancePoint { tau_us, signal: echo_signal(hf, n_pulses, tau_us) }).collect()
}

/// Local minima of a scan, deepest first.
pub fn resonance_minima(scan: &[ResonancePoint]) -> Vec<ResonancePoint> {
    let mut out: Vec<ResonancePoint> =
        scan.windows(3).filter(|w| w[1].signal < w[0].signal && w[1].signal <= w[2].signal).map(|w| w[1]).collect();
    out.sort_by(|a, b| a.signal.total_cmp(&b.signal));
    out
}

/// `tau_k = (2k - 1) pi / (2 w_avg)`: resonances of a weakly coupled nucleus.
pub fn resonance_estimate(hf: &HyperfineParams, k: usize) -> f64 {
    let w = 0.5 * (hf.precession(1.0) + hf.precession(-1.0));
    (2 * k - 1) as f64 * PI / (2.0 * w)
}

/// Printed entangling block for the initialisation gate, with the
/// electron-up (2,2) entry taken as `(1 - i)/2` so the block is unitary.
pub fn ideal_init_rotation() -> Matrix4<C64> {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let up = Matrix2::new(C64::new(0.5, 0.5), C64::new(0.0, r2), C64::new(0.0, r2), C64::new(0.5, -0.5));
    let down = Matrix2::new(C64::new(0.5, 0.5), C64::new(0.0, -r2), C64::new(0.0, -r2), C64::new(0.5, -0.5));
    block_diag(&up, &down)
}

/// Target initialisation unitary.
pub fn init_target() -> Matrix4<C64> {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0);
    Matrix4::new(
        z, z, C64::new(-0.5, -0.5), c(-r2),
        C64::new(0.0, r2), C64::new(-0.5, -0.5), z, z,
        z, z, C64::new(-0.5, 0.5), C64::new(0.0, -r2),
        c(r2), C64::new(0.5, -0.5), z, z,
    )
}

/// `R . Y(pi/2) . R . X(-pi/2)` on the electron, with `R` a conditional rotation.
pub fn compose_init(r: &Matrix4<C64>) -> Matrix4<C64> {
    let x = electron_op(&electron_rotation(-FRAC_PI_2, 0.0));
    let y = electron_op(&electron_rotation(FRAC_PI_2, FRAC_PI_2));
    r * y * r * x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub unitary: Vec<[f64; 2]>,
    /// Largest entry-wise modulus difference to the target, up to global phase.
    pub max_entry_distance: f64,
    /// Nuclear down population for electron-up inputs with nuclear up / down.
    pub nuclear_down_population: [f64; 2],
    /// Mean of `nuclear_down_population`.
    pub transfer_fidelity: f64,
}

fn phase_aligned_distance(a: &Matrix4<C64>, b: &Matrix4<C64>) -> f64 {
    let overlap = (b.adjoint() * a).trace();
    let ph = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { c(1.0) };
    (a - b * ph).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn init_report(u: &Matrix4<C64>) -> InitReport {
    let pop = |col: usize| u[(1, col)].norm_sqr() + u[(3, col)].norm_sqr();
    let p = [pop(0), pop(1)];
    InitReport {
        unitary: flatten(u),
        max_entry_distance: phase_aligned_distance(u, &init_target()),
        nuclear_down_population: p,
        transfer_fidelity: 0.5 * (p[0] + p[1]),
    }
}

/// Initialisation gate built from simulated N=8 conditional rotations at `tau_us`.
pub fn init_gate_at(hf: &HyperfineParams, tau_us: f64) -> InitReport {
    let (up, down) = dd_blocks(hf, 8, tau_us);
    init_report(&compose_init(&block_diag(&up, &down)))
}

pub fn init_gate(hf: &HyperfineParams) -> InitReport {
    init_gate_at(hf, TAU_INIT_US)
}

/// Initialisation gate composed from the ideal printed rotation.
pub fn init_gate_ideal() -> InitReport {
    init_report(&compose_init(&ideal_init_rotation()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RamseyEnvelope {
    Gaussian,
    Exponential,
}

/// Nuclear Ramsey fringe `2 P(down) - 1` with the electron parked in state `s`.
///
/// Ideal unconditional `pi/2_x` gates bracket free precession; the coherent
/// part is damped by the envelope with time constant `t2_star_us`.
pub fn nuclear_ramsey(hf: &HyperfineParams, s: f64, wait_times_us: &[f64], t2_star_us: f64, envelope: RamseyEnvelope) -> Vec<f64> {
    let half = electron_rotation(FRAC_PI_2, 0.0);
    let h = hf.nuclear_hamiltonian(s);
    wait_times_us
        .iter()
        .map(|&t| {
            let u = half * expm2(&h, t) * half;
            let p_down = u[(1, 0)].norm_sqr();
            let env = match envelope {
                RamseyEnvelope::Gaussian => (-(t / t2_star_us).powi(2)).exp(),
                RamseyEnvelope::Exponential => (-t / t2_star_us).exp(),
            };
            env * (2.0 * p_down - 1.0)
        })
        .collect()
}

/// Two-level Rabi flip probability for drive `rabi_khz` detuned by `detuning_khz`.
pub fn rf_rabi(rabi_khz: f64, detuning_khz: f64, durations_us: &[f64]) -> Vec<f64> {
    let (o, d) = (TAU * 1e-3 * rabi_khz, TAU * 1e-3 * detuning_khz);
    let g = o.hypot(d);
    durations_us
        .iter()
        .map(|&t| if g == 0.0 { 0.0 } else { (o / g).powi(2) * (0.5 * g * t).sin().powi(2) })
        .collect()
}

/// Electron echo contrast remaining after an RF pulse, from the heating model.
pub fn rf_coherence_penalty(penalty: &RfHeatingPenalty, rabi_khz: f64, duration_us: f64) -> f64 {
    penalty.penalty(rabi_khz, duration_us)
}

/// Targets that pin the hyperfine defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub tau_entangling_us: f64,
    pub tau_unconditional_us: f64,
    pub tau_init_us: f64,
    pub init_angle_over_pi: f64,
    pub init_axis: [f64; 3],
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            tau_entangling_us: TAU_ENTANGLING_US,
            tau_unconditional_us: TAU_UNCONDITIONAL_US,
            tau_init_us: TAU_INIT_US,
            init_angle_over_pi: 0.63,
            init_axis: [0.78, 0.0, 0.62],
        }
    }
}

/// Residual vector: entangling angle, unconditional axis mismatch, init angle and axis.
pub fn calibration_residuals(hf: &HyperfineParams, t: &CalibrationTargets) -> Vec<f64> {
    let ent = dd_gate(hf, 8, t.tau_entangling_us);
    let unc = dd_gate(hf, 8, t.tau_unconditional_us);
    let init = dd_gate(hf, 8, t.tau_init_us);
    let cross = Vector3::from(unc.axis_up).cross(&Vector3::from(unc.axis_down)).norm();
    vec![
        ent.entangling_phi - FRAC_PI_2,
        cross,
        init.angle_up / PI - t.init_angle_over_pi,
        init.axis_up[0] - t.init_axis[0],
        init.axis_up[1] - t.init_axis[1],
        init.axis_up[2] - t.init_axis[2],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineCalibration {
    pub params: HyperfineParams,
    pub residuals: Vec<f64>,
    pub rms: f64,
}

/// Least-squares refinement of `(w_L, A_par, A_perp)` from each start; best kept.
pub fn calibrate_hyperfine(starts: &[HyperfineParams], targets: &CalibrationTargets) -> Result<HyperfineCalibration, RegisterError> {
    let to = |x: &[f64]| HyperfineParams { nuclear_larmor_khz: x[0], a_parallel_khz: x[1], a_perp_khz: x[2] };
    let res = |x: &[f64]| nalgebra::DVector::from_vec(calibration_residuals(&to(x), targets));
    let jac = |x: &[f64]| numeric_jacobian(&res, x, 1e-7);
    let mut best: Option<HyperfineCalibration> = None;
    let mut last_err = None;
    for s in starts {
        let x0 = [s.nuclear_larmor_khz, s.a_parallel_khz, s.a_perp_khz];
        match levenberg_marquardt(res, jac, &x0, &LmOptions::default()) {
            Ok(r) => {
                let params = to(&r.params);
                let residuals = calibration_residuals(&params, targets);
                let rms = (residuals.iter().map(|v| v * v).sum::<f64>() / residuals.len() as f64).sqrt();
                if best.as_ref().is_none_or(|b| rms < b.rms) {
                    best = Some(HyperfineCalibration { params, residuals, rms });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| RegisterError::Calibration(last_err.unwrap_or(FitError::Degenerate("no starts".into()))))
}

/// Coarse grid over `(w_L, A_par, A_perp)` followed by refinement of the best `keep` cells.
pub fn calibrate_hyperfine_search(targets: &CalibrationTargets, keep: usize) -> Result<HyperfineCalibration, RegisterError> {
    let mut cells: Vec<(f64, HyperfineParams)> = Vec::new();
    for i in 0..=20 {
        for j in 0..=16 {
            for k in 0..=12 {
                let hf = HyperfineParams {
                    nuclear_larmor_khz: 1900.0 + 10.0 * i as f64,
                    a_parallel_khz: 1200.0 + 25.0 * j as f64,
                    a_perp_khz: 200.0 + 25.0 * k as f64,
                };
                let r = calibration_residuals(&hf, targets);
                cells.push((r.iter().map(|v| v * v).sum(), hf));
            }
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let starts: Vec<HyperfineParams> = cells.iter().take(keep.max(1)).map(|c| c.1).collect();
    calibrate_hyperfine(&starts, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close4(a: &Matrix4<C64>, b: &Matrix4<C64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn empty_sequence_is_identity() {
        let u = propagate(&TwoSpinSequence::new(vec![]), &CALIBRATED_HYPERFINE);
        assert!(close4(&u, &Matrix4::identity(), 1e-15));
    }

    #[test]
    fn ideal_pi_is_electron_flip() {
        let u = propagate(&TwoSpinSequence::new(vec![SequenceEvent::MwPi { phase_rad: 0.0 }]), &CALIBRATED_HYPERFINE);
        let x = Matrix2::new(c(0.0), c(1.0), c(1.0), c(0.0));
        assert!(close4(&u, &(electron_op(&x) * C64::new(0.0, -1.0)), 1e-15));
    }

    #[test]
    fn fast_blocks_match_full_propagation() {
        let hf = CALIBRATED_HYPERFINE;
        let u = propagate(&TwoSpinSequence::decoupling(8, 1.37), &hf);
        let (up, down) = dd_blocks(&hf, 8, 1.37);
        assert!(close4(&u, &block_diag(&up, &down), 1e-11));
    }

    #[test]
    fn odd_flips_rejected() {
        let seq = TwoSpinSequence::new(vec![SequenceEvent::Delay { duration_us: 1.0 }, SequenceEvent::MwPi { phase_rad: 0.0 }]);
        assert!(matches!(conditional_rotation(&seq, &CALIBRATED_HYPERFINE), Err(RegisterError::NotBlockDiagonal(_))));
    }

    #[test]
    fn axis_angle_round_trip() {
        let axis = [0.48, -0.6, 0.64];
        let u = rotation(axis, 2.1) * C64::from_polar(1.0, 0.4);
        let aa = axis_angle(&u);
        assert!((aa.angle - 2.1).abs() < 1e-12);
        for k in 0..3 {
            assert!((aa.axis[k] - axis[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_rotation_has_stated_axes() {
        let r = ideal_init_rotation();
        let (up, down, _) = blocks(&r);
        let a = axis_angle(&up);
        let b = axis_angle(&down);
        let s3 = 3f64.sqrt();
        assert!((a.angle - 2.0 * PI / 3.0).abs() < 1e-12 && (b.angle - 2.0 * PI / 3.0).abs() < 1e-12);
        assert!((a.axis[0] - 2f64.sqrt() / s3).abs() < 1e-12 && (a.axis[2] - 1.0 / s3).abs() < 1e-12);
        assert!((b.axis[0] + 2f64.sqrt() / s3).abs() < 1e-12 && (b.axis[2] - 1.0 / s3).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_flat_echo() {
        let hf = HyperfineParams::zero_coupling(500.0);
        for tau in [0.3, 1.1, 2.7] {
            assert!((echo_signal(&hf, 8, tau) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rabi_limits() {
        let p = rf_rabi(1.0, 0.0, &[500.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        let g = TAU * 1e-3 * 2f64.sqrt();
        let q = rf_rabi(1.0, 1.0, &[PI / g]);
        assert!((q[0] - 0.5).abs() < 1e-12);
    }

    fn is_unitary(u: &Matrix4<C64>) -> bool {
        (u * u.adjoint() - Matrix4::identity()).norm() < 1e-10
    }

    #[test]
    fn fixture_pins_defaults() {
        let v: serde_json::Value = serde_json::from_str(include_str!("../fixtures/hyperfine_calibration.json")).unwrap();
        let p: HyperfineParams = serde_json::from_value(v["params"].clone()).unwrap();
        assert!((p.a_parallel_khz - CALIBRATED_HYPERFINE.a_parallel_khz).abs() < 1e-3);
        assert!((p.a_perp_khz - CALIBRATED_HYPERFINE.a_perp_khz).abs() < 1e-3);
        assert!((p.nuclear_larmor_khz - CALIBRATED_HYPERFINE.nuclear_larmor_khz).abs() < 1e-3);
    }

    #[test]
    fn calibrated_gates() {
        let hf = CALIBRATED_HYPERFINE;
        let ent = dd_gate(&hf, 8, TAU_ENTANGLING_US);
        assert!((ent.entangling_phi - FRAC_PI_2).abs() < 0.05);
        let unc = dd_gate(&hf, 8, TAU_UNCONDITIONAL_US);
        let d: f64 = (0..3).map(|k| (unc.axis_up[k] - unc.axis_down[k]).powi(2)).sum::<f64>().sqrt();
        assert!(d < 0.02);
        let init = dd_gate(&hf, 8, TAU_INIT_US);
        assert!((init.angle_up / PI - 0.63).abs() < 0.02);
        let target = [0.78, 0.0, 0.62];
        let d: f64 = (0..3).map(|k| (init.axis_up[k] - target[k]).powi(2)).sum::<f64>().sqrt();
        assert!(d < 0.02);
    }

    #[test]
    fn deepest_resonance_near_entangling_spacing() {
        let taus: Vec<f64> = (0..=600).map(|k| 2.7 + 0.3 * k as f64 / 600.0).collect();
        let m = resonance_minima(&find_resonances(&CALIBRATED_HYPERFINE, 8, &taus));
        assert!(m[0].tau_us >= 2.85 && m[0].tau_us <= 2.86, "{:?}", m[0]);
    }

    #[test]
    fn weak_coupling_resonances_follow_estimate() {
        let hf = HyperfineParams { a_parallel_khz: 20.0, a_perp_khz: 15.0, nuclear_larmor_khz: 400.0 };
        let n = 32;
        let step = 1e-3;
        for k in 1..=3 {
            let guess = resonance_estimate(&hf, k);
            let taus: Vec<f64> = (0..=400).map(|i| guess - 0.2 + i as f64 * step).collect();
            let m = resonance_minima(&find_resonances(&hf, n, &taus));
            assert!((m[0].tau_us - guess).abs() <= step + 1e-12, "k={k} {} vs {guess}", m[0].tau_us);
        }
    }

    #[test]
    fn doubling_pulses_doubles_angle() {
        let hf = CALIBRATED_HYPERFINE;
        for tau in [0.9, 1.7, 2.4] {
            let a = dd_gate(&hf, 8, tau);
            let b = dd_gate(&hf, 16, tau);
            assert!(((b.angle_up / 2.0).cos().abs() - a.angle_up.cos().abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn ideal_init_matches_target() {
        assert!(init_gate_ideal().max_entry_distance < 1e-6);
        let r = init_gate(&CALIBRATED_HYPERFINE);
        assert!(r.nuclear_down_population.iter().all(|&p| p > 0.95));
    }

    #[test]
    fn init_degrades_smoothly_with_timing_error() {
        let hf = CALIBRATED_HYPERFINE;
        let f: Vec<f64> = (0..=20).map(|k| init_gate_at(&hf, TAU_INIT_US + 1e-4 * k as f64).transfer_fidelity).collect();
        assert!(f.windows(2).all(|w| (w[1] - w[0]).abs() < 0.02), "{f:?}");
        assert!(f[20] < f[0] - 0.01);
    }

    #[test]
    fn finite_pulses_and_rf_stay_unitary() {
        let mut seq = TwoSpinSequence::new(vec![
            SequenceEvent::MwPulse { angle_rad: PI, phase_rad: 0.3, duration_us: 0.012 },
            SequenceEvent::Delay { duration_us: 0.8 },
            SequenceEvent::RfPulse { frequency_khz: 1800.0, rabi_khz: 40.0, duration_us: 1.3, phase_rad: 0.1 },
        ]);
        seq.rf_step_us = 0.01;
        assert!(is_unitary(&propagate(&seq, &CALIBRATED_HYPERFINE)));
    }

    #[test]
    fn rf_integration_is_second_order() {
        let hf = CALIBRATED_HYPERFINE;
        let ev = vec![SequenceEvent::RfPulse { frequency_khz: 2500.0, rabi_khz: 80.0, duration_us: 2.0, phase_rad: 0.0 }];
        let at = |h: f64| {
            let mut s = TwoSpinSequence::new(ev.clone());
            s.rf_step_us = h;
            propagate(&s, &hf)
        };
        let reference = at(1e-4);
        let e1 = (at(0.02) - &reference).norm();
        let e2 = (at(0.01) - &reference).norm();
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn ramsey_frequency_matches_bare_delay() {
        let hf = CALIBRATED_HYPERFINE;
        let w = hf.precession(1.0);
        // eigenphase difference of a bare delay block
        let u = propagate(&TwoSpinSequence::new(vec![SequenceEvent::Delay { duration_us: 0.01 }]), &hf);
        let up = u.fixed_view::<2, 2>(0, 0).into_owned();
        let aa = axis_angle(&up);
        assert!((aa.angle / 0.01 - w).abs() < 1e-9);
        let sig = nuclear_ramsey(&hf, 1.0, &[0.0], 2200.0, RamseyEnvelope::Gaussian);
        assert!((sig[0].abs() - 1.0).abs() < 1e-12);
        // Gaussian envelope hits 1/e at T2*: compare the coherent fringe maximum
        let t = 2200.0;
        let period = TAU / w;
        let ts: Vec<f64> = (0..2000).map(|k| t + period * k as f64 / 2000.0).collect();
        let amp = nuclear_ramsey(&hf, 1.0, &ts, 2200.0, RamseyEnvelope::Gaussian).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bare = nuclear_ramsey(&hf, 1.0, &ts, f64::INFINITY, RamseyEnvelope::Gaussian).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp / bare - (-1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn ensemble_collapses_toward_zero() {
        let nuclei: Vec<HyperfineParams> = (0..5)
            .map(|k| HyperfineParams { a_parallel_khz: 100.0 + 70.0 * k as f64, a_perp_khz: 60.0 + 10.0 * k as f64, nuclear_larmor_khz: 400.0 })
            .collect();
        assert!((ensemble_echo(&[], 8, 1.0) - 1.0).abs() < 1e-15);
        let s = ensemble_echo(&nuclei, 8, 0.5);
        assert!(s.abs() <= 1.0);
    }

    #[test]
    fn sequence_json_round_trip() {
        let seq = TwoSpinSequence::new(vec![
            SequenceEvent::Delay { duration_us: 1.5 },
            SequenceEvent::MwPi { phase_rad: 0.0 },
            SequenceEvent::RfPulse { frequency_khz: 2000.0, rabi_khz: 1.0, duration_us: 10.0, phase_rad: 0.0 },
        ]);
        let s = serde_json::to_string(&seq).unwrap();
        assert!(s.contains("\"type\":\"delay\""));
        let back: TwoSpinSequence = serde_json::from_str(&s).unwrap();
        assert_eq!(back, seq);
    }
}
