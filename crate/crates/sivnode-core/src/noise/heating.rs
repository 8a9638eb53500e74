//! Ohmic heating from microwave pulse trains and its effect on coherence.
//!
//! Each pulse adds a temperature transient `A (exp(-s/tau_th) - exp(-9 s/tau_th))`
//! (`s` = time since the pulse), scaled so an isolated pulse peaks at
//! `delta_t_per_pulse_mk` above base.

use serde::{Deserialize, Serialize};

use super::coherence::coherence_exact;
use super::{BathSet, DecouplingSequence, NoiseError};

/// Rabi frequency per square-root watt: 3 W gives 80 MHz.
pub const RABI_MHZ_PER_SQRT_W: f64 = 46.188_021_535_170_06;
/// `h / k_B` in mK per GHz.
const H_OVER_KB_MK_PER_GHZ: f64 = 47.992_43;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingParams {
    pub tau_thermal_us: f64,
    pub delta_t_per_pulse_mk: f64,
    pub base_temp_mk: f64,
}

impl HeatingParams {
    /// Impulse amplitude scales with dissipated power, i.e. with the Rabi frequency squared.
    pub fn from_rabi(rabi_mhz: f64, mk_per_mhz2: f64, tau_thermal_us: f64, base_temp_mk: f64) -> Self {
        Self { tau_thermal_us, delta_t_per_pulse_mk: mk_per_mhz2 * rabi_mhz * rabi_mhz, base_temp_mk }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        for (field, v) in [
            ("tau_thermal_us", self.tau_thermal_us),
            ("delta_t_per_pulse_mk", self.delta_t_per_pulse_mk),
            ("base_temp_mk", self.base_temp_mk),
        ] {
            if !(v > 0.0) {
                return Err(NoiseError::InvalidParameter { field, reason: "must be > 0".into() });
            }
        }
        Ok(())
    }

    fn raw(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        let x = s / self.tau_thermal_us;
        (-x).exp() - (-9.0 * x).exp()
    }

    /// Delay of the single-pulse maximum, `tau_th ln(9) / 8`.
    pub fn peak_delay(&self) -> f64 {
        self.tau_thermal_us * 9f64.ln() / 8.0
    }

    fn amplitude(&self) -> f64 {
        self.delta_t_per_pulse_mk / self.raw(self.peak_delay())
    }

    /// Temperature at `t` given pulse instants.
    pub fn temperature(&self, pulse_times: &[f64], t: f64) -> f64 {
        let a = self.amplitude();
        self.base_temp_mk + a * pulse_times.iter().map(|&p| self.raw(t - p)).sum::<f64>()
    }
}

/// `Omega = calibration * sqrt(P)` in MHz.
pub fn rabi_frequency(power_w: f64, calibration_mhz_per_sqrt_w: f64) -> f64 {
    calibration_mhz_per_sqrt_w * power_w.max(0.0).sqrt()
}

/// Temperature samples (mK) at `sample_times`.
pub fn heating_trace(pulse_times: &[f64], hp: &HeatingParams, sample_times: &[f64]) -> Vec<f64> {
    sample_times.iter().map(|&t| hp.temperature(pulse_times, t)).collect()
}

/// Maximum temperature over `[0, window_end]`.
pub fn t_max(pulse_times: &[f64], hp: &HeatingParams, window_end: f64) -> f64 {
    let f = |t: f64| hp.temperature(pulse_times, t);
    let m = 4000;
    let h = window_end / m as f64;
    let mut best = (0.0, f(0.0));
    let mut candidates: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    candidates.extend(pulse_times.iter().map(|p| p + hp.peak_delay()).filter(|&t| t <= window_end));
    for t in candidates {
        let v = f(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    // golden-section polish inside the bracketing grid cell
    let (mut a, mut b) = ((best.0 - h).max(0.0), (best.0 + h).min(window_end));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.1.max(f(0.5 * (a + b)))
}

/// Temperature-dependent pure-dephasing rate (1/us).
pub trait DephasingRate: Send + Sync {
    fn rate(&self, temp_mk: f64) -> f64;
}

/// No thermal dephasing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRate;

impl DephasingRate for ZeroRate {
    fn rate(&self, _temp_mk: f64) -> f64 {
        0.0
    }
}

/// `k / (exp(h Delta_gs / k_B T) - 1)`: thermal occupation of the upper orbital branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononOccupancyRate {
    pub k_per_us: f64,
    pub delta_gs_ghz: f64,
}

impl PhononOccupancyRate {
    pub fn occupancy(&self, temp_mk: f64) -> f64 {
        if temp_mk <= 0.0 {
            return 0.0;
        }
        1.0 / (H_OVER_KB_MK_PER_GHZ * self.delta_gs_ghz / temp_mk).exp_m1()
    }

    /// Chooses `k` so that the heating factor of `seq` equals `target` (in (0, 1)).
    pub fn calibrated(delta_gs_ghz: f64, hp: &HeatingParams, seq: &DecouplingSequence, target: f64) -> Self {
        let unit = Self { k_per_us: 1.0, delta_gs_ghz };
        let integral = -heating_factor(seq, hp, &unit).ln();
        Self { k_per_us: -target.ln() / integral, delta_gs_ghz }
    }
}

impl DephasingRate for PhononOccupancyRate {
    fn rate(&self, temp_mk: f64) -> f64 {
        self.k_per_us * self.occupancy(temp_mk)
    }
}

/// `exp(-integral rate(T(t)) dt)` over the sequence duration.
pub fn heating_factor(seq: &DecouplingSequence, hp: &HeatingParams, rate: &dyn DephasingRate) -> f64 {
    let t_end = seq.total_time();
    let pulses: Vec<f64> = super::cpmg_pulse_times(t_end, seq.n_pulses);
    let mut edges = vec![0.0];
    edges.extend(pulses.iter().copied());
    edges.push(t_end);
    let nodes = gl5();
    let mut total = 0.0;
    for w in edges.windows(2) {
        let sub = 8;
        let h = (w[1] - w[0]) / sub as f64;
        for k in 0..sub {
            let (a, b) = (w[0] + k as f64 * h, w[0] + (k + 1) as f64 * h);
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            total += r * nodes.iter().map(|&(x, wt)| wt * rate.rate(hp.temperature(&pulses, m + r * x))).sum::<f64>();
        }
    }
    (-total).exp()
}

fn gl5() -> [(f64, f64); 5] {
    let a = (5.0f64 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0f64 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
    [(-b, wb), (-a, wa), (0.0, 128.0 / 225.0), (a, wa), (b, wb)]
}

/// Bath-limited coherence times the heating factor.
pub fn coherence_with_heating(seq: &DecouplingSequence, hp: &HeatingParams, rate: &dyn DephasingRate, baths: &BathSet) -> f64 {
    coherence_exact(seq.total_time(), seq.n_pulses, baths) * heating_factor(seq, hp, rate)
}

/// Echo-contrast penalty from a continuous RF drive that raises the steady
/// temperature by `mk_per_khz2 * Omega_RF^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfHeatingPenalty {
    pub rate: PhononOccupancyRate,
    pub base_temp_mk: f64,
    pub mk_per_khz2: f64,
}

impl RfHeatingPenalty {
    /// Remaining contrast fraction after an RF pulse of `duration_us`.
    pub fn penalty(&self, rabi_khz: f64, duration_us: f64) -> f64 {
        let hot = self.base_temp_mk + self.mk_per_khz2 * rabi_khz * rabi_khz;
        (-(self.rate.rate(hot) - self.rate.rate(self.base_temp_mk)) * duration_us).exp()
    }

    /// Solves for `mk_per_khz2` such that `penalty(rabi_khz, duration_us) == target`.
    pub fn calibrate(rate: PhononOccupancyRate, base_temp_mk: f64, rabi_khz: f64, duration_us: f64, target: f64) -> Self {
        let mut lo = 0.0;
        let mut hi = 1.0;
        let at = |c: f64| Self { rate, base_temp_mk, mk_per_khz2: c }.penalty(rabi_khz, duration_us);
        while at(hi) > target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self { rate, base_temp_mk, mk_per_khz2: 0.5 * (lo + hi) }
    }
}
