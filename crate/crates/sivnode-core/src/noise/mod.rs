//! Decoherence of the electron spin under dynamical decoupling.
//!
//! Bath strengths `b` are given in kHz and enter the spectral density as an
//! angular rate of `b * 1e-3` per microsecond; correlation times and all
//! sequence times are in microseconds, so `omega` is in rad/us.

mod coherence;
mod density;
mod filter;
mod fit;
mod heating;

pub use coherence::{chi_exact, coherence, coherence_exact, deer_coherence, deer_coherence_exact, t2_exact, t2_quadrature};
pub use density::{bulk_density, surface_density, surface_strength, BathMoment, BulkDensity, DIAMOND_ATOMS_PER_NM3};
pub use filter::{cpmg_pulse_times, filter_function, ramsey_filter};
pub use fit::{fit_baths, power_law_exponent, simulate_curves, t2_extract, BathFit, T2Fit};
pub use heating::{
    coherence_with_heating, heating_factor, heating_trace, rabi_frequency, t_max, DephasingRate, HeatingParams, PhononOccupancyRate,
    RfHeatingPenalty, ZeroRate, RABI_MHZ_PER_SQRT_W,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("pulse count must be even and positive, got {0}")]
    OddPulseCount(usize),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("quadrature did not converge (last change {0:.3e})")]
    Quadrature(f64),
    #[error("curve shows no decay")]
    NoDecay,
    #[error("need at least {needed} {what}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },
    #[error("bath index {0} out of range")]
    BathIndex(usize),
    #[error("fit failed: {0}")]
    Fit(#[from] crate::fit::FitError),
}

/// Lorentzian spectral density `S(w) = b^2 tau / pi / (1 + w^2 tau^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianBath {
    pub strength_khz: f64,
    pub correlation_tau_us: f64,
}

impl LorentzianBath {
    pub fn new(strength_khz: f64, correlation_tau_us: f64) -> Self {
        Self { strength_khz, correlation_tau_us }
    }

    /// Angular rate in rad/us.
    pub fn rate(&self) -> f64 {
        self.strength_khz * 1e-3
    }

    pub fn spectral_density(&self, omega: f64) -> f64 {
        let (b, t) = (self.rate(), self.correlation_tau_us);
        b * b * t / std::f64::consts::PI / (1.0 + omega * omega * t * t)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.strength_khz > 0.0) {
            return Err(NoiseError::InvalidParameter { field: "strength_khz", reason: "must be > 0".into() });
        }
        if !(self.correlation_tau_us > 0.0) {
            return Err(NoiseError::InvalidParameter { field: "correlation_tau_us", reason: "must be > 0".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSet {
    pub baths: Vec<LorentzianBath>,
}

impl BathSet {
    pub fn new(baths: Vec<LorentzianBath>) -> Self {
        Self { baths }
    }

    /// Fast 5 kHz / 1 us bath plus slow 180 kHz / 1 ms bath.
    pub fn reference() -> Self {
        Self::new(vec![LorentzianBath::new(5.0, 1.0), LorentzianBath::new(180.0, 1000.0)])
    }

    pub fn without(&self, index: usize) -> Self {
        Self::new(self.baths.iter().enumerate().filter(|(i, _)| *i != index).map(|(_, b)| *b).collect())
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.baths.is_empty() {
            return Err(NoiseError::InsufficientData { what: "baths", needed: 1, got: 0 });
        }
        self.baths.iter().try_for_each(LorentzianBath::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceFamily {
    Cpmg,
    Xy8,
}

/// `N` pi pulses separated by `2 tau`, total duration `2 N tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecouplingSequence {
    pub n_pulses: usize,
    pub tau_half_us: f64,
    pub family: SequenceFamily,
}

impl DecouplingSequence {
    pub fn cpmg(n_pulses: usize, tau_half_us: f64) -> Self {
        Self { n_pulses, tau_half_us, family: SequenceFamily::Cpmg }
    }

    pub fn total_time(&self) -> f64 {
        2.0 * self.n_pulses as f64 * self.tau_half_us
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        check_even(self.n_pulses)?;
        if !(self.tau_half_us > 0.0) {
            return Err(NoiseError::InvalidParameter { field: "tau_half_us", reason: "must be > 0".into() });
        }
        Ok(())
    }
}

pub(crate) fn check_even(n: usize) -> Result<(), NoiseError> {
    if n == 0 || n % 2 != 0 { Err(NoiseError::OddPulseCount(n)) } else { Ok(()) }
}

/// Measured or simulated coherence against total sequence time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub total_times_us: Vec<f64>,
    pub signal: Vec<f64>,
    pub n_pulses: usize,
}

impl CoherenceCurve {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.total_times_us.len() != self.signal.len() {
            return Err(NoiseError::InvalidParameter { field: "signal", reason: "length differs from total_times_us".into() });
        }
        if self.total_times_us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NoiseError::InvalidParameter { field: "total_times_us", reason: "must be increasing".into() });
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_us,signal,n_pulses\n");
        for (t, y) in self.total_times_us.iter().zip(&self.signal) {
            s.push_str(&format!("{t:.9e},{y:.9e},{}\n", self.n_pulses));
        }
        s
    }
}
