//! JSON experiment configuration. Every quantity carries its unit in the
//! field name; unknown fields are rejected so typos surface as validation
//! errors rather than silently falling back to defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sivnode_core::cavity::CavityAtomParams;
use sivnode_core::noise::{BathSet, HeatingParams, LorentzianBath};
use sivnode_core::photonics::{CavityDesign, TaperProfile, TaperedParameter, UnitCell};
use sivnode_core::protocol::{Carving, ExperimentConfig as ProtocolRun, ReadoutModel, TimeBinQubit};
use sivnode_core::register::{HyperfineParams, CALIBRATED_HYPERFINE};
use sivnode_core::spin::{MagneticField, SivParameters, CALIBRATED_B_AXIAL_TESLA};
use sivnode_core::tomography::ReadoutFidelities;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("missing block `{block}`{}", .experiment.as_ref().map(|e| format!(" required by experiment `{e}`")).unwrap_or_default())]
    MissingBlock { block: &'static str, experiment: Option<String> },
    #[error("unknown experiment `{0}` (see `sivnode list`)")]
    UnknownExperiment(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.to_string() }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(field, "must be finite and > 0")) }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub spin: Option<SpinBlock>,
    pub cavity: Option<CavityBlock>,
    pub noise: Option<NoiseBlock>,
    pub register: Option<RegisterBlock>,
    pub protocol: Option<ProtocolBlock>,
    pub tomography: Option<TomographyBlock>,
    pub design: Option<DesignBlock>,
    pub grid: Option<GridBlock>,
}

impl ExperimentConfig {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ConfigError> {
        serde_json::from_slice(bytes).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Validates every block that is present, regardless of the experiment.
    pub fn validate_blocks(&self) -> Result<(), ConfigError> {
        if let Some(b) = &self.spin {
            b.validate()?;
        }
        if let Some(b) = &self.cavity {
            b.params()?;
        }
        if let Some(b) = &self.noise {
            b.validate()?;
        }
        if let Some(b) = &self.register {
            b.params()?;
        }
        if let Some(b) = &self.protocol {
            b.validate()?;
        }
        if let Some(b) = &self.tomography {
            b.validate()?;
        }
        if let Some(b) = &self.design {
            b.design()?;
        }
        if let Some(b) = &self.grid {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBlock {
    pub delta_gs_ghz: f64,
    #[serde(default = "default_field")]
    pub field_tesla: f64,
    #[serde(default)]
    pub polar_angle_deg: f64,
    #[serde(default = "default_xi")]
    pub strain_fluctuation_relative: f64,
}

fn default_field() -> f64 {
    CALIBRATED_B_AXIAL_TESLA
}

fn default_xi() -> f64 {
    0.01
}

impl SpinBlock {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.manifolds()?;
        if !(self.field_tesla >= 0.0) {
            return Err(invalid("spin.field_tesla", "must be >= 0"));
        }
        positive("spin.strain_fluctuation_relative", self.strain_fluctuation_relative)
    }

    pub fn manifolds(&self) -> Result<(SivParameters, SivParameters, f64), ConfigError> {
        let eps = sivnode_core::spin::zx_strain_for_splitting(&SivParameters::ground(), self.delta_gs_ghz)
            .map_err(|e| invalid("spin.delta_gs_ghz", e))?;
        Ok((SivParameters::ground().with_zx_strain(eps), SivParameters::excited().with_zx_strain(eps), eps))
    }

    pub fn field(&self, magnitude: f64) -> MagneticField {
        MagneticField::new(magnitude, self.polar_angle_deg.to_radians(), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityBlock {
    pub g_ghz: f64,
    pub kappa_total_ghz: f64,
    pub kappa_in_ghz: f64,
    pub gamma_ghz: f64,
    #[serde(default)]
    pub cavity_offset_ghz: f64,
    #[serde(default)]
    pub atom_detuning_ghz: f64,
    #[serde(default)]
    pub spin_splitting_ghz: f64,
    #[serde(default = "default_fit_noise")]
    pub fit_noise_relative: f64,
}

fn default_fit_noise() -> f64 {
    0.005
}

impl CavityBlock {
    pub fn params(&self) -> Result<CavityAtomParams, ConfigError> {
        positive("cavity.kappa_total_ghz", self.kappa_total_ghz)?;
        positive("cavity.kappa_in_ghz", self.kappa_in_ghz)?;
        positive("cavity.gamma_ghz", self.gamma_ghz)?;
        if !(self.g_ghz >= 0.0) {
            return Err(invalid("cavity.g_ghz", "must be >= 0"));
        }
        if self.kappa_in_ghz > self.kappa_total_ghz {
            return Err(invalid("cavity.kappa_in_ghz", "must not exceed kappa_total_ghz"));
        }
        if !(self.fit_noise_relative >= 0.0) {
            return Err(invalid("cavity.fit_noise_relative", "must be >= 0"));
        }
        let p = CavityAtomParams::from_ghz(self.kappa_in_ghz, self.kappa_total_ghz, self.cavity_offset_ghz, self.atom_detuning_ghz, self.g_ghz, self.gamma_ghz);
        p.validate().map_err(|e| invalid("cavity", e))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathBlock {
    pub strength_khz: f64,
    pub correlation_tau_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingBlock {
    pub tau_thermal_us: f64,
    pub delta_t_per_pulse_mk: f64,
    pub base_temp_mk: f64,
    pub delta_gs_ghz: f64,
    /// Heating factor imposed at the hottest spacing; fixes the dephasing-rate scale.
    pub collapse_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub baths: Vec<BathBlock>,
    pub pulse_counts: Vec<usize>,
    #[serde(default)]
    pub removed_bath_index: Option<usize>,
    #[serde(default = "default_points")]
    pub curve_points: usize,
    #[serde(default = "default_curve_noise")]
    pub curve_noise: f64,
    #[serde(default)]
    pub heating: Option<HeatingBlock>,
}

fn default_points() -> usize {
    12
}

fn default_curve_noise() -> f64 {
    0.002
}

impl NoiseBlock {
    pub fn bath_set(&self) -> BathSet {
        BathSet::new(self.baths.iter().map(|b| LorentzianBath::new(b.strength_khz, b.correlation_tau_us)).collect())
    }

    pub fn heating_params(&self) -> Option<HeatingParams> {
        self.heating.as_ref().map(|h| HeatingParams { tau_thermal_us: h.tau_thermal_us, delta_t_per_pulse_mk: h.delta_t_per_pulse_mk, base_temp_mk: h.base_temp_mk })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (i, b) in self.baths.iter().enumerate() {
            positive(&format!("noise.baths[{i}].strength_khz"), b.strength_khz)?;
            positive(&format!("noise.baths[{i}].correlation_tau_us"), b.correlation_tau_us)?;
        }
        if self.baths.is_empty() {
            return Err(invalid("noise.baths", "at least one bath required"));
        }
        for (i, &n) in self.pulse_counts.iter().enumerate() {
            if n == 0 || n % 2 != 0 {
                return Err(invalid(format!("noise.pulse_counts[{i}]"), format!("pulse count {n} must be even and > 0")));
            }
        }
        if self.pulse_counts.is_empty() {
            return Err(invalid("noise.pulse_counts", "at least one pulse count required"));
        }
        if let Some(k) = self.removed_bath_index {
            if k >= self.baths.len() {
                return Err(invalid("noise.removed_bath_index", format!("index {k} out of range for {} baths", self.baths.len())));
            }
        }
        if self.curve_points < 6 {
            return Err(invalid("noise.curve_points", "must be >= 6"));
        }
        if !(self.curve_noise >= 0.0) {
            return Err(invalid("noise.curve_noise", "must be >= 0"));
        }
        if let Some(h) = &self.heating {
            positive("noise.heating.tau_thermal_us", h.tau_thermal_us)?;
            positive("noise.heating.delta_t_per_pulse_mk", h.delta_t_per_pulse_mk)?;
            positive("noise.heating.base_temp_mk", h.base_temp_mk)?;
            positive("noise.heating.delta_gs_ghz", h.delta_gs_ghz)?;
            if !(h.collapse_factor > 0.0 && h.collapse_factor < 1.0) {
                return Err(invalid("noise.heating.collapse_factor", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterBlock {
    #[serde(default = "default_a_par")]
    pub a_parallel_khz: f64,
    #[serde(default = "default_a_perp")]
    pub a_perp_khz: f64,
    #[serde(default = "default_larmor")]
    pub nuclear_larmor_khz: f64,
    #[serde(default = "default_n_pulses")]
    pub n_pulses: usize,
    #[serde(default = "default_keep")]
    pub calibration_keep: usize,
}

fn default_a_par() -> f64 {
    CALIBRATED_HYPERFINE.a_parallel_khz
}

fn default_a_perp() -> f64 {
    CALIBRATED_HYPERFINE.a_perp_khz
}

fn default_larmor() -> f64 {
    CALIBRATED_HYPERFINE.nuclear_larmor_khz
}

fn default_n_pulses() -> usize {
    8
}

fn default_keep() -> usize {
    8
}

impl RegisterBlock {
    pub fn params(&self) -> Result<HyperfineParams, ConfigError> {
        let p = HyperfineParams { a_parallel_khz: self.a_parallel_khz, a_perp_khz: self.a_perp_khz, nuclear_larmor_khz: self.nuclear_larmor_khz };
        p.validate().map_err(|e| invalid("register", e))?;
        if self.n_pulses == 0 || self.n_pulses % 2 != 0 {
            return Err(invalid("register.n_pulses", "must be even and > 0"));
        }
        if self.calibration_keep == 0 {
            return Err(invalid("register.calibration_keep", "must be >= 1"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutPreset {
    SpinPhoton,
    Aligned,
    Misaligned,
    Ideal,
}

impl ReadoutPreset {
    pub fn model(self) -> ReadoutModel {
        match self {
            ReadoutPreset::SpinPhoton => ReadoutModel::spin_photon(),
            ReadoutPreset::Aligned => ReadoutModel::aligned(),
            ReadoutPreset::Misaligned => ReadoutModel::misaligned(),
            ReadoutPreset::Ideal => ReadoutModel::ideal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub shots_per_basis: u64,
    pub mean_photons: f64,
    pub spurious_reflection: f64,
    pub readout: ReadoutPreset,
    #[serde(default = "default_eta")]
    pub detection_efficiency: f64,
    #[serde(default = "default_mw_error")]
    pub mw_pi_error: f64,
    #[serde(default)]
    pub detector_dark_probability: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

fn default_eta() -> f64 {
    ProtocolRun::default().detection_efficiency
}

fn default_mw_error() -> f64 {
    sivnode_core::protocol::DEFAULT_MW_PI_ERROR
}

fn default_resamples() -> usize {
    200
}

impl ProtocolBlock {
    pub fn qubit(&self) -> TimeBinQubit {
        TimeBinQubit { mean_photons: self.mean_photons, ..TimeBinQubit::default() }
    }

    pub fn carving(&self) -> Carving {
        Carving::spurious(self.spurious_reflection)
    }

    pub fn run_config(&self) -> ProtocolRun {
        ProtocolRun {
            detection_efficiency: self.detection_efficiency,
            detector_dark_probability: self.detector_dark_probability,
            mw_pi_error: self.mw_pi_error,
            interferometer_phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.shots_per_basis == 0 {
            return Err(invalid("protocol.shots_per_basis", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.spurious_reflection) {
            return Err(invalid("protocol.spurious_reflection", "must lie in [0, 1]"));
        }
        if self.bootstrap_resamples < 100 {
            return Err(invalid("protocol.bootstrap_resamples", "must be >= 100"));
        }
        self.qubit().validate().map_err(|e| invalid("protocol.mean_photons", e))?;
        self.run_config().validate().map_err(|e| invalid("protocol", e))?;
        self.carving().validate().map_err(|e| invalid("protocol.spurious_reflection", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyBlock {
    pub shots_per_run: u64,
    /// Weight of the uniform channel mixed into the ideal CNOT.
    pub gate_depolarization: f64,
    pub f_up_electron: f64,
    pub f_down_electron: f64,
    pub f_up_nuclear: f64,
    pub f_down_nuclear: f64,
    #[serde(default = "default_starts")]
    pub mle_starts: usize,
    #[serde(default)]
    pub bootstrap_resamples: usize,
}

fn default_starts() -> usize {
    4
}

impl TomographyBlock {
    pub fn fidelities(&self) -> ReadoutFidelities {
        ReadoutFidelities { f_up_e: self.f_up_electron, f_down_e: self.f_down_electron, f_up_n: Some(self.f_up_nuclear), f_down_n: Some(self.f_down_nuclear) }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.shots_per_run == 0 {
            return Err(invalid("tomography.shots_per_run", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.gate_depolarization) {
            return Err(invalid("tomography.gate_depolarization", "must lie in [0, 1]"));
        }
        if self.mle_starts == 0 {
            return Err(invalid("tomography.mle_starts", "must be >= 1"));
        }
        self.fidelities().validate().map_err(|e| invalid("tomography", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub hole_hx_nm: Vec<f64>,
    pub hole_hy_nm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub mirror_cells_input: usize,
    pub mirror_cells_output: usize,
    pub n_taper_cells: usize,
    pub defect_depth_dmax: f64,
    pub lattice_const_a_nm: f64,
    pub hole_hx_nm: f64,
    pub hole_hy_nm: f64,
    pub waveguide_width_w_nm: f64,
    pub etch_angle_theta_deg: f64,
    #[serde(default = "default_q_cutoff")]
    pub q_cutoff: f64,
    #[serde(default = "default_iters")]
    pub max_iterations: usize,
    #[serde(default = "default_removed")]
    pub removed_input_cells_max: usize,
    #[serde(default = "default_q_int")]
    pub q_intrinsic: f64,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

fn default_q_cutoff() -> f64 {
    sivnode_core::photonics::Q_CUTOFF_DEFAULT
}

fn default_iters() -> usize {
    30
}

fn default_removed() -> usize {
    8
}

fn default_q_int() -> f64 {
    sivnode_core::photonics::Q_INTRINSIC_DEFAULT
}

impl DesignBlock {
    pub fn design(&self) -> Result<CavityDesign, ConfigError> {
        let d = CavityDesign {
            mirror_cells_output: self.mirror_cells_output,
            mirror_cells_input: self.mirror_cells_input,
            base_cell: UnitCell {
                lattice_const_a: self.lattice_const_a_nm,
                hole_hx: self.hole_hx_nm,
                hole_hy: self.hole_hy_nm,
                waveguide_width_w: self.waveguide_width_w_nm,
                etch_angle_theta: self.etch_angle_theta_deg,
            },
            taper: TaperProfile { defect_depth_dmax: self.defect_depth_dmax, n_taper_cells: self.n_taper_cells, tapered_parameters: vec![TaperedParameter::LatticeConst] },
        };
        d.validate().map_err(|e| invalid("design", e))?;
        positive("design.q_cutoff", self.q_cutoff)?;
        positive("design.q_intrinsic", self.q_intrinsic)?;
        if self.removed_input_cells_max > self.mirror_cells_input {
            return Err(invalid("design.removed_input_cells_max", "must not exceed mirror_cells_input"));
        }
        if let Some(s) = &self.sweep {
            if s.hole_hx_nm.is_empty() || s.hole_hy_nm.is_empty() {
                return Err(invalid("design.sweep", "grids must be non-empty"));
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Axis name including its unit, e.g. `frequency_ghz` or `tau_us`.
    pub axis: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub log_spaced: bool,
}

impl GridBlock {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.points < 2 {
            return Err(invalid("grid.points", "must be >= 2"));
        }
        if !(self.stop > self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(invalid("grid.stop", "must be finite and greater than grid.start"));
        }
        if self.log_spaced && !(self.start > 0.0) {
            return Err(invalid("grid.start", "must be > 0 for a log-spaced grid"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                if self.log_spaced {
                    self.start * (self.stop / self.start).powf(u)
                } else {
                    self.start + (self.stop - self.start) * u
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_parses_but_has_no_blocks() {
        let c = ExperimentConfig::from_bytes(b"{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn unknown_field_rejected() {
        let e = ExperimentConfig::from_bytes(br#"{"experiment":"x","sed":1}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Parse(m) if m.contains("sed")));
    }

    #[test]
    fn field_precise_messages() {
        let b = NoiseBlock { baths: vec![BathBlock { strength_khz: 5.0, correlation_tau_us: 1.0 }], pulse_counts: vec![2, 3], removed_bath_index: None, curve_points: 12, curve_noise: 0.0, heating: None };
        assert_eq!(b.validate().unwrap_err().to_string(), "noise.pulse_counts[1]: pulse count 3 must be even and > 0");
        let g = GridBlock { axis: "tau_us".into(), start: 1.0, stop: 1.0, points: 5, log_spaced: false };
        assert!(g.validate().unwrap_err().to_string().starts_with("grid.stop"));
    }

    #[test]
    fn grid_spacing() {
        let g = GridBlock { axis: "tau_us".into(), start: 1.0, stop: 100.0, points: 3, log_spaced: true };
        let v = g.values();
        assert!((v[1] - 10.0).abs() < 1e-12 && v[2] == 100.0);
    }
}
