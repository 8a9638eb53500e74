//! Desk-scale simulator for a diamond silicon-vacancy network node.
//!
//! The crate is organised by physical subsystem:
//!
//! * [`spin`]: strained 4x4 SiV Hamiltonian, transitions and g-factors.
//! * [`cavity`]: cavity-QED reflection spectra, Purcell broadening and fits.
//! * [`noise`]: filter-function decoherence, bath fits, DEER, spin densities, heating.
//! * [`register`]: electron and 13C two-spin gate simulation.
//! * [`protocol`]: time-bin spin-photon Bell protocol and readout statistics.
//! * [`tomography`]: constrained state reconstruction, concurrence and readout correction.
//! * [`photonics`]: 1-D transfer-matrix surrogate for nanobeam cavity design.
//!
//! Frequencies are in GHz unless a field name says otherwise. Cavity rates are
//! stored in angular units (rad/ns) and converted at the API edge.

pub mod cavity;
pub mod fit;
pub mod noise;
pub mod photonics;
pub mod protocol;
pub mod register;
pub mod spin;
pub mod tomography;

pub use num_complex::Complex64 as C64;

/// Bohr magneton in GHz/T.
pub const MU_B_GHZ_PER_T: f64 = 13.996;
/// Nuclear magneton in GHz/T.
pub const MU_N_GHZ_PER_T: f64 = 7.622_593e-3;

pub use cavity::{CavityAtomParams, CavityError, SpectrumTrace};
pub use noise::{BathSet, CoherenceCurve, DecouplingSequence, HeatingParams, LorentzianBath, NoiseError};
pub use photonics::{CavityDesign, DesignError, DesignScore, TaperProfile, UnitCell};
pub use protocol::{Basis, Carving, Histogram, ProtocolError, ReadoutModel, TimeBinQubit};
pub use register::{GateReport, HyperfineParams, RegisterError, SequenceEvent, TwoSpinSequence};
pub use spin::{LevelStructure, MagneticField, SivParameters, SpinError, TransitionSet};
pub use tomography::{CorrelationData, DensityMatrix4, ReadoutFidelities, TomographyError};

