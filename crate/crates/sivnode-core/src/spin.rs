//! Strained SiV orbital/spin Hamiltonian for one manifold.
//!
//! Basis ordering is `{|e_y up>, |e_y down>, |e_x up>, |e_x down>}`, i.e. orbital
//! (outer) tensor spin (inner). Everything is in ordinary frequency (GHz).

use nalgebra::{Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{C64, MU_B_GHZ_PER_T};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("effective g-factor undefined at zero field")]
    DegenerateField,
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("no strain reproduces target {what} = {target}")]
    Unreachable { what: &'static str, target: f64 },
}

/// Spin-orbit, strain and Zeeman constants for one manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SivParameters {
    /// Spin-orbit constant (half the zero-strain splitting), GHz.
    pub lambda_so: f64,
    pub strain_alpha: f64,
    pub strain_beta: f64,
    pub strain_gamma: f64,
    /// Orbital gyromagnetic factor, GHz/T.
    pub zeeman_orbital: f64,
    /// Spin gyromagnetic factor, GHz/T.
    pub zeeman_spin: f64,
    pub ham_reduction: f64,
    /// GHz per unit strain.
    pub strain_susceptibility: f64,
}

impl SivParameters {
    pub fn ground() -> Self {
        Self {
            lambda_so: 25.0,
            strain_alpha: 0.0,
            strain_beta: 0.0,
            strain_gamma: 0.0,
            zeeman_orbital: MU_B_GHZ_PER_T,
            zeeman_spin: 2.0 * MU_B_GHZ_PER_T,
            ham_reduction: 0.1,
            strain_susceptibility: 1.7e6,
        }
    }

    pub fn excited() -> Self {
        Self { lambda_so: 125.0, strain_susceptibility: 3.4e6, ..Self::ground() }
    }

    /// Single-component strain model: only `eps_zx` nonzero, so `beta = f * eps_zx`.
    pub fn with_zx_strain(self, eps_zx: f64) -> Self {
        Self {
            strain_alpha: 0.0,
            strain_beta: self.strain_susceptibility * eps_zx,
            strain_gamma: 0.0,
            ..self
        }
    }

    /// Transverse strain chosen so the field-free doublet gap equals `delta_gs`.
    pub fn with_ground_splitting(self, delta_gs: f64) -> Result<Self, SpinError> {
        let eps = zx_strain_for_splitting(&self, delta_gs)?;
        Ok(self.with_zx_strain(eps))
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        let bad = |field, reason: &str| Err(SpinError::InvalidParameter { field, reason: reason.into() });
        if !(self.lambda_so > 0.0) {
            return bad("lambda_so", "must be > 0");
        }
        if !(self.ham_reduction > 0.0 && self.ham_reduction <= 1.0) {
            return bad("ham_reduction", "must lie in (0, 1]");
        }
        if !(self.strain_susceptibility > 0.0) {
            return bad("strain_susceptibility", "must be > 0");
        }
        for (f, v) in [
            ("strain_alpha", self.strain_alpha),
            ("strain_beta", self.strain_beta),
            ("strain_gamma", self.strain_gamma),
            ("zeeman_orbital", self.zeeman_orbital),
            ("zeeman_spin", self.zeeman_spin),
        ] {
            if !v.is_finite() {
                return bad(f, "must be finite");
            }
        }
        Ok(())
    }
}

/// External field in the SiV frame (z along the symmetry axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticField {
    pub magnitude: f64,
    pub polar_angle: f64,
    pub azimuthal_angle: f64,
}

impl MagneticField {
    /// Builds a field, folding the angles into `[0, pi] x [0, 2pi)`.
    pub fn new(magnitude: f64, polar_angle: f64, azimuthal_angle: f64) -> Self {
        use std::f64::consts::{PI, TAU};
        let mut theta = polar_angle.rem_euclid(TAU);
        let mut phi = azimuthal_angle;
        if theta > PI {
            theta = TAU - theta;
            phi += PI;
        }
        let (mut mag, mut th) = (magnitude, theta);
        if mag < 0.0 {
            mag = -mag;
            th = PI - th;
            phi += PI;
        }
        Self { magnitude: mag, polar_angle: th, azimuthal_angle: phi.rem_euclid(TAU) }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn axial(magnitude: f64) -> Self {
        Self::new(magnitude, 0.0, 0.0)
    }

    pub fn transverse(magnitude: f64) -> Self {
        Self::new(magnitude, std::f64::consts::FRAC_PI_2, 0.0)
    }

    pub fn direction(&self) -> [f64; 3] {
        let (st, ct) = self.polar_angle.sin_cos();
        let (sp, cp) = self.azimuthal_angle.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn vector(&self) -> [f64; 3] {
        self.direction().map(|c| c * self.magnitude)
    }

    pub fn axial_component(&self) -> f64 {
        self.magnitude * self.polar_angle.cos()
    }
}

/// Eigen-decomposition of one manifold.
#[derive(Debug, Clone)]
pub struct LevelStructure {
    /// Ascending eigenfrequencies, GHz.
    pub energies: [f64; 4],
    /// Column `k` is the eigenvector of `energies[k]`.
    pub states: Matrix4<C64>,
    /// Spin label of each level (`true` = up along the quantisation direction).
    pub spin_up: [bool; 4],
}

impl LevelStructure {
    /// (up, down) energies of the lower doublet.
    pub fn lower_doublet(&self) -> (f64, f64) {
        doublet(self, 0)
    }

    pub fn upper_doublet(&self) -> (f64, f64) {
        doublet(self, 2)
    }

    pub fn reconstruct(&self) -> Matrix4<C64> {
        let d = Matrix4::from_diagonal(&Vector4::from_iterator(self.energies.iter().map(|&e| C64::new(e, 0.0))));
        self.states * d * self.states.adjoint()
    }
}

fn doublet(ls: &LevelStructure, start: usize) -> (f64, f64) {
    let (a, b) = (ls.energies[start], ls.energies[start + 1]);
    if ls.spin_up[start] { (a, b) } else { (b, a) }
}

/// Spin-conserving optical lines and the qubit splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub f_qubit: f64,
    pub f_up_up: f64,
    pub f_down_down: f64,
    pub optical_splitting: f64,
}

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Full 4x4 Hamiltonian.
///
/// The orbital Zeeman term couples to the axial projection of the field with a
/// sign that makes the lower-branch orbital moment oppose the spin moment; the
/// spin Zeeman term uses the full field vector.
pub fn build_hamiltonian(p: &SivParameters, field: &MagneticField) -> Matrix4<C64> {
    let mut h = Matrix4::<C64>::zeros();
    let (a, b, g, l) = (p.strain_alpha, p.strain_beta, p.strain_gamma, p.lambda_so);
    let x = p.ham_reduction * p.zeeman_orbital * field.axial_component();

    for s in 0..2 {
        h[(s, s)] += c(a - b);
        h[(s + 2, s + 2)] += c(a + b);
        h[(s, s + 2)] += c(g);
    }
    // spin-orbit: -i lambda for up, +i lambda for down on the e_y/e_x coupling
    h[(0, 2)] += -I * l;
    h[(1, 3)] += I * l;
    // orbital Zeeman
    h[(0, 2)] += -I * x;
    h[(1, 3)] += -I * x;
    for s in 0..2 {
        h[(s + 2, s)] = h[(s, s + 2)].conj();
    }

    let [bx, by, bz] = field.vector();
    let k = 0.5 * p.zeeman_spin;
    let spin = Matrix2::new(c(k * bz), C64::new(k * bx, -k * by), C64::new(k * bx, k * by), c(-k * bz));
    for o in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                h[(2 * o + i, 2 * o + j)] += spin[(i, j)];
            }
        }
    }
    h
}

fn spin_up_projector(dir: [f64; 3]) -> Matrix4<C64> {
    let [nx, ny, nz] = dir;
    let p2 = Matrix2::new(c(0.5 * (1.0 + nz)), C64::new(0.5 * nx, -0.5 * ny), C64::new(0.5 * nx, 0.5 * ny), c(0.5 * (1.0 - nz)));
    let mut p = Matrix4::zeros();
    for o in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                p[(2 * o + i, 2 * o + j)] = p2[(i, j)];
            }
        }
    }
    p
}

/// Diagonalise and label spins.
///
/// Spin labels come from overlap with the spin-up projector along the field
/// direction (the symmetry axis at zero field). Near-degenerate pairs are first
/// rotated to diagonalise that projector so Kramers partners are well defined.
pub fn diagonalize(p: &SivParameters, field: &MagneticField) -> LevelStructure {
    let h = build_hamiltonian(p, field);
    let eig = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..4).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut energies = [0.0; 4];
    let mut states = Matrix4::<C64>::zeros();
    for (k, &i) in idx.iter().enumerate() {
        energies[k] = eig.eigenvalues[i];
        states.set_column(k, &eig.eigenvectors.column(i));
    }

    let dir = if field.magnitude > 0.0 { field.direction() } else { [0.0, 0.0, 1.0] };
    let proj = spin_up_projector(dir);
    for start in [0, 2] {
        if (energies[start + 1] - energies[start]).abs() < 1e-9 {
            let v0 = states.column(start).into_owned();
            let v1 = states.column(start + 1).into_owned();
            let m = Matrix2::new(
                v0.dotc(&(proj * v0)),
                v0.dotc(&(proj * v1)),
                v1.dotc(&(proj * v0)),
                v1.dotc(&(proj * v1)),
            );
            let e2 = m.symmetric_eigen();
            for k in 0..2 {
                let u = e2.eigenvectors.column(k);
                let v = v0 * u[0] + v1 * u[1];
                states.set_column(start + k, &v);
            }
        }
    }

    let mut spin_up = [false; 4];
    for start in [0, 2] {
        let w0 = states.column(start).dotc(&(proj * states.column(start))).re;
        let w1 = states.column(start + 1).dotc(&(proj * states.column(start + 1))).re;
        spin_up[start] = w0 > w1;
        spin_up[start + 1] = !spin_up[start];
    }
    LevelStructure { energies, states, spin_up }
}

/// Field-free doublet gap `2 sqrt(beta^2 + gamma^2 + lambda^2)`.
pub fn ground_splitting(p: &SivParameters) -> f64 {
    2.0 * (p.strain_beta.powi(2) + p.strain_gamma.powi(2) + p.lambda_so.powi(2)).sqrt()
}

/// `eps_zx` giving the requested field-free doublet gap.
pub fn zx_strain_for_splitting(p: &SivParameters, delta_gs: f64) -> Result<f64, SpinError> {
    let half = 0.5 * delta_gs;
    if half < p.lambda_so {
        return Err(SpinError::Unreachable { what: "ground splitting", target: delta_gs });
    }
    Ok((half * half - p.lambda_so * p.lambda_so).sqrt() / p.strain_susceptibility)
}

fn lower_splitting(p: &SivParameters, field: &MagneticField) -> f64 {
    let (up, down) = diagonalize(p, field).lower_doublet();
    up - down
}

fn lower_center(p: &SivParameters, field: &MagneticField) -> (f64, f64) {
    diagonalize(p, field).lower_doublet()
}

/// Qubit and spin-conserving optical transitions.
///
/// Optical lines are measured from the zero-field line centre.
pub fn transitions(gs: &SivParameters, es: &SivParameters, field: &MagneticField) -> TransitionSet {
    let (g_up, g_down) = lower_center(gs, field);
    let (e_up, e_down) = lower_center(es, field);
    let g0 = lower_center(gs, &MagneticField::zero()).0;
    let e0 = lower_center(es, &MagneticField::zero()).0;
    let zpl = e0 - g0;
    let f_up_up = e_up - g_up - zpl;
    let f_down_down = e_down - g_down - zpl;
    TransitionSet { f_qubit: g_up - g_down, f_up_up, f_down_down, optical_splitting: f_up_up - f_down_down }
}

/// Effective g-factor `f_qubit / (mu_B B)`.
pub fn effective_g(p: &SivParameters, field: &MagneticField) -> Result<f64, SpinError> {
    if field.magnitude <= 0.0 {
        return Err(SpinError::DegenerateField);
    }
    Ok(lower_splitting(p, field) / (MU_B_GHZ_PER_T * field.magnitude))
}

/// Ground splitting that yields the target effective g at `field`, found by bisection.
///
/// The g-factor is monotone in transverse strain for axial and transverse fields.
pub fn splitting_for_g(p: &SivParameters, field: &MagneticField, target_g: f64) -> Result<f64, SpinError> {
    let g_at = |d: f64| -> Result<f64, SpinError> { effective_g(&p.with_ground_splitting(d)?, field) };
    let mut lo = 2.0 * p.lambda_so * (1.0 + 1e-12);
    let mut hi = 2.0 * p.lambda_so * 1e3;
    let (glo, ghi) = (g_at(lo)? - target_g, g_at(hi)? - target_g);
    if glo.signum() == ghi.signum() {
        return Err(SpinError::Unreachable { what: "effective g", target: target_g });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g_at(mid)? - target_g;
        if gm.signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Normalised orbital part `(c_y, c_x)` of a lower-branch state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalMix {
    pub e_y: C64,
    pub e_x: C64,
}

impl OrbitalMix {
    /// `e_y` amplitude relative to `e_x`.
    pub fn ratio(&self) -> C64 {
        self.e_y / self.e_x
    }
}

/// Orbital character of the two lower-branch states at zero field: `(up, down)`.
///
/// Amplitudes follow from the 2x2 orbital block of each spin sector; with
/// `lambda > 0` the denominator `s - beta` never vanishes, so the zero-strain
/// limit `|e_+->` needs no special casing.
pub fn orbital_composition(p: &SivParameters) -> (OrbitalMix, OrbitalMix) {
    let s = (p.strain_beta.powi(2) + p.strain_gamma.powi(2) + p.lambda_so.powi(2)).sqrt();
    let mix = |sigma: f64| {
        let cs = C64::new(p.strain_gamma, -sigma * p.lambda_so);
        // s - beta, written without cancellation
        let gap = (p.strain_gamma.powi(2) + p.lambda_so.powi(2)) / (s + p.strain_beta);
        let ratio = -cs / gap;
        let norm = (1.0 + ratio.norm_sqr()).sqrt();
        OrbitalMix { e_y: ratio / norm, e_x: c(1.0 / norm) }
    };
    (mix(1.0), mix(-1.0))
}

/// First-order response of the qubit and optical frequencies to a relative
/// strain fluctuation `xi` around `eps_zx`, as `(df_mw, df_optical)` in GHz.
pub fn strain_sensitivity(gs: &SivParameters, es: &SivParameters, eps_zx: f64, xi: f64, b_axial: f64) -> (f64, f64) {
    let bg2 = (gs.strain_susceptibility * eps_zx).powi(2);
    let be2 = (es.strain_susceptibility * eps_zx).powi(2);
    let (lg, le) = (gs.lambda_so, es.lambda_so);
    let x = gs.ham_reduction * gs.zeeman_orbital * b_axial;
    let df_mw = 2.0 * bg2 * lg * x / (bg2 + lg * lg).powf(1.5) * xi;
    let df_opt = (bg2 / (bg2 + lg * lg).sqrt() - be2 / (be2 + le * le).sqrt()) * xi;
    (df_mw, df_opt)
}

/// Axial field at which `strain_sensitivity` gives the requested `df_mw`.
pub fn calibrate_axial_field(gs: &SivParameters, es: &SivParameters, eps_zx: f64, xi: f64, target_df_mw: f64) -> f64 {
    let (per_tesla, _) = strain_sensitivity(gs, es, eps_zx, xi, 1.0);
    target_df_mw / per_tesla
}

/// Axial field (T) at which the 140 GHz emitter shows a +4 MHz qubit shift
/// for a 1 % strain fluctuation; the published estimate omits this field.
pub const CALIBRATED_B_AXIAL_TESLA: f64 = 0.458_611;

/// One emitter parameter set from the bundled fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterFixture {
    pub name: String,
    pub delta_gs_ghz: f64,
    pub field_tesla: f64,
    pub polar_angle_deg: f64,
    pub note: String,
}

impl EmitterFixture {
    pub fn field(&self) -> MagneticField {
        MagneticField::new(self.field_tesla, self.polar_angle_deg.to_radians(), 0.0)
    }

    /// Ground and excited parameters strained to this emitter's splitting.
    pub fn parameters(&self) -> Result<(SivParameters, SivParameters), SpinError> {
        let eps = zx_strain_for_splitting(&SivParameters::ground(), self.delta_gs_ghz)?;
        Ok((SivParameters::ground().with_zx_strain(eps), SivParameters::excited().with_zx_strain(eps)))
    }
}

#[derive(Deserialize)]
struct EmitterFile {
    emitters: Vec<EmitterFixture>,
}

/// Emitters shipped with the crate: two measured devices and one synthetic.
pub fn bundled_emitters() -> Vec<EmitterFixture> {
    let f: EmitterFile = serde_json::from_str(include_str!("../fixtures/emitters.json")).expect("bundled emitter fixture parses");
    f.emitters
}

/// Numerical first-order shifts by central differences of the full diagonalisation.
///
/// The optical shift uses the mean of the two spin-conserving lines so the
/// field-linear terms cancel.
pub fn strain_sensitivity_numeric(gs: &SivParameters, es: &SivParameters, eps_zx: f64, xi: f64, b_axial: f64) -> (f64, f64) {
    let field = MagneticField::axial(b_axial);
    let eval = |scale: f64| {
        let g = gs.with_zx_strain(eps_zx * scale);
        let e = es.with_zx_strain(eps_zx * scale);
        let (gu, gd) = lower_center(&g, &field);
        let (eu, ed) = lower_center(&e, &field);
        (gu - gd, 0.5 * ((eu - gu) + (ed - gd)))
    };
    let (mp, op) = eval(1.0 + xi);
    let (mm, om) = eval(1.0 - xi);
    (0.5 * (mp - mm), 0.5 * (op - om))
}
