//! Constrained two-qubit reconstruction from Z/X correlations, Bell fidelity,
//! concurrence (exact and lower bounds), readout-error inversion and the
//! Z-basis CNOT transfer-matrix estimate.
//!
//! Probability layouts: `zz = [p00, p01, p10, p11]` with the photon (or
//! electron) as the first qubit and `0 = up`; `xx = [p++, p+-, p-+, p--]`
//! where for the spin `+` is the `->` outcome.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Basis, Histogram};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomographyError {
    #[error("{basis} probabilities sum to {sum}, expected 1")]
    Normalization { basis: &'static str, sum: f64 },
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("density matrix is not physical: {0}")]
    NotPhysical(String),
    #[error("readout fidelity {0} must lie in (0.5, 1]")]
    IllPosedReadout(f64),
    #[error("nuclear readout fidelities are required")]
    MissingNuclear,
    #[error("need 4 initialisations, got {0}")]
    InsufficientInitializations(usize),
    #[error("histogram basis mismatch")]
    BasisMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationData {
    pub zz: [f64; 4],
    pub xx: [f64; 4],
    pub zz_shots: u64,
    pub xx_shots: u64,
}

impl CorrelationData {
    pub fn new(zz: [f64; 4], xx: [f64; 4]) -> Self {
        Self { zz, xx, zz_shots: 0, xx_shots: 0 }
    }

    pub fn from_histograms(zz: &Histogram, xx: &Histogram) -> Result<Self, TomographyError> {
        if zz.basis != Basis::Z || xx.basis != Basis::X {
            return Err(TomographyError::BasisMismatch);
        }
        Ok(Self { zz: zz.probabilities(), xx: xx.probabilities(), zz_shots: zz.shots, xx_shots: xx.shots })
    }

    pub fn validate(&self) -> Result<(), TomographyError> {
        for (basis, p) in [("ZZ", &self.zz), ("XX", &self.xx)] {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(TomographyError::Normalization { basis, sum });
            }
            if let Some(&v) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
                return Err(TomographyError::OutOfRange(v));
            }
        }
        Ok(())
    }

    /// `<XX> = p++ + p-- - p+- - p-+`.
    pub fn xx_contrast(&self) -> f64 {
        self.xx[0] + self.xx[3] - self.xx[1] - self.xx[2]
    }
}

/// Hermitian, unit-trace, positive semidefinite 4x4 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix4(pub Matrix4<C64>);

impl DensityMatrix4 {
    pub fn new(m: Matrix4<C64>) -> Result<Self, TomographyError> {
        let herm = (m - m.adjoint()).norm();
        if herm > 1e-9 {
            return Err(TomographyError::NotPhysical(format!("anti-Hermitian part {herm:.2e}")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(TomographyError::NotPhysical(format!("trace {tr}")));
        }
        let min = SymmetricEigen::new(m).eigenvalues.min();
        if min < -1e-9 {
            return Err(TomographyError::NotPhysical(format!("eigenvalue {min:.2e}")));
        }
        Ok(Self(m))
    }

    pub fn pure(psi: &nalgebra::Vector4<C64>) -> Self {
        let n = psi.norm_squared();
        Self(psi * psi.adjoint() / C64::new(n, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub rho: DensityMatrix4,
    /// Coherence between `01` and `10` after clipping.
    pub coherence: f64,
    pub clipped: bool,
}

/// Diagonal from ZZ, one real coherence `c = <XX>/2` on the `01-10` pair,
/// clipped to the positivity limit `sqrt(p01 p10)`.
pub fn rho_from_correlations(d: &CorrelationData) -> Result<Reconstruction, TomographyError> {
    d.validate()?;
    let raw = 0.5 * d.xx_contrast();
    let limit = (d.zz[1] * d.zz[2]).sqrt();
    let clipped = raw.abs() > limit;
    let c = raw.clamp(-limit, limit);
    let mut m = Matrix4::<C64>::zeros();
    for k in 0..4 {
        m[(k, k)] = C64::new(d.zz[k], 0.0);
    }
    m[(1, 2)] = C64::new(c, 0.0);
    m[(2, 1)] = C64::new(c, 0.0);
    Ok(Reconstruction { rho: DensityMatrix4::new(m)?, coherence: c, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellTarget {
    /// `(|01> + |10>)/sqrt2`
    Plus,
    /// `(|01> - |10>)/sqrt2`
    Minus,
}

impl BellTarget {
    fn sign(self) -> f64 {
        match self {
            BellTarget::Plus => 1.0,
            BellTarget::Minus => -1.0,
        }
    }
}

/// Fidelity of the reconstruction with the target; `literal` swaps in the
/// `p00 + p11` populations as printed for cross-checking.
pub fn fidelity_bell(d: &CorrelationData, target: BellTarget, literal: bool) -> Result<f64, TomographyError> {
    let rec = rho_from_correlations(d)?;
    let pops = if literal { d.zz[0] + d.zz[3] } else { d.zz[1] + d.zz[2] };
    Ok((0.5 * (pops + 2.0 * target.sign() * rec.coherence)).clamp(0.0, 1.0))
}

pub fn fidelity_rho(rho: &DensityMatrix4, target: BellTarget) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let v = nalgebra::Vector4::new(z, C64::new(r, 0.0), C64::new(target.sign() * r, 0.0), z);
    (v.adjoint() * rho.0 * v)[(0, 0)].re
}

fn sqrt_psd(m: &Matrix4<C64>) -> Matrix4<C64> {
    let eig = SymmetricEigen::new(*m);
    let mut d = Matrix4::<C64>::zeros();
    for k in 0..4 {
        d[(k, k)] = C64::new(eig.eigenvalues[k].max(0.0).sqrt(), 0.0);
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Wootters concurrence with the conjugated spin flip `(Y x Y) rho* (Y x Y)`.
///
/// X-shaped states (diagonal plus anti-diagonal) use the exact closed form;
/// the eigenvalue route loses about `sqrt(eps)` at rank-deficient states.
pub fn concurrence_wootters(rho: &DensityMatrix4) -> f64 {
    let m = &rho.0;
    let off_x = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| i != j && i + j != 3).map(|(i, j)| m[(i, j)].norm()).fold(0.0, f64::max);
    if off_x <= 1e-15 {
        let p = |k: usize| m[(k, k)].re.max(0.0);
        let outer = m[(0, 3)].norm() - (p(1) * p(2)).sqrt();
        let inner = m[(1, 2)].norm() - (p(0) * p(3)).sqrt();
        return (2.0 * outer.max(inner)).clamp(0.0, 1.0);
    }
    concurrence_eigen(rho)
}

fn concurrence_eigen(rho: &DensityMatrix4) -> f64 {
    let y = Matrix2::new(C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0));
    let yy = y.kronecker(&y);
    let flipped = &yy * rho.0.conjugate() * &yy;
    let s = sqrt_psd(&rho.0);
    let h = &s * flipped * &s;
    let h = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    (ev[0] - ev[1] - ev[2] - ev[3]).max(0.0)
}

/// `C >= 2(|c| - sqrt(p00 p11))`, floored at 0.
pub fn concurrence_bound(d: &CorrelationData) -> Result<f64, TomographyError> {
    let rec = rho_from_correlations(d)?;
    Ok((2.0 * (rec.coherence.abs() - (d.zz[0] * d.zz[3]).sqrt())).max(0.0))
}

/// Electron-nuclear bound `<XX> - 4 sqrt(p00 p11)`, floored at 0.
pub fn en_concurrence_bound(d: &CorrelationData) -> Result<f64, TomographyError> {
    d.validate()?;
    Ok((d.xx_contrast() - 4.0 * (d.zz[0] * d.zz[3]).sqrt()).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutFidelities {
    pub f_up_e: f64,
    pub f_down_e: f64,
    pub f_up_n: Option<f64>,
    pub f_down_n: Option<f64>,
}

impl ReadoutFidelities {
    pub fn electron(f_up: f64, f_down: f64) -> Self {
        Self { f_up_e: f_up, f_down_e: f_down, f_up_n: None, f_down_n: None }
    }

    pub fn validate(&self) -> Result<(), TomographyError> {
        for f in [Some(self.f_up_e), Some(self.f_down_e), self.f_up_n, self.f_down_n].into_iter().flatten() {
            if !(f > 0.5 && f <= 1.0) {
                return Err(TomographyError::IllPosedReadout(f));
            }
        }
        Ok(())
    }
}

/// `m[(declared, true)]` for one qubit read out as bright (0) / dark (1).
pub fn spin_confusion(f_up: f64, f_down: f64) -> Matrix2<f64> {
    Matrix2::new(f_up, 1.0 - f_down, 1.0 - f_up, f_down)
}

/// Photon outcome is error-free: one spin confusion block per photon outcome.
pub fn spin_photon_transfer(f: &ReadoutFidelities) -> Matrix4<f64> {
    Matrix2::<f64>::identity().kronecker(&spin_confusion(f.f_up_e, f.f_down_e))
}

pub fn electron_nuclear_transfer(f: &ReadoutFidelities) -> Result<Matrix4<f64>, TomographyError> {
    let (Some(u), Some(d)) = (f.f_up_n, f.f_down_n) else { return Err(TomographyError::MissingNuclear) };
    Ok(spin_confusion(f.f_up_e, f.f_down_e).kronecker(&spin_confusion(u, d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub data: CorrelationData,
    /// Raw inversion produced a probability below `-1e-6` (then clipped).
    pub negative: bool,
}

pub fn apply_transfer(t: &Matrix4<f64>, p: &[f64; 4]) -> [f64; 4] {
    let v = t * nalgebra::Vector4::from_row_slice(p);
    [v[0], v[1], v[2], v[3]]
}

/// Exact inverse without clipping, for round-trip checks.
pub fn invert_transfer(t: &Matrix4<f64>, p: &[f64; 4]) -> Option<[f64; 4]> {
    let v = t.try_inverse()? * nalgebra::Vector4::from_row_slice(p);
    Some([v[0], v[1], v[2], v[3]])
}

fn correct_with(t: &Matrix4<f64>, d: &CorrelationData) -> Result<Corrected, TomographyError> {
    let mut negative = false;
    let mut fix = |p: &[f64; 4]| {
        let mut v = invert_transfer(t, p).ok_or(TomographyError::IllPosedReadout(0.5))?;
        if v.iter().any(|x| *x < -1e-6) {
            negative = true;
        }
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
        let s: f64 = v.iter().sum();
        Ok::<_, TomographyError>(v.map(|x| x / s))
    };
    let zz = fix(&d.zz)?;
    let xx = fix(&d.xx)?;
    Ok(Corrected { data: CorrelationData { zz, xx, ..*d }, negative })
}

pub fn correct_readout_spin_photon(d: &CorrelationData, f: &ReadoutFidelities) -> Result<Corrected, TomographyError> {
    f.validate()?;
    correct_with(&spin_photon_transfer(f), d)
}

pub fn correct_readout_electron_nuclear(d: &CorrelationData, f: &ReadoutFidelities) -> Result<Corrected, TomographyError> {
    f.validate()?;
    correct_with(&electron_nuclear_transfer(f)?, d)
}

/// Raw and readout-corrected figures of merit for a spin-photon Bell run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellAnalysis {
    pub raw_fidelity: f64,
    pub corrected_fidelity: f64,
    pub raw_concurrence_bound: f64,
    pub corrected_concurrence_bound: f64,
    pub negative_after_correction: bool,
}

pub fn analyze_bell(zz: &Histogram, xx: &Histogram, f: &ReadoutFidelities, target: BellTarget) -> Result<BellAnalysis, TomographyError> {
    let raw = CorrelationData::from_histograms(zz, xx)?;
    let corr = correct_readout_spin_photon(&raw, f)?;
    Ok(BellAnalysis {
        raw_fidelity: fidelity_bell(&raw, target, false)?,
        corrected_fidelity: fidelity_bell(&corr.data, target, false)?,
        raw_concurrence_bound: concurrence_bound(&raw)?,
        corrected_concurrence_bound: concurrence_bound(&corr.data)?,
        negative_after_correction: corr.negative,
    })
}

/// Options for [`cnot_mle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub starts: usize,
    pub max_iter: usize,
    /// Bootstrap resamples for per-entry intervals; 0 disables.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { starts: 4, max_iter: 5000, bootstrap: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnotEstimate {
    /// Column-stochastic `t[(out, in)]`.
    pub transfer: [[f64; 4]; 4],
    pub log_likelihood: f64,
    /// 95% percentile intervals `(lo, hi)` per entry when bootstrapped.
    pub intervals: Option<[[(f64, f64); 4]; 4]>,
}

/// Counts indexed `[initialisation][outcome]`.
pub type RunCounts = [[u64; 4]; 4];

fn normalise_columns(runs: &RunCounts) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for (j, col) in runs.iter().enumerate() {
        let n: u64 = col.iter().sum();
        for i in 0..4 {
            m[(i, j)] = if n == 0 { 0.25 } else { col[i] as f64 / n as f64 };
        }
    }
    m
}

fn log_likelihood(r: &Matrix4<f64>, t: &Matrix4<f64>, gate: &RunCounts) -> f64 {
    let q = r * t;
    let mut ll = 0.0;
    for (j, col) in gate.iter().enumerate() {
        for i in 0..4 {
            if col[i] > 0 {
                ll += col[i] as f64 * q[(i, j)].max(1e-300).ln();
            }
        }
    }
    ll
}

/// Expectation-maximisation on the multinomial likelihood of `R T`.
fn em(r: &Matrix4<f64>, gate: &RunCounts, mut t: Matrix4<f64>, max_iter: usize) -> Matrix4<f64> {
    let mut last = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        let q = r * t;
        let mut next = Matrix4::zeros();
        for j in 0..4 {
            let n: f64 = gate[j].iter().map(|&c| c as f64).sum();
            if n == 0.0 {
                for k in 0..4 {
                    next[(k, j)] = t[(k, j)];
                }
                continue;
            }
            for k in 0..4 {
                let mut acc = 0.0;
                for i in 0..4 {
                    if gate[j][i] > 0 && q[(i, j)] > 0.0 {
                        acc += gate[j][i] as f64 * r[(i, k)] / q[(i, j)];
                    }
                }
                next[(k, j)] = t[(k, j)] * acc;
            }
            let s: f64 = (0..4).map(|k| next[(k, j)]).sum();
            for k in 0..4 {
                next[(k, j)] /= s;
            }
        }
        t = next;
        let ll = log_likelihood(r, &t, gate);
        if (ll - last).abs() <= 1e-13 * ll.abs().max(1.0) {
            break;
        }
        last = ll;
    }
    t
}

fn dirichlet_column(rng: &mut impl Rng) -> [f64; 4] {
    let g = Gamma::new(1.0, 1.0).expect("shape");
    let v: [f64; 4] = std::array::from_fn(|_| g.sample(rng) + 1e-3);
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}

fn fit_once(control: &RunCounts, gate: &RunCounts, opts: &MleOptions, rng: &mut impl Rng) -> (Matrix4<f64>, f64) {
    let r = normalise_columns(control);
    let mut best = (Matrix4::zeros(), f64::NEG_INFINITY);
    for s in 0..opts.starts.max(1) {
        let t0 = if s == 0 {
            Matrix4::from_element(0.25)
        } else {
            let mut m = Matrix4::zeros();
            for j in 0..4 {
                let c = dirichlet_column(rng);
                for k in 0..4 {
                    m[(k, j)] = c[k];
                }
            }
            m
        };
        let t = em(&r, gate, t0, opts.max_iter);
        let ll = log_likelihood(&r, &t, gate);
        if ll > best.1 {
            best = (t, ll);
        }
    }
    best
}

fn resample_runs(runs: &RunCounts, rng: &mut impl Rng) -> RunCounts {
    let mut out = [[0u64; 4]; 4];
    for (j, col) in runs.iter().enumerate() {
        let n: u64 = col.iter().sum();
        let mut left = n;
        let mut mass = 1.0;
        for i in 0..4 {
            let p = if n == 0 { 0.0 } else { col[i] as f64 / n as f64 };
            let c = if i == 3 || mass <= 0.0 { left } else { Binomial::new(left, (p / mass).clamp(0.0, 1.0)).expect("p").sample(rng) };
            out[j][i] = c;
            left -= c;
            mass -= p;
        }
    }
    out
}

/// Column-stochastic CNOT transfer matrix from Z-basis runs.
///
/// Control runs (no gate) estimate the combined preparation and readout
/// response `R`; gate runs are modelled as multinomial draws from `R T`.
pub fn cnot_mle(control: &[[u64; 4]], gate: &[[u64; 4]], opts: &MleOptions) -> Result<CnotEstimate, TomographyError> {
    if control.len() < 4 || gate.len() < 4 {
        return Err(TomographyError::InsufficientInitializations(control.len().min(gate.len())));
    }
    let control: RunCounts = std::array::from_fn(|j| control[j]);
    let gate: RunCounts = std::array::from_fn(|j| gate[j]);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (t, ll) = fit_once(&control, &gate, opts, &mut rng);
    let intervals = if opts.bootstrap > 0 {
        let mut samples: Vec<Matrix4<f64>> = Vec::with_capacity(opts.bootstrap);
        let single = MleOptions { starts: 1, ..*opts };
        for _ in 0..opts.bootstrap {
            let c = resample_runs(&control, &mut rng);
            let g = resample_runs(&gate, &mut rng);
            samples.push(fit_once(&c, &g, &single, &mut rng).0);
        }
        Some(std::array::from_fn(|k| {
            std::array::from_fn(|j| {
                let mut v: Vec<f64> = samples.iter().map(|m| m[(k, j)]).collect();
                v.sort_by(f64::total_cmp);
                let at = |q: f64| v[((q * (v.len() - 1) as f64).round()) as usize];
                (at(0.025), at(0.975))
            })
        }))
    } else {
        None
    };
    Ok(CnotEstimate { transfer: std::array::from_fn(|k| std::array::from_fn(|j| t[(k, j)])), log_likelihood: ll, intervals })
}

/// Ideal CNOT as a permutation `t[(out, in)]` with the electron as control.
pub fn cnot_permutation() -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for (i, o) in [(0, 1), (1, 0), (2, 2), (3, 3)] {
        m[(o, i)] = 1.0;
    }
    m
}

/// Multinomial counts with column probabilities `m[(out, in)]`.
pub fn sample_runs(m: &Matrix4<f64>, shots: u64, rng: &mut impl Rng) -> RunCounts {
    let mut runs = [[0u64; 4]; 4];
    for j in 0..4 {
        let mut left = shots;
        let mut mass = 1.0;
        for i in 0..4 {
            let p = m[(i, j)];
            let c = if i == 3 || mass <= 0.0 { left } else { Binomial::new(left, (p / mass).clamp(0.0, 1.0)).expect("p").sample(rng) };
            runs[j][i] = c;
            left -= c;
            mass -= p;
        }
    }
    runs
}
