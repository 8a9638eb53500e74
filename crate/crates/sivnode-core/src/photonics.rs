//! Nanobeam cavity design over a 1-D effective-index transfer-matrix surrogate:
//! cubic taper, resonance Q and mode volume, scoring, gradient ascent and
//! input-mirror truncation for waveguide coupling.
//!
//! The surrogate maps each unit cell to a hole layer and a bridge layer.
//! Absolute Q/V values are surrogate-relative only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid design parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("no resonance inside the mirror stop band")]
    NoResonance,
    #[error("need at least 3 cells, got {0}")]
    TooFewCells(usize),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> DesignError {
    DesignError::InvalidParameter { name, reason: reason.into() }
}

/// Bulk diamond index; also the mode-volume reference index.
pub const N_DIAMOND: f64 = 2.4;
/// Transverse mode area used to turn an effective length into a volume (nm^2).
pub const MODE_AREA_NM2: f64 = 3.0e4;
pub const Q_CUTOFF_DEFAULT: f64 = 5.0e5;
/// Intrinsic scattering quality factor used for waveguide coupling.
pub const Q_INTRINSIC_DEFAULT: f64 = 2.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCell {
    pub lattice_const_a: f64,
    pub hole_hx: f64,
    pub hole_hy: f64,
    pub waveguide_width_w: f64,
    pub etch_angle_theta: f64,
}

impl Default for UnitCell {
    fn default() -> Self {
        Self { lattice_const_a: 196.0, hole_hx: 100.0, hole_hy: 200.0, waveguide_width_w: 480.0, etch_angle_theta: 50.0 }
    }
}

impl UnitCell {
    pub fn validate(&self) -> Result<(), DesignError> {
        for (name, v) in [
            ("lattice_const_a", self.lattice_const_a),
            ("hole_hx", self.hole_hx),
            ("hole_hy", self.hole_hy),
            ("waveguide_width_w", self.waveguide_width_w),
            ("etch_angle_theta", self.etch_angle_theta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.hole_hx >= self.lattice_const_a {
            return Err(invalid("hole_hx", "must be smaller than the lattice constant"));
        }
        if self.hole_hy >= self.waveguide_width_w {
            return Err(invalid("hole_hy", "must be smaller than the waveguide width"));
        }
        if self.etch_angle_theta >= 90.0 {
            return Err(invalid("etch_angle_theta", "must be below 90 degrees"));
        }
        Ok(())
    }

    /// Index of the unpatterned beam: triangular cross-section mapped to an
    /// equivalent width, saturating toward bulk diamond.
    pub fn beam_index(&self) -> f64 {
        let area = self.waveguide_width_w.powi(2) * self.etch_angle_theta.to_radians().tan() / 4.0;
        1.0 + (N_DIAMOND - 1.0) * (1.0 - (-area.sqrt() / 200.0).exp())
    }

    /// Hole-layer index: permittivity averaged over the removed width fraction.
    pub fn hole_index(&self) -> f64 {
        let f = self.hole_hy / self.waveguide_width_w;
        ((1.0 - f) * self.beam_index().powi(2) + f).sqrt()
    }

    /// `(index, thickness)` layers: half bridge, centered hole, half bridge.
    pub fn layers(&self) -> [(f64, f64); 3] {
        let hole = PI / 4.0 * self.hole_hx;
        let half = 0.5 * (self.lattice_const_a - hole);
        [(self.beam_index(), half), (self.hole_index(), hole), (self.beam_index(), half)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaperedParameter {
    LatticeConst,
    HoleHx,
    HoleHy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaperProfile {
    pub defect_depth_dmax: f64,
    pub n_taper_cells: usize,
    pub tapered_parameters: Vec<TaperedParameter>,
}

impl Default for TaperProfile {
    fn default() -> Self {
        Self { defect_depth_dmax: 0.1, n_taper_cells: 8, tapered_parameters: vec![TaperedParameter::LatticeConst] }
    }
}

impl TaperProfile {
    pub fn validate(&self) -> Result<(), DesignError> {
        if !(0.0..1.0).contains(&self.defect_depth_dmax) {
            return Err(invalid("defect_depth_dmax", "must lie in [0, 1)"));
        }
        if self.n_taper_cells < 1 {
            return Err(invalid("n_taper_cells", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityDesign {
    pub mirror_cells_output: usize,
    pub mirror_cells_input: usize,
    pub base_cell: UnitCell,
    pub taper: TaperProfile,
}

impl Default for CavityDesign {
    fn default() -> Self {
        Self { mirror_cells_output: 10, mirror_cells_input: 10, base_cell: UnitCell::default(), taper: TaperProfile::default() }
    }
}

impl CavityDesign {
    pub fn validate(&self) -> Result<(), DesignError> {
        self.base_cell.validate()?;
        self.taper.validate()?;
        if self.mirror_cells_input > self.mirror_cells_output {
            return Err(invalid("mirror_cells_input", "must not exceed mirror_cells_output"));
        }
        Ok(())
    }
}

/// `A(x) = 1 - dmax |2x^3 - 3x^2 + 1|`.
pub fn taper_scale(x: f64, dmax: f64) -> f64 {
    1.0 - dmax * (2.0 * x.powi(3) - 3.0 * x * x + 1.0).abs()
}

/// Input mirrors, taper (center cell once), output mirrors.
pub fn build_design(d: &CavityDesign) -> Result<Vec<UnitCell>, DesignError> {
    d.validate()?;
    let n = d.taper.n_taper_cells;
    let scaled = |i: usize| {
        let s = taper_scale(i as f64 / n as f64, d.taper.defect_depth_dmax);
        let mut c = d.base_cell;
        for p in &d.taper.tapered_parameters {
            match p {
                TaperedParameter::LatticeConst => c.lattice_const_a *= s,
                TaperedParameter::HoleHx => c.hole_hx *= s,
                TaperedParameter::HoleHy => c.hole_hy *= s,
            }
        }
        c
    };
    let mut cells = vec![d.base_cell; d.mirror_cells_input];
    cells.extend((1..n).rev().map(scaled));
    cells.push(scaled(0));
    cells.extend((1..n).map(scaled));
    cells.extend(std::iter::repeat_n(d.base_cell, d.mirror_cells_output));
    Ok(cells)
}

type M2 = [[C64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Characteristic matrix of a homogeneous layer at (possibly complex) wavenumber `k0`.
fn layer(n: f64, d: f64, k0: C64) -> M2 {
    let delta = k0 * n * d;
    let (s, c) = (delta.sin(), delta.cos());
    let i = C64::new(0.0, 1.0);
    [[c, -i * s / n], [-i * n * s, c]]
}

fn flatten(cells: &[UnitCell]) -> Vec<(f64, f64)> {
    cells.iter().flat_map(|c| c.layers()).collect()
}

fn stack(layers: &[(f64, f64)], k0: C64) -> M2 {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    layers.iter().fold([[one, zero], [zero, one]], |m, &(n, d)| mul(&m, &layer(n, d, k0)))
}

fn denominator(m: &M2, ns: f64) -> C64 {
    m[0][0] * ns + m[0][1] * ns * ns + m[1][0] + m[1][1] * ns
}

/// Amplitude transmission and reflection of a stack embedded in index `ns`.
pub fn transfer(cells: &[UnitCell], ns: f64, k0: f64) -> (C64, C64) {
    let m = stack(&flatten(cells), C64::new(k0, 0.0));
    let d = denominator(&m, ns);
    let t = C64::new(2.0 * ns, 0.0) / d;
    let r = (m[0][0] * ns + m[0][1] * ns * ns - m[1][0] - m[1][1] * ns) / d;
    (t, r)
}

/// Band edges `(k_low, k_high)` of the first stop band of an infinite lattice of `cell`.
pub fn stop_band(cell: &UnitCell) -> (f64, f64) {
    let ls = cell.layers();
    let opl: f64 = ls.iter().map(|(n, d)| n * d).sum();
    let kb = PI / opl;
    let half_trace = |k: f64| {
        let m = stack(&ls, C64::new(k, 0.0));
        0.5 * (m[0][0] + m[1][1]).re
    };
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..100 {
            let mid = 0.5 * (inside + outside);
            if half_trace(mid).abs() > 1.0 { inside = mid } else { outside = mid }
        }
        0.5 * (inside + outside)
    };
    if half_trace(kb).abs() <= 1.0 {
        return (kb, kb);
    }
    (edge(kb, 0.5 * kb), edge(kb, 1.5 * kb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpectrum {
    pub quality_q: f64,
    pub mode_volume_v: f64,
    /// Free-space resonance wavelength (nm).
    pub wavelength_nm: f64,
    /// Resonance wavenumber (1/nm).
    pub k0: f64,
    /// Resonance position inside the mirror stop band, 0 at the lower edge.
    pub gap_position: f64,
    /// `(position nm, n^2 |E|^2)` samples.
    pub profile: Vec<(f64, f64)>,
}

fn newton_root(layers: &[(f64, f64)], ns: f64, mut z: C64) -> Option<C64> {
    let f = |z: C64| denominator(&stack(layers, z), ns);
    for _ in 0..100 {
        let h = z.norm() * 1e-7;
        let fz = f(z);
        let df = (f(z + h) - f(z - h)) / (2.0 * h);
        if df.norm() == 0.0 || !df.is_finite() {
            return None;
        }
        let step = fz / df;
        z -= step;
        if step.norm() <= 1e-15 * z.norm() {
            return Some(z);
        }
    }
    None
}

/// Resonance, Q and mode volume of a cell list embedded in the mirror-cell beam.
pub fn surrogate_spectrum(cells: &[UnitCell]) -> Result<SurrogateSpectrum, DesignError> {
    if cells.len() < 3 {
        return Err(DesignError::TooFewCells(cells.len()));
    }
    let mirror = cells[0];
    let ns = mirror.beam_index();
    let (lo, hi) = stop_band(&mirror);
    if hi <= lo {
        return Err(DesignError::NoResonance);
    }
    let layers = flatten(cells);
    let margin = 0.02 * (hi - lo);
    let grid: Vec<f64> = (0..=600).map(|i| lo + margin + (hi - lo - 2.0 * margin) * i as f64 / 600.0).collect();
    let mags: Vec<f64> = grid.iter().map(|&k| denominator(&stack(&layers, C64::new(k, 0.0)), ns).norm().ln()).collect();
    let mut candidates: Vec<usize> = (1..grid.len() - 1).filter(|&i| mags[i] < mags[i - 1] && mags[i] <= mags[i + 1]).collect();
    candidates.sort_by(|&a, &b| mags[a].total_cmp(&mags[b]));
    let mut best: Option<C64> = None;
    for i in candidates {
        if let Some(z) = newton_root(&layers, ns, C64::new(grid[i], 0.0)) {
            if z.re > lo + 0.5 * margin && z.re < hi - 0.5 * margin && z.im < 0.0 {
                if best.is_none_or(|b| z.im.abs() < b.im.abs()) {
                    best = Some(z);
                }
            }
        }
    }
    let z = best.ok_or(DesignError::NoResonance)?;
    let k0 = z.re;
    let quality_q = z.re / (2.0 * z.im.abs());
    let profile = field_profile(&layers, ns, k0);
    let peak = profile.iter().map(|p| p.1).fold(0.0, f64::max);
    let dx = profile.windows(2).map(|w| (w[1].0 - w[0].0, 0.5 * (w[0].1 + w[1].1))).fold(0.0, |acc, (d, v)| acc + d * v);
    let l_eff = dx / peak;
    let wavelength_nm = 2.0 * PI / k0;
    let mode_volume_v = l_eff * MODE_AREA_NM2 / (wavelength_nm / N_DIAMOND).powi(3);
    Ok(SurrogateSpectrum { quality_q, mode_volume_v, wavelength_nm, k0, gap_position: (k0 - lo) / (hi - lo), profile })
}

/// Electric energy density along the stack when driven from the input at `k0`.
fn field_profile(layers: &[(f64, f64)], ns: f64, k0: f64) -> Vec<(f64, f64)> {
    const SAMPLES: usize = 8;
    let k = C64::new(k0, 0.0);
    let total: f64 = layers.iter().map(|l| l.1).sum();
    let mut e = C64::new(1.0, 0.0);
    let mut h = C64::new(ns, 0.0);
    let mut out = Vec::with_capacity(layers.len() * SAMPLES + 1);
    let mut x_end = total;
    out.push((x_end, ns * ns * e.norm_sqr()));
    for &(n, d) in layers.iter().rev() {
        for s in 1..=SAMPLES {
            let dist = d * s as f64 / SAMPLES as f64;
            let m = layer(n, dist, k);
            let ez = m[0][0] * e + m[0][1] * h;
            out.push((x_end - dist, n * n * ez.norm_sqr()));
        }
        let m = layer(n, d, k);
        let (en, hn) = (m[0][0] * e + m[0][1] * h, m[1][0] * e + m[1][1] * h);
        e = en;
        h = hn;
        x_end -= d;
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignScore {
    pub quality_q: f64,
    pub mode_volume_v: f64,
    pub score_f: f64,
    pub waveguide_fraction: f64,
}

/// `min(Q, Q_cutoff) / (Q_cutoff V)`.
pub fn score_value(q: f64, v: f64, q_cutoff: f64) -> f64 {
    q.min(q_cutoff) / (q_cutoff * v)
}

pub fn score(d: &CavityDesign, q_cutoff: f64) -> Result<DesignScore, DesignError> {
    let s = surrogate_spectrum(&build_design(d)?)?;
    let (waveguide_fraction, _) = waveguide_coupling(d, 0, Q_INTRINSIC_DEFAULT)?;
    Ok(DesignScore { quality_q: s.quality_q, mode_volume_v: s.mode_volume_v, score_f: score_value(s.quality_q, s.mode_volume_v, q_cutoff), waveguide_fraction })
}

/// Extra mirror cells that make one side effectively closed.
const CLOSED_MIRROR: usize = 32;

/// Waveguide fraction and loaded Q after removing input mirror cells.
///
/// Loss splits into input-mirror leakage, output-mirror leakage and a fixed
/// intrinsic channel `q_intrinsic`. Each mirror's rate is found by closing the
/// other side; the closed mirror is always placed last, where the transfer
/// product stays well conditioned, which is possible because the taper is
/// symmetric.
pub fn waveguide_coupling(d: &CavityDesign, removed_input_cells: usize, q_intrinsic: f64) -> Result<(f64, f64), DesignError> {
    d.validate()?;
    let one_sided = |open: usize| {
        let probe = CavityDesign { mirror_cells_input: open, mirror_cells_output: d.mirror_cells_output + CLOSED_MIRROR, ..d.clone() };
        surrogate_spectrum(&build_design(&probe)?).map(|s| s.quality_q)
    };
    let q_in = one_sided(d.mirror_cells_input.saturating_sub(removed_input_cells))?;
    let q_out = one_sided(d.mirror_cells_output)?;
    let rate_in = 1.0 / q_in;
    let rate_out = 1.0 / q_out;
    let rate_int = if q_intrinsic.is_finite() { 1.0 / q_intrinsic } else { 0.0 };
    let total = rate_in + rate_out + rate_int;
    Ok((rate_in / total, 1.0 / total))
}

/// Box constraint for one optimisation coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_iters: 50, grad_tol: 1e-10, initial_step: 1e-2, min_step: 1e-12, fd_step: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub trace: Vec<TracePoint>,
}

/// Finite-difference gradient ascent with backtracking; only uphill steps are accepted.
///
/// Steps are taken in coordinates scaled by each bound's width. An objective
/// returning `None` rejects the trial point and halves the step.
pub fn gradient_ascent<F>(f: F, x0: &[f64], bounds: &[Bound], opts: &AscentOptions) -> Result<AscentResult, DesignError>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    if bounds.len() != x0.len() {
        return Err(invalid("bounds", "one bound per parameter"));
    }
    let clamp = |x: &mut [f64]| {
        for (v, b) in x.iter_mut().zip(bounds) {
            *v = v.clamp(b.lo, b.hi);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut fx = f(&x).ok_or(DesignError::NoResonance)?;
    let mut trace = vec![TracePoint { iteration: 0, params: x.clone(), value: fx }];
    let mut step = opts.initial_step;
    for it in 1..=opts.max_iters {
        let mut grad = vec![0.0; x.len()];
        for k in 0..x.len() {
            let width = bounds[k].hi - bounds[k].lo;
            let h = opts.fd_step * x[k].abs().max(1e-3 * width).max(1e-12);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let (Some(a), Some(b)) = (f(&xp), f(&xm)) else { continue };
            // derivative with respect to the width-scaled coordinate
            grad[k] = (a - b) / (2.0 * h) * width;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            break;
        }
        let mut accepted = false;
        while step >= opts.min_step {
            let mut xn: Vec<f64> = x.iter().zip(&grad).zip(bounds).map(|((v, g), b)| v + step * g / gnorm * (b.hi - b.lo)).collect();
            clamp(&mut xn);
            match f(&xn) {
                Some(v) if v > fx => {
                    x = xn;
                    fx = v;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
        trace.push(TracePoint { iteration: it, params: x.clone(), value: fx });
    }
    Ok(AscentResult { params: x, value: fx, trace })
}

/// Parameter order used by [`optimize`]: `[a, hx, hy, w, dmax]`.
pub fn design_params(d: &CavityDesign) -> Vec<f64> {
    let c = &d.base_cell;
    vec![c.lattice_const_a, c.hole_hx, c.hole_hy, c.waveguide_width_w, d.taper.defect_depth_dmax]
}

pub fn with_params(d: &CavityDesign, p: &[f64]) -> CavityDesign {
    let mut out = d.clone();
    out.base_cell.lattice_const_a = p[0];
    out.base_cell.hole_hx = p[1];
    out.base_cell.hole_hy = p[2];
    out.base_cell.waveguide_width_w = p[3];
    out.taper.defect_depth_dmax = p[4];
    out
}

/// Default box around a design: +-15 % on lengths, dmax in `[0.01, 0.3]`.
pub fn default_bounds(d: &CavityDesign) -> Vec<Bound> {
    let p = design_params(d);
    let mut b: Vec<Bound> = p[..4].iter().map(|v| Bound { lo: 0.85 * v, hi: 1.15 * v }).collect();
    b.push(Bound { lo: 0.01, hi: 0.3 });
    b
}

/// Gradient ascent of the score over `[a, hx, hy, w, dmax]`; etch angle and
/// cell counts stay fixed.
pub fn optimize(d0: &CavityDesign, bounds: &[Bound], q_cutoff: f64, opts: &AscentOptions) -> Result<(CavityDesign, AscentResult), DesignError> {
    d0.validate()?;
    let objective = |p: &[f64]| {
        let d = with_params(d0, p);
        let cells = build_design(&d).ok()?;
        let s = surrogate_spectrum(&cells).ok()?;
        Some(score_value(s.quality_q, s.mode_volume_v, q_cutoff))
    };
    let res = gradient_ascent(objective, &design_params(d0), bounds, opts)?;
    Ok((with_params(d0, &res.params), res))
}

/// Unit-cell grid ranked by relative stop-band width.
pub fn sweep_unit_cells(cells: &[UnitCell]) -> Vec<(UnitCell, f64)> {
    let mut out: Vec<(UnitCell, f64)> = cells
        .iter()
        .filter(|c| c.validate().is_ok())
        .map(|c| {
            let (lo, hi) = stop_band(c);
            (*c, 2.0 * (hi - lo) / (hi + lo))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("iteration,a_nm,hx_nm,hy_nm,w_nm,dmax,score\n");
    for t in trace {
        let p: Vec<String> = t.params.iter().map(|v| format!("{v:.9e}")).collect();
        s.push_str(&format!("{},{},{:.9e}\n", t.iteration, p.join(","), t.value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taper_endpoints() {
        for d in [0.0, 0.1, 0.37] {
            assert_eq!(taper_scale(0.0, d), 1.0 - d);
            assert_eq!(taper_scale(0.5, d), 1.0 - d / 2.0);
            assert_eq!(taper_scale(1.0, d), 1.0);
        }
    }

    #[test]
    fn design_shapes() {
        let mut d = CavityDesign::default();
        let cells = build_design(&d).unwrap();
        let n = cells.len();
        for i in 0..n {
            assert_eq!(cells[i], cells[n - 1 - i]);
        }
        let mid = n / 2;
        for i in mid..n - 1 {
            assert!(cells[i].lattice_const_a <= cells[i + 1].lattice_const_a);
        }
        assert!(cells[mid].lattice_const_a < cells[0].lattice_const_a);
        d.taper.defect_depth_dmax = 0.0;
        assert!(build_design(&d).unwrap().iter().all(|c| *c == d.base_cell));
    }

    #[test]
    fn energy_conservation() {
        let cells = build_design(&CavityDesign::default()).unwrap();
        let ns = cells[0].beam_index();
        for i in 0..200 {
            let k = 0.004 + 0.012 * i as f64 / 200.0;
            let (t, r) = transfer(&cells, ns, k);
            assert!((t.norm_sqr() + r.norm_sqr() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_mirror_has_no_resonance() {
        let d = CavityDesign { taper: TaperProfile { defect_depth_dmax: 0.0, ..TaperProfile::default() }, ..CavityDesign::default() };
        assert_eq!(surrogate_spectrum(&build_design(&d).unwrap()), Err(DesignError::NoResonance));
    }

    #[test]
    fn resonance_matches_transmission_peak() {
        let d = CavityDesign { mirror_cells_input: 4, mirror_cells_output: 4, ..CavityDesign::default() };
        let cells = build_design(&d).unwrap();
        let s = surrogate_spectrum(&cells).unwrap();
        let ns = cells[0].beam_index();
        let t2 = |k: f64| transfer(&cells, ns, k).0.norm_sqr();
        let fwhm = s.k0 / s.quality_q;
        let grid: Vec<f64> = (0..=2000).map(|i| s.k0 + fwhm * (i as f64 / 1000.0 - 1.0)).collect();
        let peak = grid.iter().map(|&k| t2(k)).fold(0.0, f64::max);
        assert!(peak > 0.999, "{peak}");
        let above: Vec<f64> = grid.iter().copied().filter(|&k| t2(k) >= 0.5 * peak).collect();
        let width = above.last().unwrap() - above[0];
        assert!((width / fwhm - 1.0).abs() < 0.1, "{}", width / fwhm);
    }

    #[test]
    fn q_grows_with_mirrors() {
        let mut last = 0.0;
        for m in [2, 4, 6, 8] {
            let d = CavityDesign { mirror_cells_input: m, mirror_cells_output: m, ..CavityDesign::default() };
            let q = surrogate_spectrum(&build_design(&d).unwrap()).unwrap().quality_q;
            assert!(q > last, "m={m} q={q}");
            last = q;
        }
    }

    #[test]
    fn deeper_taper_moves_into_gap() {
        let mut last = 0.0;
        for dmax in [0.04, 0.07, 0.1, 0.13] {
            let d = CavityDesign { taper: TaperProfile { defect_depth_dmax: dmax, ..TaperProfile::default() }, ..CavityDesign::default() };
            let g = surrogate_spectrum(&build_design(&d).unwrap()).unwrap().gap_position;
            assert!(g > last, "dmax={dmax} g={g}");
            last = g;
        }
    }

    #[test]
    fn score_formula() {
        assert_eq!(score_value(5e5, 1.0, 5e5), 1.0);
        assert_eq!(score_value(1e6, 1.0, 5e5), 1.0);
        assert!((score_value(1e5, 0.5, 5e5) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn coupling_trends() {
        let d = CavityDesign { mirror_cells_input: 8, mirror_cells_output: 8, ..CavityDesign::default() };
        let (f0, _) = waveguide_coupling(&d, 0, f64::INFINITY).unwrap();
        assert!((f0 - 0.5).abs() < 1e-3, "{f0}");
        let mut last = (0.0, f64::INFINITY);
        for r in 0..=4 {
            let (f, q) = waveguide_coupling(&d, r, Q_INTRINSIC_DEFAULT).unwrap();
            assert!(f > last.0 && q < last.1, "r={r} f={f} q={q}");
            last = (f, q);
        }
    }

    #[test]
    fn quadratic_ascent_converges() {
        let target = [0.3, -1.2, 2.5];
        let f = |x: &[f64]| Some(-x.iter().zip(&target).map(|(a, b)| (a - b).powi(2) * 3.0).sum::<f64>());
        let bounds = vec![Bound { lo: -5.0, hi: 5.0 }; 3];
        let opts = AscentOptions { max_iters: 500, ..AscentOptions::default() };
        let r = gradient_ascent(f, &[1.0, 1.0, 1.0], &bounds, &opts).unwrap();
        for k in 0..3 {
            assert!((r.params[k] - target[k]).abs() < 1e-4, "{:?}", r.params);
        }
        assert!(r.trace.windows(2).all(|w| w[1].value >= w[0].value));
    }

    #[test]
    fn ascent_stays_at_optimum() {
        let f = |x: &[f64]| Some(-(x[0] - 1.0).powi(2));
        let r = gradient_ascent(f, &[1.0], &[Bound { lo: 0.0, hi: 2.0 }], &AscentOptions::default()).unwrap();
        assert_eq!(r.params, vec![1.0]);
        assert_eq!(r.trace.len(), 1);
    }
}
