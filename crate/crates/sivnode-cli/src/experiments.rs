//! Named experiments. Each turns a validated config into CSV/JSON artifacts
//! and a small JSON report; all randomness derives from the config seed.

use std::f64::consts::TAU;

use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use sivnode_core::cavity::{self, CavityAtomParams, SpectrumTrace};
use sivnode_core::noise::{self, DecouplingSequence, PhononOccupancyRate};
use sivnode_core::photonics;
use sivnode_core::protocol::{self, Basis};
use sivnode_core::register::{self, CalibrationTargets};
use sivnode_core::spin;
use sivnode_core::tomography::{self, BellTarget, MleOptions, ReadoutFidelities};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
#[error("{experiment}: {message}")]
pub struct RunError {
    pub experiment: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub artifacts: Vec<Artifact>,
    pub report: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Spin,
    Cavity,
    Noise,
    Heating,
    Register,
    Protocol,
    Tomography,
    Design,
    Sweep,
    Grid,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Spin => "spin",
            Block::Cavity => "cavity",
            Block::Noise => "noise",
            Block::Heating => "noise.heating",
            Block::Register => "register",
            Block::Protocol => "protocol",
            Block::Tomography => "tomography",
            Block::Design => "design",
            Block::Sweep => "design.sweep",
            Block::Grid => "grid",
        }
    }

    fn present(self, c: &ExperimentConfig) -> bool {
        match self {
            Block::Spin => c.spin.is_some(),
            Block::Cavity => c.cavity.is_some(),
            Block::Noise => c.noise.is_some(),
            Block::Heating => c.noise.as_ref().is_some_and(|n| n.heating.is_some()),
            Block::Register => c.register.is_some(),
            Block::Protocol => c.protocol.is_some(),
            Block::Tomography => c.tomography.is_some(),
            Block::Design => c.design.is_some(),
            Block::Sweep => c.design.as_ref().is_some_and(|d| d.sweep.is_some()),
            Block::Grid => c.grid.is_some(),
        }
    }
}

type Runner = fn(&ExperimentConfig, u64) -> Result<Outputs, String>;

pub struct ExperimentSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub blocks: &'static [Block],
    pub grid_axis: Option<&'static str>,
    run: Runner,
}

impl ExperimentSpec {
    pub fn fixture_path(&self) -> String {
        format!("{}/fixtures/{}.json", env!("CARGO_MANIFEST_DIR"), self.name)
    }

    /// Checks required blocks and the grid axis; block contents are validated separately.
    pub fn check(&self, c: &ExperimentConfig) -> Result<(), ConfigError> {
        for b in self.blocks {
            if !b.present(c) {
                return Err(ConfigError::MissingBlock { block: b.name(), experiment: Some(self.name.to_string()) });
            }
        }
        if let (Some(axis), Some(g)) = (self.grid_axis, &c.grid) {
            if g.axis != axis {
                return Err(ConfigError::Invalid { field: "grid.axis".into(), reason: format!("expected `{axis}` for {}, got `{}`", self.name, g.axis) });
            }
        }
        Ok(())
    }

    pub fn run(&self, c: &ExperimentConfig, seed: u64) -> Result<Outputs, RunError> {
        (self.run)(c, seed).map_err(|message| RunError { experiment: self.name, message })
    }
}

/// Stable catalog order.
pub fn catalog() -> &'static [ExperimentSpec] {
    use Block::*;
    const CATALOG: &[ExperimentSpec] = &[
        ExperimentSpec { name: "bath-fit", description: "simulate multi-N coherence curves and recover two Lorentzian baths", blocks: &[Noise], grid_axis: None, run: bath_fit },
        ExperimentSpec { name: "bell-monte-carlo", description: "time-bin spin-photon Bell protocol Monte Carlo with raw and corrected fidelity", blocks: &[Protocol], grid_axis: None, run: bell_monte_carlo },
        ExperimentSpec { name: "cnot-tomography", description: "maximum-likelihood electron-nuclear CNOT transfer matrix from sampled runs", blocks: &[Tomography], grid_axis: None, run: cnot_tomography },
        ExperimentSpec { name: "cooperativity", description: "cooperativity, Purcell linewidth and feature width of a cavity-atom system", blocks: &[Cavity], grid_axis: None, run: cooperativity },
        ExperimentSpec { name: "design-optimization", description: "gradient ascent of the nanobeam score over cell geometry and taper depth", blocks: &[Design], grid_axis: None, run: design_optimization },
        ExperimentSpec { name: "heating", description: "peak temperature and heating-limited coherence against pulse spacing", blocks: &[Noise, Heating, Grid], grid_axis: Some("tau_us"), run: heating },
        ExperimentSpec { name: "hyperfine-calibration", description: "fit hyperfine parameters to the gate-table targets", blocks: &[Register], grid_axis: None, run: hyperfine_calibration },
        ExperimentSpec { name: "nuclear-gate-scan", description: "decoupling resonance scan: echo signal and conditional rotations against tau", blocks: &[Register, Grid], grid_axis: Some("tau_us"), run: nuclear_gate_scan },
        ExperimentSpec { name: "reflection-spectrum", description: "spin-resolved reflection spectra, contrast and optimal probe frequency", blocks: &[Cavity, Grid], grid_axis: Some("frequency_ghz"), run: reflection_spectrum },
        ExperimentSpec { name: "spectrum-fit", description: "two-stage fit of synthetic far-detuned and resonant spectra", blocks: &[Cavity, Grid], grid_axis: Some("frequency_ghz"), run: spectrum_fit },
        ExperimentSpec { name: "strain-sensitivity", description: "closed-form and numeric qubit/optical shifts under strain fluctuation", blocks: &[Spin], grid_axis: None, run: strain_sensitivity },
        ExperimentSpec { name: "t2-scaling", description: "T2 against pulse count, power-law exponent and bath-removal ratio", blocks: &[Noise], grid_axis: None, run: t2_scaling },
        ExperimentSpec { name: "unit-cell-sweep", description: "stop-band width over a hole-size grid", blocks: &[Design, Sweep], grid_axis: None, run: unit_cell_sweep },
        ExperimentSpec { name: "waveguide-coupling", description: "waveguide fraction and loaded Q against removed input mirror cells", blocks: &[Design], grid_axis: None, run: waveguide_coupling },
        ExperimentSpec { name: "zeeman-levels", description: "ground/excited levels and transitions against field magnitude", blocks: &[Spin, Grid], grid_axis: Some("field_tesla"), run: zeeman_levels },
    ];
    CATALOG
}

pub fn find(name: &str) -> Option<&'static ExperimentSpec> {
    catalog().iter().find(|e| e.name == name)
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact { name: name.to_string(), contents }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// Blocks are present and valid once the runner calls an experiment.
macro_rules! block {
    ($c:expr, $f:ident) => {
        $c.$f.as_ref().expect(concat!(stringify!($f), " block checked before run"))
    };
}

fn cooperativity(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let p = block!(c, cavity).params().map_err(err)?;
    let coop = cavity::cooperativity(&p);
    let rows = vec![
        vec!["cooperativity".into(), num(coop)],
        vec!["purcell_linewidth_ghz".into(), num(cavity::purcell_linewidth(&p) / TAU)],
        vec!["feature_fwhm_ghz".into(), num(cavity::feature_fwhm(&p) / TAU)],
        vec!["reflectance_at_atom".into(), num(cavity::reflectance(p.omega_atom, &p))],
    ];
    Ok(Outputs {
        artifacts: vec![artifact("cooperativity.csv", csv("quantity,value", rows))],
        report: json!({ "cooperativity": coop, "deterministic": cavity::is_deterministic(&p) }),
    })
}

fn spin_pair(c: &ExperimentConfig) -> Result<(CavityAtomParams, CavityAtomParams), String> {
    let b = block!(c, cavity);
    let p = b.params().map_err(err)?;
    Ok(cavity::spin_pair(&p, b.atom_detuning_ghz, b.spin_splitting_ghz))
}

fn reflection_spectrum(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let (up, down) = spin_pair(c)?;
    let grid = block!(c, grid).values();
    let rows: Vec<Vec<String>> = grid
        .par_iter()
        .map(|&f| {
            let (a, b) = (cavity::reflectance_ghz(f, &up), cavity::reflectance_ghz(f, &down));
            vec![num(f), num(a), num(b), num((a - b).abs())]
        })
        .collect();
    let probe = cavity::optimal_probe(&up, &down, &grid).map_err(err)?;
    Ok(Outputs {
        artifacts: vec![artifact("spectrum.csv", csv("frequency_ghz,reflectance_up,reflectance_down,contrast", rows))],
        report: json!({ "f_q_ghz": probe.f_q_ghz, "peak_contrast": probe.peak_contrast, "degenerate": probe.degenerate }),
    })
}

fn spectrum_fit(c: &ExperimentConfig, seed: u64) -> Result<Outputs, String> {
    let b = block!(c, cavity);
    let on = b.params().map_err(err)?;
    let far = on.with_atom_ghz(b.atom_detuning_ghz + 60.0);
    let grid = block!(c, grid).values();
    let t_far = SpectrumTrace::simulate(&grid, &far).with_noise(b.fit_noise_relative, seed);
    let t_on = SpectrumTrace::simulate(&grid, &on).with_noise(b.fit_noise_relative, seed.wrapping_add(1));
    let guess = |p: &CavityAtomParams| CavityAtomParams { kappa_in: 1.1 * p.kappa_in, kappa_total: 1.1 * p.kappa_total, g_coupling: p.g_coupling / 1.1, gamma_atom: 1.1 * p.gamma_atom, ..*p };
    let fit = cavity::fit_two_stage(&t_far, &t_on, &guess(&far), &guess(&on)).map_err(err)?;
    let r = fit.resonant.params;
    let names = ["kappa_in_ghz", "kappa_total_ghz", "cavity_ghz", "atom_ghz", "g_ghz", "gamma_ghz"];
    let truth = [on.kappa_in, on.kappa_total, on.omega_cavity, on.omega_atom, on.g_coupling, on.gamma_atom];
    let got = [r.kappa_in, r.kappa_total, r.omega_cavity, r.omega_atom, r.g_coupling, r.gamma_atom];
    let rows = (0..6).map(|k| vec![names[k].to_string(), num(truth[k] / TAU), num(got[k] / TAU)]);
    let mut traces = String::from("frequency_ghz,reflectance_far,reflectance_resonant\n");
    for i in 0..grid.len() {
        traces.push_str(&format!("{},{},{}\n", num(grid[i]), num(t_far.reflectance[i]), num(t_on.reflectance[i])));
    }
    Ok(Outputs {
        artifacts: vec![artifact("fit.csv", csv("parameter,true,fitted", rows)), artifact("traces.csv", traces)],
        report: json!({ "g_ghz": r.g_coupling / TAU, "residual_far": fit.far_detuned.residual, "residual_resonant": fit.resonant.residual, "seed": seed }),
    })
}

fn strain_sensitivity(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, spin);
    let (g, e, eps) = b.manifolds().map_err(err)?;
    let bz = b.field(b.field_tesla).axial_component();
    let (g0, e0) = (spin::SivParameters::ground(), spin::SivParameters::excited());
    let xi = b.strain_fluctuation_relative;
    let (mw, opt) = spin::strain_sensitivity(&g0, &e0, eps, xi, bz);
    let (mw_n, opt_n) = spin::strain_sensitivity_numeric(&g0, &e0, eps, xi, bz);
    let rows = vec![
        vec!["df_mw_ghz".into(), num(mw), num(mw_n)],
        vec!["df_optical_ghz".into(), num(opt), num(opt_n)],
    ];
    Ok(Outputs {
        artifacts: vec![artifact("sensitivity.csv", csv("quantity,closed_form,numeric", rows))],
        report: json!({ "eps_zx": eps, "ground_splitting_ghz": spin::ground_splitting(&g), "excited_splitting_ghz": spin::ground_splitting(&e), "b_axial_tesla": bz }),
    })
}

fn zeeman_levels(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, spin);
    let (g, e, _) = b.manifolds().map_err(err)?;
    let rows: Vec<Vec<String>> = block!(c, grid)
        .values()
        .par_iter()
        .map(|&bt| {
            let f = b.field(bt);
            let lg = spin::diagonalize(&g, &f);
            let le = spin::diagonalize(&e, &f);
            let t = spin::transitions(&g, &e, &f);
            let mut r = vec![num(bt)];
            r.extend(lg.energies.iter().chain(le.energies.iter()).map(|&v| num(v)));
            r.extend([num(t.f_qubit), num(t.f_up_up), num(t.f_down_down)]);
            r
        })
        .collect();
    Ok(Outputs {
        artifacts: vec![artifact("levels.csv", csv("field_tesla,ground_1_ghz,ground_2_ghz,ground_3_ghz,ground_4_ghz,excited_1_ghz,excited_2_ghz,excited_3_ghz,excited_4_ghz,qubit_ghz,optical_up_ghz,optical_down_ghz", rows))],
        report: json!({ "polar_angle_deg": b.polar_angle_deg }),
    })
}

fn t2_scaling(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, noise);
    let baths = b.bath_set();
    let reduced = b.removed_bath_index.map(|k| baths.without(k));
    let rows: Vec<(usize, f64, Option<f64>)> = b
        .pulse_counts
        .par_iter()
        .map(|&n| {
            let full = noise::t2_exact(n, &baths).map_err(err)?;
            let red = reduced.as_ref().map(|r| noise::t2_exact(n, r).map_err(err)).transpose()?;
            Ok((n, full, red))
        })
        .collect::<Result<_, String>>()?;
    let ns: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let t2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let exponent = noise::power_law_exponent(&ns, &t2);
    let ratio = rows[0].2.map(|r| r / rows[0].1);
    let body = rows.iter().map(|(n, f, r)| vec![n.to_string(), num(*f), r.map(num).unwrap_or_default()]);
    Ok(Outputs {
        artifacts: vec![artifact("t2.csv", csv("n_pulses,t2_us,t2_reduced_us", body))],
        report: json!({ "exponent": exponent, "removal_ratio_at_smallest_n": ratio }),
    })
}

fn bath_fit(c: &ExperimentConfig, seed: u64) -> Result<Outputs, String> {
    let b = block!(c, noise);
    let baths = b.bath_set();
    let curves = noise::simulate_curves(&baths, &b.pulse_counts, b.curve_points, b.curve_noise, seed).map_err(err)?;
    let fit = noise::fit_baths(&curves, seed.wrapping_add(1)).map_err(err)?;
    let mut truth = baths.baths.clone();
    truth.sort_by(|x, y| x.correlation_tau_us.total_cmp(&y.correlation_tau_us));
    let rows = fit.baths.baths.iter().enumerate().map(|(i, f)| {
        let t = truth.get(i);
        vec![i.to_string(), t.map(|t| num(t.strength_khz)).unwrap_or_default(), t.map(|t| num(t.correlation_tau_us)).unwrap_or_default(), num(f.strength_khz), num(f.correlation_tau_us)]
    });
    let mut curve_csv = String::from("n_pulses,time_us,signal\n");
    for cv in &curves {
        for (t, y) in cv.total_times_us.iter().zip(&cv.signal) {
            curve_csv.push_str(&format!("{},{},{}\n", cv.n_pulses, num(*t), num(*y)));
        }
    }
    Ok(Outputs {
        artifacts: vec![artifact("baths.csv", csv("bath,true_strength_khz,true_tau_us,fitted_strength_khz,fitted_tau_us", rows)), artifact("curves.csv", curve_csv)],
        report: json!({ "cost": fit.cost, "condition_number": fit.condition_number, "starts": fit.starts, "seed": seed }),
    })
}

fn heating(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, noise);
    let h = b.heating.as_ref().expect("heating block checked");
    let hp = b.heating_params().expect("heating block checked");
    let n = b.pulse_counts[0];
    let baths = b.bath_set();
    let taus = block!(c, grid).values();
    let tmax: Vec<f64> = taus
        .par_iter()
        .map(|&tau| {
            let seq = DecouplingSequence::cpmg(n, tau);
            noise::t_max(&noise::cpmg_pulse_times(seq.total_time(), n), &hp, seq.total_time())
        })
        .collect();
    let hottest = (0..taus.len()).max_by(|&a, &b| tmax[a].total_cmp(&tmax[b])).expect("grid has >= 2 points");
    let rate = PhononOccupancyRate::calibrated(h.delta_gs_ghz, &hp, &DecouplingSequence::cpmg(n, taus[hottest]), h.collapse_factor);
    let rows: Vec<Vec<String>> = taus
        .par_iter()
        .zip(&tmax)
        .map(|(&tau, &t)| {
            let seq = DecouplingSequence::cpmg(n, tau);
            let bare = noise::coherence_exact(seq.total_time(), n, &baths);
            let hot = noise::coherence_with_heating(&seq, &hp, &rate, &baths);
            vec![num(tau), num(t), num(noise::heating_factor(&seq, &hp, &rate)), num(hot), num(bare)]
        })
        .collect();
    Ok(Outputs {
        artifacts: vec![artifact("heating.csv", csv("tau_us,t_max_mk,heating_factor,coherence,coherence_without_heating", rows))],
        report: json!({ "n_pulses": n, "hottest_tau_us": taus[hottest], "peak_temperature_mk": tmax[hottest], "rate_scale_per_us": rate.k_per_us }),
    })
}

fn hyperfine_calibration(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let keep = block!(c, register).calibration_keep;
    let cal = register::calibrate_hyperfine_search(&CalibrationTargets::default(), keep).map_err(err)?;
    let labels = ["entangling_phi_rad", "unconditional_axis_cross", "init_angle_over_pi", "init_axis_x", "init_axis_y", "init_axis_z"];
    let rows = cal.residuals.iter().enumerate().map(|(i, r)| vec![labels.get(i).copied().unwrap_or("residual").to_string(), num(*r)]);
    Ok(Outputs {
        artifacts: vec![artifact("residuals.csv", csv("target,residual", rows))],
        report: json!({ "params": cal.params, "rms": cal.rms }),
    })
}

fn nuclear_gate_scan(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, register);
    let hf = b.params().map_err(err)?;
    let taus = block!(c, grid).values();
    let rows: Vec<Vec<String>> = taus
        .par_iter()
        .map(|&tau| {
            let g = register::dd_gate(&hf, b.n_pulses, tau);
            vec![num(tau), num(register::echo_signal(&hf, b.n_pulses, tau)), num(g.angle_up), num(g.angle_down), num(g.entangling_phi)]
        })
        .collect();
    let minima = register::resonance_minima(&register::find_resonances(&hf, b.n_pulses, &taus));
    Ok(Outputs {
        artifacts: vec![artifact("scan.csv", csv("tau_us,echo_signal,angle_up_rad,angle_down_rad,entangling_phi_rad", rows))],
        report: json!({ "n_pulses": b.n_pulses, "minima": minima }),
    })
}

fn bell_monte_carlo(c: &ExperimentConfig, seed: u64) -> Result<Outputs, String> {
    let b = block!(c, protocol);
    let readout = b.readout.model();
    let hists = protocol::run_experiment(&b.qubit(), &b.carving(), &readout, &b.run_config(), b.shots_per_basis, &[Basis::Z, Basis::X], seed).map_err(err)?;
    let (f_up, f_down) = readout.fidelities();
    let fid = ReadoutFidelities::electron(f_up, f_down);
    let analysis = tomography::analyze_bell(&hists[0], &hists[1], &fid, BellTarget::Plus).map_err(err)?;
    let stat = |corrected: bool| {
        move |h: &[protocol::Histogram]| {
            tomography::analyze_bell(&h[0], &h[1], &fid, BellTarget::Plus).map(|a| if corrected { a.corrected_fidelity } else { a.raw_fidelity }).unwrap_or(f64::NAN)
        }
    };
    let (_, se_raw) = protocol::bootstrap(&hists, b.bootstrap_resamples, seed.wrapping_add(1), stat(false)).map_err(err)?;
    let (_, se_cor) = protocol::bootstrap(&hists, b.bootstrap_resamples, seed.wrapping_add(2), stat(true)).map_err(err)?;
    let mut body = String::from("basis,photon_outcome,spin_outcome,counts\n");
    for h in &hists {
        body.push_str(&h.csv_rows());
    }
    Ok(Outputs {
        artifacts: vec![artifact("histograms.csv", body)],
        report: json!({
            "seed": seed,
            "shots_per_basis": b.shots_per_basis,
            "heralds": hists.iter().map(|h| h.shots).collect::<Vec<_>>(),
            "readout_f_up": f_up,
            "readout_f_down": f_down,
            "raw_fidelity": analysis.raw_fidelity,
            "raw_fidelity_se": se_raw,
            "corrected_fidelity": analysis.corrected_fidelity,
            "corrected_fidelity_se": se_cor,
            "raw_concurrence_bound": analysis.raw_concurrence_bound,
            "corrected_concurrence_bound": analysis.corrected_concurrence_bound,
        }),
    })
}

fn cnot_tomography(c: &ExperimentConfig, seed: u64) -> Result<Outputs, String> {
    let b = block!(c, tomography);
    let r = tomography::electron_nuclear_transfer(&b.fidelities()).map_err(err)?;
    let t = tomography::cnot_permutation() * (1.0 - b.gate_depolarization) + Matrix4::from_element(0.25 * b.gate_depolarization);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let control = tomography::sample_runs(&r, b.shots_per_run, &mut rng);
    let gate = tomography::sample_runs(&(r * t), b.shots_per_run, &mut rng);
    let opts = MleOptions { starts: b.mle_starts, bootstrap: b.bootstrap_resamples, seed: seed.wrapping_add(1), ..MleOptions::default() };
    let est = tomography::cnot_mle(&control, &gate, &opts).map_err(err)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for out in 0..4 {
        for inp in 0..4 {
            let v = est.transfer[out][inp];
            worst = worst.max((v - t[(out, inp)]).abs());
            let (lo, hi) = est.intervals.map(|iv| iv[out][inp]).map_or((String::new(), String::new()), |(a, b)| (num(a), num(b)));
            rows.push(vec![out.to_string(), inp.to_string(), num(t[(out, inp)]), num(v), lo, hi]);
        }
    }
    Ok(Outputs {
        artifacts: vec![artifact("transfer.csv", csv("output,input,true,estimate,ci_low,ci_high", rows))],
        report: json!({ "seed": seed, "max_abs_error": worst, "log_likelihood": est.log_likelihood }),
    })
}

fn design_optimization(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, design);
    let d0 = b.design().map_err(err)?;
    let opts = photonics::AscentOptions { max_iters: b.max_iterations, ..photonics::AscentOptions::default() };
    let (d1, res) = photonics::optimize(&d0, &photonics::default_bounds(&d0), b.q_cutoff, &opts).map_err(err)?;
    let s1 = photonics::score(&d1, b.q_cutoff).map_err(err)?;
    Ok(Outputs {
        artifacts: vec![
            artifact("trace.csv", photonics::trace_csv(&res.trace)),
            artifact("design.json", serde_json::to_string_pretty(&d1).map_err(err)? + "\n"),
        ],
        report: json!({ "initial_score": res.trace[0].value, "final_score": res.value, "quality_q": s1.quality_q, "mode_volume": s1.mode_volume_v, "iterations": res.trace.len() - 1 }),
    })
}

fn unit_cell_sweep(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, design);
    let base = b.design().map_err(err)?.base_cell;
    let sweep = b.sweep.as_ref().expect("sweep block checked");
    let cells: Vec<photonics::UnitCell> = sweep.hole_hx_nm.iter().flat_map(|&hx| sweep.hole_hy_nm.iter().map(move |&hy| photonics::UnitCell { hole_hx: hx, hole_hy: hy, ..base })).collect();
    let ranked = photonics::sweep_unit_cells(&cells);
    let rows = ranked.iter().map(|(u, w)| vec![num(u.lattice_const_a), num(u.hole_hx), num(u.hole_hy), num(u.waveguide_width_w), num(u.etch_angle_theta), num(*w)]);
    let best = ranked.first().map(|r| json!({ "hole_hx_nm": r.0.hole_hx, "hole_hy_nm": r.0.hole_hy, "relative_stop_band": r.1 }));
    Ok(Outputs {
        artifacts: vec![artifact("sweep.csv", csv("lattice_const_a_nm,hole_hx_nm,hole_hy_nm,waveguide_width_w_nm,etch_angle_theta_deg,relative_stop_band", rows))],
        report: json!({ "evaluated": ranked.len(), "skipped": cells.len() - ranked.len(), "best": best }),
    })
}

fn waveguide_coupling(c: &ExperimentConfig, _seed: u64) -> Result<Outputs, String> {
    let b = block!(c, design);
    let d = b.design().map_err(err)?;
    let rows: Vec<(usize, f64, f64)> = (0..=b.removed_input_cells_max)
        .into_par_iter()
        .map(|k| photonics::waveguide_coupling(&d, k, b.q_intrinsic).map(|(f, q)| (k, f, q)).map_err(err))
        .collect::<Result<_, String>>()?;
    let best = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(Outputs {
        artifacts: vec![artifact("coupling.csv", csv("removed_input_cells,waveguide_fraction,loaded_q", rows.iter().map(|(k, f, q)| vec![k.to_string(), num(*f), num(*q)])))],
        report: json!({ "max_waveguide_fraction": best }),
    })
}
