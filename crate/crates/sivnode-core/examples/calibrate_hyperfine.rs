//! Regenerates `fixtures/hyperfine_calibration.json` from a grid search plus
//! least-squares refinement against the gate-timing targets.

use sivnode_core::register::{calibrate_hyperfine_search, CalibrationTargets};

fn main() {
    let targets = CalibrationTargets::default();
    let cal = calibrate_hyperfine_search(&targets, 8).expect("calibration");
    let out = serde_json::json!({
        "targets": targets,
        "params": cal.params,
        "residuals": cal.residuals,
        "rms": cal.rms,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
}
