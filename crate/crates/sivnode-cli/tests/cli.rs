use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sivnode_cli::{catalog, run, runner::validate_bytes, ConfigError, Overrides, RunManifest};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sivnode"))
}

fn read_artifacts(dir: &Path, m: &RunManifest) -> Vec<(String, Vec<u8>)> {
    m.artifacts.iter().map(|a| (a.path.clone(), fs::read(dir.join(&a.path)).unwrap())).collect()
}

#[test]
fn catalog_matches_fixture_directory() {
    let files: BTreeSet<String> = fs::read_dir(fixtures_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    let names: BTreeSet<String> = catalog().iter().map(|e| e.name.to_string()).collect();
    assert_eq!(files, names);
    for e in catalog() {
        assert!(Path::new(&e.fixture_path()).exists(), "{}", e.name);
    }
}

#[test]
fn every_fixture_validates() {
    for e in catalog() {
        let bytes = fs::read(e.fixture_path()).unwrap();
        let v = validate_bytes(&bytes, None).unwrap_or_else(|err| panic!("{}: {err}", e.name));
        assert_eq!(v.spec.name, e.name);
    }
}

#[test]
fn every_fixture_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for e in catalog() {
        let path = PathBuf::from(e.fixture_path());
        let (a, b) = (tmp.path().join(format!("{}-a", e.name)), tmp.path().join(format!("{}-b", e.name)));
        let ma = run(&path, &Overrides { out: Some(a.clone()), workers: Some(1), ..Default::default() }).unwrap();
        let mb = run(&path, &Overrides { out: Some(b.clone()), workers: Some(4), ..Default::default() }).unwrap();
        assert_eq!(ma.artifacts, mb.artifacts, "{}", e.name);
        assert_eq!(ma.config_hash, mb.config_hash);
        assert_eq!(read_artifacts(&a, &ma), read_artifacts(&b, &mb), "{}", e.name);
        assert!(ma.artifacts.iter().any(|r| r.path.ends_with(".csv")), "{} writes CSV", e.name);
        let on_disk: RunManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(on_disk, ma);
    }
}

#[test]
fn seed_override_changes_stochastic_output() {
    let tmp = tempfile::tempdir().unwrap();
    let path = fixtures_dir().join("cnot-tomography.json");
    let m1 = run(&path, &Overrides { out: Some(tmp.path().join("a")), ..Default::default() }).unwrap();
    let m2 = run(&path, &Overrides { seed: Some(99), out: Some(tmp.path().join("b")), ..Default::default() }).unwrap();
    assert_eq!(m2.seed, 99);
    assert_ne!(m1.artifacts, m2.artifacts);
}

#[test]
fn incomplete_configs_name_the_missing_block() {
    let cases: [(&str, &str); 4] = [
        ("{}", "experiment"),
        (r#"{"experiment":"cooperativity"}"#, "seed"),
        (r#"{"experiment":"cooperativity","seed":1}"#, "cavity"),
        (r#"{"experiment":"heating","seed":1,"noise":{"baths":[{"strength_khz":5,"correlation_tau_us":1}],"pulse_counts":[32]}}"#, "noise.heating"),
    ];
    for (cfg, block) in cases {
        match validate_bytes(cfg.as_bytes(), None) {
            Err(ConfigError::MissingBlock { block: b, .. }) => assert_eq!(b, block, "{cfg}"),
            other => panic!("{cfg}: {:?}", other.err()),
        }
    }
}

#[test]
fn invalid_values_report_the_field() {
    let cfg = r#"{"experiment":"t2-scaling","seed":1,"noise":{"baths":[{"strength_khz":5,"correlation_tau_us":1}],"pulse_counts":[2,3]}}"#;
    let e = validate_bytes(cfg.as_bytes(), None).err().unwrap();
    assert!(e.to_string().contains("noise.pulse_counts[1]"), "{e}");
    let unknown = r#"{"experiment":"cooperativity","seed":1,"cavity":{"g_ghz":1,"kappa_total_ghz":2,"kappa_in_ghz":1,"gamma_ghz":0.1,"typo":1}}"#;
    assert!(matches!(validate_bytes(unknown.as_bytes(), None), Err(ConfigError::Parse(_))));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = fixtures_dir().join("cooperativity.json");
    let st = bin().args(["validate", "--config"]).arg(&good).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{}").unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing block `experiment`"));

    let outdir = tmp.path().join("run");
    let st = bin().args(["run", "--workers", "2", "--out"]).arg(&outdir).arg("--config").arg(&good).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(outdir.join("manifest.json").exists());
    assert!(outdir.join("cooperativity.csv").exists());

    let list = bin().args(["list", "--json"]).output().unwrap();
    assert_eq!(list.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&list.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), catalog().len());
}

#[test]
fn output_location_blocked_by_file_fails_with_run_code() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let st = bin().args(["run", "--config"]).arg(fixtures_dir().join("cooperativity.json")).arg("--out").arg(blocker.join("sub")).status().unwrap();
    assert_eq!(st.code(), Some(3));
}
