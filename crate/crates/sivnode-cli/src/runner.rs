//! Config ingestion, validation, execution and artifact/manifest writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::experiments::{self, ExperimentSpec, RunError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Validation(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Run(_) | CliError::Io { .. } => 3,
        }
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub workers: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// A fully checked config: parsed, blocks valid, experiment known, seed fixed.
pub struct Validated {
    pub config: ExperimentConfig,
    pub spec: &'static ExperimentSpec,
    pub seed: u64,
}

pub fn validate_bytes(bytes: &[u8], seed_override: Option<u64>) -> Result<Validated, ConfigError> {
    let config = ExperimentConfig::from_bytes(bytes)?;
    let name = config.experiment.clone().ok_or(ConfigError::MissingBlock { block: "experiment", experiment: None })?;
    let spec = experiments::find(&name).ok_or(ConfigError::UnknownExperiment(name))?;
    let seed = seed_override.or(config.seed).ok_or(ConfigError::MissingBlock { block: "seed", experiment: Some(spec.name.to_string()) })?;
    spec.check(&config)?;
    config.validate_blocks()?;
    Ok(Validated { config, spec, seed })
}

pub fn validate_file(path: &Path) -> Result<Validated, CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(validate_bytes(&bytes, None)?)
}

/// Runs one config file; artifacts are removed again if writing fails part-way.
pub fn run(path: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let v = validate_bytes(&bytes, ov.seed)?;
    let workers = ov.workers.unwrap_or(1).max(1);
    let out = ov.out.clone().or_else(|| v.config.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out").join(v.spec.name));
    let started = now_ms();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| RunError { experiment: v.spec.name, message: e.to_string() })?;
    let outputs = pool.install(|| v.spec.run(&v.config, v.seed))?;

    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut records = Vec::new();
    let report = serde_json::to_string_pretty(&outputs.report).expect("report serializes") + "\n";
    let files = outputs.artifacts.iter().map(|a| (a.name.as_str(), a.contents.as_str())).chain(std::iter::once(("report.json", report.as_str())));
    for (name, contents) in files {
        let p = out.join(name);
        if let Err(e) = fs::write(&p, contents) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            let _ = fs::remove_file(&p);
            return Err(io(&p, e));
        }
        written.push(p);
        records.push(ArtifactRecord { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()), bytes: contents.len() as u64 });
    }
    let manifest = RunManifest {
        experiment: v.spec.name.to_string(),
        config_hash: sha256_hex(&bytes),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: v.seed,
        workers,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        artifacts: records,
    };
    let mp = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(&mp, text) {
        for w in &written {
            let _ = fs::remove_file(w);
        }
        return Err(io(&mp, e));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub required_blocks: Vec<&'static str>,
    pub fixture: String,
}

pub fn list_experiments() -> Vec<CatalogEntry> {
    experiments::catalog()
        .iter()
        .map(|e| CatalogEntry { name: e.name, description: e.description, required_blocks: e.blocks.iter().map(|b| b.name()).collect(), fixture: e.fixture_path() })
        .collect()
}
