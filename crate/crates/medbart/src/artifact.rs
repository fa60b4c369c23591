//! Versioned on-disk artifacts: fitted models, design metadata, and run
//! manifests. Everything is JSON with an explicit `format`/`version`
//! header; fits can be reloaded to recompute effects without refitting.

use std::fs;
use std::path::Path;

use medbart_core::bart::BartPosterior;
use medbart_core::glm::OutcomeFit;
use medbart_core::mediator_linear::LinearMediatorFit;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const OUTCOME_FIT_FORMAT: &str = "medbart.outcome_fit";
pub const LINEAR_MEDIATOR_FORMAT: &str = "medbart.mediator_linear";
pub const BART_POSTERIOR_FORMAT: &str = "medbart.mediator_bart";
pub const DESIGN_FORMAT: &str = "medbart.design_spec";
pub const MANIFEST_FORMAT: &str = "medbart.manifest";
pub const ARTIFACT_VERSION: u32 = 1;

/// FNV-1a 64-bit content hash, hex encoded. Used for artifact staleness
/// checks, not security.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}

pub fn hash_file(path: &Path) -> AppResult<String> {
    if !path.exists() {
        return Err(AppError::io_not_found(path));
    }
    Ok(fnv1a_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format: String,
    pub version: u32,
    /// Hash of the dataset the contents were fitted on.
    pub dataset_hash: String,
    pub payload: T,
}

pub fn save_artifact<T: Serialize>(
    path: &Path,
    format: &str,
    dataset_hash: &str,
    payload: &T,
) -> AppResult<()> {
    let artifact = Artifact {
        format: format.to_string(),
        version: ARTIFACT_VERSION,
        dataset_hash: dataset_hash.to_string(),
        payload,
    };
    fs::write(path, serde_json::to_vec(&artifact)?)?;
    Ok(())
}

pub fn load_artifact<T: DeserializeOwned>(path: &Path, format: &str) -> AppResult<Artifact<T>> {
    if !path.exists() {
        return Err(AppError::io_not_found(path));
    }
    let artifact: Artifact<T> = serde_json::from_slice(&fs::read(path)?)?;
    if artifact.format != format {
        return Err(AppError::new(
            "io.artifact",
            2,
            format!(
                "{} holds `{}`, expected `{format}`",
                path.display(),
                artifact.format
            ),
        ));
    }
    if artifact.version != ARTIFACT_VERSION {
        return Err(AppError::new(
            "io.artifact",
            2,
            format!("unsupported artifact version {}", artifact.version),
        ));
    }
    Ok(artifact)
}

pub fn save_outcome_fit(path: &Path, hash: &str, fit: &OutcomeFit) -> AppResult<()> {
    save_artifact(path, OUTCOME_FIT_FORMAT, hash, fit)
}

pub fn load_outcome_fit(path: &Path) -> AppResult<Artifact<OutcomeFit>> {
    load_artifact(path, OUTCOME_FIT_FORMAT)
}

pub fn save_linear_mediator(path: &Path, hash: &str, fit: &LinearMediatorFit) -> AppResult<()> {
    save_artifact(path, LINEAR_MEDIATOR_FORMAT, hash, fit)
}

pub fn load_linear_mediator(path: &Path) -> AppResult<Artifact<LinearMediatorFit>> {
    load_artifact(path, LINEAR_MEDIATOR_FORMAT)
}

pub fn save_bart_posterior(path: &Path, hash: &str, post: &BartPosterior) -> AppResult<()> {
    save_artifact(path, BART_POSTERIOR_FORMAT, hash, post)
}

pub fn load_bart_posterior(path: &Path) -> AppResult<Artifact<BartPosterior>> {
    load_artifact(path, BART_POSTERIOR_FORMAT)
}

/// Run manifest: everything needed to re-derive an output byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seeds: Vec<(String, u64)>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, dataset_hash: &str) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash.into(),
            dataset_hash: dataset_hash.into(),
            seeds: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Manifest {
        self.seeds.push((name.into(), value));
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Manifest {
        self.notes.push(note.into());
        self
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
