use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Multinomial household sample from the equilibrium frequencies.
    #[default]
    Aggregate,
    /// Expected counts, no sampling noise.
    Exact,
    /// Finite market of individuals with Gumbel tastes.
    Micro,
}

/// Run configuration. Paths are relative to the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surplus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    /// Equilibrium solver: `ipfp` or `gradient`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    /// `gradient` (alias `moment`), `coordinate-hybrid`, `mle` or `max-score`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Households added to every category before identification or fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SimMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_households: Option<u64>,
}

impl RunConfig {
    pub fn empty() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            output_dir: None,
            counts: None,
            surplus: None,
            basis: None,
            lambda: None,
            margins: None,
            estimates: None,
            tol: None,
            max_iter: None,
            step_size: None,
            algorithm: None,
            estimator: None,
            seed: None,
            pseudo_count: None,
            mode: None,
            n_households: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, v) in [("tol", self.tol), ("step_size", self.step_size)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{name} must be positive")));
                }
            }
        }
        if self.max_iter == Some(0) {
            return Err(CliError::Config("max_iter must be at least 1".into()));
        }
        if let Some(c) = self.pseudo_count {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(CliError::Config("pseudo_count must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Resolves config-relative paths.
#[derive(Debug, Clone)]
pub struct Paths {
    base: PathBuf,
}

impl Paths {
    pub fn new(config_path: Option<&Path>) -> Self {
        let base = config_path
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Paths { base }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn required(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config(format!("`{key}` is required for this command")))
    }
}
