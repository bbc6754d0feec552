//! Run manifests: the resolved configuration plus everything needed to replay
//! a command, written before the command does its work.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputFile {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: C,
    /// Command-specific settings outside the config (data dir, schedulers, ...).
    #[serde(default)]
    pub extra: serde_json::Map<String, Value>,
    #[serde(default)]
    pub inputs: Vec<InputFile>,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, seed: u64, config: C) -> Self {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            extra: Default::default(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// A `--config` file: either a bare config object or a manifest from an
/// earlier run of the same command.
pub struct ConfigFile<C> {
    pub config: C,
    pub manifest: Option<Manifest<Value>>,
}

impl<C> ConfigFile<C> {
    pub fn extra(&self, key: &str) -> Option<&Value> {
        self.manifest.as_ref().and_then(|m| m.extra.get(key))
    }
}

pub fn load_config<C: DeserializeOwned>(path: &Path, command: &str) -> Result<ConfigFile<C>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    if is_manifest {
        let manifest: Manifest<Value> =
            serde_json::from_value(value).with_context(|| format!("reading manifest {}", path.display()))?;
        if manifest.command != command {
            bail!(
                "{} is a `{}` manifest, not a `{command}` one",
                path.display(),
                manifest.command
            );
        }
        let config = serde_json::from_value(manifest.config.clone())
            .with_context(|| format!("config section of {}", path.display()))?;
        Ok(ConfigFile {
            config,
            manifest: Some(manifest),
        })
    } else {
        let config = serde_json::from_value(value).with_context(|| format!("config {}", path.display()))?;
        Ok(ConfigFile { config, manifest: None })
    }
}

/// Warns when a replayed input no longer matches the manifest's checksum.
pub fn check_replayed_inputs(recorded: &[InputFile], current: &[InputFile]) {
    for now in current {
        let name = now.path.file_name();
        if let Some(then) = recorded.iter().find(|r| r.path.file_name() == name) {
            if then.sha256 != now.sha256 {
                eprintln!(
                    "warning: {} differs from the manifest's copy (sha256 {} vs {})",
                    now.path.display(),
                    now.sha256,
                    then.sha256
                );
            }
        }
    }
}

/// Refuses to write any output over one of the command's inputs.
pub fn guard_outputs(outputs: &[PathBuf], inputs: &[PathBuf]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    let inputs: Vec<PathBuf> = inputs.iter().filter_map(|p| canon(p)).collect();
    for out in outputs {
        if let Some(c) = canon(out) {
            if inputs.contains(&c) {
                bail!("refusing to overwrite input file {}", out.display());
            }
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
