use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use udf_core::Error;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// What a run did, with enough detail to repeat it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// The subcommand's arguments as parsed.
    pub args: serde_json::Value,
    /// Merged training configuration (`fit` only), in config-file syntax.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub inputs: Vec<InputHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: &impl Serialize, threads: usize) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: serde_json::to_value(args).expect("arguments serialize"),
            config: None,
            inputs: Vec::new(),
            seed: None,
            threads,
            outputs: Vec::new(),
            status: "ok".into(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), Error> {
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<RunManifest, Error> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("manifest {}: {e}", path.display()),
        })
    }

    /// Fail if any recorded input no longer hashes the same.
    pub fn check_inputs(&self) -> Result<(), Error> {
        for input in &self.inputs {
            let now = hash_file(&input.path)?;
            if now != input.sha256 {
                return Err(Error::InvalidArgument(format!(
                    "input {} changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Create the run directory, refusing one that already holds a manifest.
pub fn prepare_run_dir(dir: &Path) -> Result<(), Error> {
    if dir.join(FILE_NAME).exists() {
        return Err(Error::InvalidArgument(format!(
            "{} already holds a run; pick a fresh output directory",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}
