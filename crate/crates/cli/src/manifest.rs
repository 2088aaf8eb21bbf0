use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use cpkit_core::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Provenance record written after every successful command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    /// SHA-256 of the effective argument list (after config injection).
    pub config_digest: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

pub struct Recorder {
    manifest: RunManifest,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, effective_args: &[String]) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                toolkit_version: env!("CARGO_PKG_VERSION").to_owned(),
                config_digest: sha256_hex(effective_args.join("\0").as_bytes()),
                seed: None,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_time_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.manifest.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.manifest.outputs.insert(path.display().to_string(), d);
        Ok(())
    }

    /// Every regular file under `dir` except run manifests, recursively, in sorted order.
    pub fn output_dir(&mut self, dir: &Path) -> Result<()> {
        let mut stack = vec![dir.to_path_buf()];
        let mut files = Vec::new();
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let p = entry.map_err(|e| Error::io(&d, e))?.path();
                let is_manifest = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with("run-manifest.json"));
                if p.is_dir() {
                    stack.push(p);
                } else if !is_manifest {
                    files.push(p);
                }
            }
        }
        files.sort();
        for f in files {
            self.output(&f)?;
        }
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        let body = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))? + "\n";
        write_atomic(path, body.as_bytes())?;
        Ok(path.to_path_buf())
    }
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
