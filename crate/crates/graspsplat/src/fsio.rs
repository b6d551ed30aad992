//! File access with path-carrying errors, and staged output directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tempfile::{NamedTempFile, TempDir};

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serializes");
    out.push(b'\n');
    out
}

/// Writes through a temporary file in the target directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Output files collected in a hidden staging directory and moved under
/// `root` only by [`OutputDir::commit`]. Dropping an uncommitted stage
/// removes everything written so far.
pub struct OutputDir {
    root: PathBuf,
    stage: TempDir,
    artifacts: Vec<String>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let stage = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(root)
            .map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), stage, artifacts: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stages `bytes` at `name`, a `/`-separated path relative to the root.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name.is_empty() || name.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
            return Err(Error::Invalid(format!("bad artifact name `{name}`")));
        }
        if self.artifacts.iter().any(|a| a == name) {
            return Err(Error::Invalid(format!("artifact `{name}` written twice")));
        }
        let path = self.stage.path().join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &json_bytes(value))
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    /// Moves every staged file into place and writes `artifacts.json`
    /// listing them. Returns the final paths.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.artifacts.len() + 1);
        for name in &self.artifacts {
            let from = self.stage.path().join(name);
            let to = self.root.join(name);
            if let Some(dir) = to.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            out.push(to);
        }
        let listing = ArtifactList { artifacts: self.artifacts.clone() };
        let path = self.root.join(ARTIFACT_LIST);
        write_atomic(&path, &json_bytes(&listing))?;
        out.push(path);
        Ok(out)
    }
}

pub const ARTIFACT_LIST: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ArtifactList {
    pub artifacts: Vec<String>,
}
