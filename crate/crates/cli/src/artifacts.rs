//! Output layout, file digests and per-directory manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::Cell;
use crate::config::Campaign;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self, cell: &Cell) -> PathBuf {
        self.root.join("models").join(cell.label())
    }

    pub fn campaign(&self, c: Campaign) -> PathBuf {
        self.root.join(c.name())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub kind: String,
    /// Free-form facts about the directory (counts, seeds, hyperparameters).
    #[serde(default)]
    pub info: BTreeMap<String, serde_json::Value>,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config_hash: &str, kind: &str) -> Self {
        Self { config_hash: config_hash.to_string(), kind: kind.to_string(), info: BTreeMap::new(), files: BTreeMap::new() }
    }

    pub fn info(&mut self, key: &str, value: impl Serialize) {
        self.info.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    /// Record the digest of `dir/name`.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.files.insert(name.to_string(), sha256_file(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(&dir.join(MANIFEST), text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    /// Read and check a manifest against the expected hash and the files on disk.
    pub fn verify(dir: &Path, config_hash: &str) -> Result<Self, CliError> {
        let m = Self::read(dir)?;
        if m.config_hash != config_hash {
            return Err(CliError::Config(format!(
                "{} was written under config hash {}, current config is {config_hash}",
                dir.display(),
                m.config_hash
            )));
        }
        for (name, digest) in &m.files {
            if sha256_file(&dir.join(name))? != *digest {
                return Err(CliError::Other(format!("{} changed since it was written", dir.join(name).display())));
            }
        }
        Ok(m)
    }
}

/// Open a campaign directory for writing under `config_hash`. Outputs of
/// another hash are removed first, so a directory never mixes hashes.
pub fn open_output_dir(dir: &Path, config_hash: &str, kind: &str) -> Result<Manifest, CliError> {
    match Manifest::read(dir) {
        Ok(m) if m.config_hash == config_hash => return Ok(m),
        Ok(_) => fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?,
        Err(_) => {}
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(Manifest::new(config_hash, kind))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(path.display().to_string()),
        _ => CliError::Other(format!("{}: {e}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_hash_and_content_changes() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("a.csv"), b"x,y\n1,2\n").unwrap();
        let mut m = Manifest::new("abc", "test");
        m.add(dir.path(), "a.csv").unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::verify(dir.path(), "abc").unwrap(), m);
        assert!(matches!(Manifest::verify(dir.path(), "def"), Err(CliError::Config(_))));
        write_file(&dir.path().join("a.csv"), b"x,y\n1,3\n").unwrap();
        assert!(Manifest::verify(dir.path(), "abc").is_err());
        assert!(matches!(Manifest::read(&dir.path().join("nope")), Err(CliError::Missing(_))));
    }

    #[test]
    fn reopening_under_new_hash_clears_the_directory() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("bench");
        let mut m = open_output_dir(&dir, "h1", "benchmark").unwrap();
        write_file(&dir.join("old.csv"), b"1\n").unwrap();
        m.add(&dir, "old.csv").unwrap();
        m.write(&dir).unwrap();
        assert_eq!(open_output_dir(&dir, "h1", "benchmark").unwrap().files.len(), 1);
        let fresh = open_output_dir(&dir, "h2", "benchmark").unwrap();
        assert!(fresh.files.is_empty());
        assert!(!dir.join("old.csv").exists());
    }
}
