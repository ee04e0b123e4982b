use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// One stage run: hashes of what it read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_ms: u64,
    pub finished_at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn load(work: &Path) -> Result<Self, PipelineError> {
        let path = work.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Runtime(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, work: &Path) -> Result<(), PipelineError> {
        let tmp = work.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(self).expect("manifest serializes"))?;
        std::fs::rename(&tmp, work.join(MANIFEST_FILE))?;
        Ok(())
    }
}

/// Hashes every listed file, keyed by its path relative to `root` when it
/// lies inside it.
pub fn hash_files(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for f in files {
        let key = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        out.insert(key, hash_file(f)?);
    }
    Ok(out)
}

/// Exclusive hold on a work directory, released on drop.
#[derive(Debug)]
pub struct WorkLock {
    path: PathBuf,
}

impl WorkLock {
    pub fn acquire(work: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(work)?;
        let path = work.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(PipelineError::Locked { path, holder: holder.trim().to_string() })
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(hash_file(&p).unwrap(), sha256_hex(b"abc"));
        assert_eq!(hash_files(dir.path(), &[p]).unwrap().keys().next().unwrap(), "x");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = WorkLock::acquire(dir.path()).unwrap();
        assert!(matches!(WorkLock::acquire(dir.path()), Err(PipelineError::Locked { .. })));
        drop(a);
        WorkLock::acquire(dir.path()).unwrap();
    }
}
