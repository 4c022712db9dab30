//! Run manifests: what a command read and wrote, with content digests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::FormatError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Digest of the canonical JSON of the effective configuration.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| FormatError::io(path, e))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(|e| FormatError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of a file under its base name. Missing files are skipped.
pub fn digest(path: &Path) -> Result<Option<FileDigest>, FormatError> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(FileDigest {
        name: path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        sha256: sha256_file(path)?,
    }))
}

pub fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>, FormatError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(digest(p)?);
    }
    Ok(out)
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("stresswatch".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("manifest_format".to_string(), "1".to_string()),
    ])
}
