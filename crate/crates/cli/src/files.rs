//! Output files: JSON writing and checksummed inventories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssnl_core::Result;

use crate::config::hex;

/// Version of every manifest layout written by this crate.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Every regular file under `dir` except `skip`, sorted by path.
pub fn inventory(dir: &Path, skip: &[&str]) -> Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    let mut out = Vec::new();
    for p in paths {
        let rel = p.strip_prefix(dir).expect("walked under dir");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if skip.contains(&rel.as_str()) {
            continue;
        }
        out.push(FileEntry {
            sha256: sha256_file(&p)?,
            bytes: fs::metadata(&p)?.len(),
            path: rel,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
