//! `manifest.json`: format versions, configuration digest and a SHA-256
//! for every file in an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::CHECKPOINT_VERSION;
use super::config::{hex, RunConfig};
use super::logs::{DESIGNS_FORMAT, EPISODES_FORMAT};
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub formats: BTreeMap<String, String>,
    pub code_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Relative path (with `/` separators) to SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config: Option<&RunConfig>, seeds: Vec<u64>) -> Self {
        let formats = [
            ("episodes", EPISODES_FORMAT.to_string()),
            ("designs", DESIGNS_FORMAT.to_string()),
            ("checkpoint", format!("checkpoint/{CHECKPOINT_VERSION}")),
            ("manifest", "manifest/1".to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            formats,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config.map(RunConfig::digest),
            seeds,
            files: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    /// Hashes every file under `dir` (except manifests and temp files) and
    /// writes the manifest there.
    pub fn write(mut self, dir: &Path) -> Result<Self> {
        self.files.clear();
        hash_tree(dir, dir, &mut self.files)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)?)?;
        Ok(self)
    }

    /// Rehashes `dir`, keeping the existing manifest's header fields when
    /// there is one.
    pub fn refresh(dir: &Path) -> Result<Self> {
        let m = Self::read(dir).unwrap_or_else(|_| Self::new(None, Vec::new()));
        m.write(dir)
    }
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            hash_tree(root, &path, out)?;
            continue;
        }
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name == MANIFEST_FILE || name.ends_with(".tmp") {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root");
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.insert(key, hex(&Sha256::digest(fs::read(&path)?)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_nested_files_and_skips_itself() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("seed_0")).unwrap();
        fs::write(dir.path().join("seed_0/a.txt"), "abc").unwrap();
        fs::write(dir.path().join("b.tmp"), "x").unwrap();
        let cfg = RunConfig::new("gainline");
        let m = Manifest::new(Some(&cfg), vec![0]).write(dir.path()).unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(
            m.files["seed_0/a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m.config_sha256, Some(cfg.digest()));

        fs::write(dir.path().join("c.csv"), "1").unwrap();
        let again = Manifest::refresh(dir.path()).unwrap();
        assert_eq!(again.files.len(), 2);
        assert_eq!(again.seeds, vec![0]);
        assert_eq!(Manifest::read(dir.path()).unwrap(), again);
    }
}
