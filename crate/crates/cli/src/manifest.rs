use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.json";
/// Wall-clock measurements; written next to the artifacts but never hashed.
pub const TIMING_FILE: &str = "timing.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record of one run: the seed, the hash of the resolved config
/// and a checksum for every file written, keyed by `/`-separated path
/// relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, String>,
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Output directory of a run: created up front, with the resolved config
/// echoed into it.
pub struct RunDir {
    pub dir: PathBuf,
    command: String,
    seed: u64,
    config_sha256: String,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let json = cfg.to_json()?;
        fs::write(dir.join(RESOLVED_CONFIG), &json)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed: cfg.seed,
            config_sha256: sha256_hex(json.as_bytes()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    /// Hashes every file under the directory except the manifest itself and
    /// the timing file, then writes the manifest.
    pub fn finish(self) -> Result<RunManifest> {
        let mut files = Vec::new();
        collect_files(&self.dir, &mut files)?;
        let mut artifacts = BTreeMap::new();
        for f in files {
            let rel = relative(&self.dir, &f);
            if rel == RUN_MANIFEST || rel == TIMING_FILE {
                continue;
            }
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            artifacts.insert(rel, sha256_hex(&bytes));
        }
        let manifest = RunManifest {
            command: self.command,
            seed: self.seed,
            config_sha256: self.config_sha256,
            artifacts,
        };
        let path = self.dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}
