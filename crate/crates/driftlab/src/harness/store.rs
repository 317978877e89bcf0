//! Content-addressed artifact store. Every pipeline stage writes into a
//! directory keyed by the SHA-256 of its canonical config JSON; a COMPLETE
//! marker written last makes interrupted stages distinguishable from
//! finished ones, so reruns resume instead of recomputing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::hex_sha256;
use crate::error::{Error, Result};

pub const HOME_ENV: &str = "DLAB_HOME";
const COMPLETE: &str = "COMPLETE";
const CONFIG: &str = "config.json";

/// Canonical form: serde_json over deterministic struct field order. Maps
/// inside configs must be BTreeMaps for this to stay stable.
pub fn canonical_json<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(serde_json::to_string(cfg)?)
}

pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(hex_sha256(canonical_json(cfg)?.as_bytes()))
}

#[derive(Clone, Debug)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ArtifactStore { root })
    }

    /// DLAB_HOME if set, otherwise ./dlab_store under the working directory.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(HOME_ENV) {
            Some(p) => ArtifactStore::open(PathBuf::from(p)),
            None => ArtifactStore::open("dlab_store"),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir<T: Serialize>(&self, kind: &str, cfg: &T) -> Result<PathBuf> {
        let hash = config_hash(cfg)?;
        Ok(self.root.join(kind).join(&hash[..16]))
    }

    pub fn is_complete(dir: &Path) -> bool {
        dir.join(COMPLETE).exists()
    }

    /// Runs `build` in the stage directory unless it already completed.
    /// A dir without the marker is a dead partial run and is rebuilt from
    /// scratch. Returns the stage directory either way.
    pub fn stage<T, F>(&self, kind: &str, cfg: &T, build: F) -> Result<PathBuf>
    where
        T: Serialize,
        F: FnOnce(&Path) -> Result<()>,
    {
        let dir = self.stage_dir(kind, cfg)?;
        if Self::is_complete(&dir) {
            log::debug!("stage {kind} at {} already complete", dir.display());
            return Ok(dir);
        }
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG), canonical_json(cfg)?)?;
        build(&dir)?;
        fs::write(dir.join(COMPLETE), config_hash(cfg)?)?;
        Ok(dir)
    }

    /// The config a completed stage was built from, for provenance audits.
    pub fn stage_config<T: DeserializeOwned>(dir: &Path) -> Result<T> {
        let text = fs::read_to_string(dir.join(CONFIG)).map_err(|e| {
            Error::Dependency(format!("stage {} has no config: {e}", dir.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn require_complete(dir: &Path, what: &str) -> Result<()> {
        if Self::is_complete(dir) {
            Ok(())
        } else {
            Err(Error::Dependency(format!(
                "required stage {what} is missing at {}",
                dir.display()
            )))
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Dependency(format!("{} unreadable: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
