//! Output directories: every command leaves its resolved config, the
//! content hashes of what it read, and a metadata file holding the only
//! run-dependent values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use routescore::finetune::sha256_hex;

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const INPUTS_FILE: &str = "inputs.json";
pub const METADATA_FILE: &str = "metadata.json";

pub struct OutDir {
    root: PathBuf,
    inputs: BTreeMap<String, String>,
    started: Instant,
    started_unix_ms: u128,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Read an input file and remember its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(self, command: &str, config: &RunConfig) -> Result<()> {
        self.write(CONFIG_FILE, config.to_toml())?;
        self.write_json(INPUTS_FILE, &self.inputs)?;
        let meta = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_ms": self.started_unix_ms as u64,
            "elapsed_ms": self.started.elapsed().as_millis() as u64,
        });
        self.write_json(METADATA_FILE, &meta)
    }
}
