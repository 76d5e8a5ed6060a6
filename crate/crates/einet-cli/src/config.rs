//! Optional key=value config files and the per-run configuration echo.
//!
//! Flags override file values; every subcommand writes the fully resolved
//! configuration to `<out>/run.json` so a run is reproducible from its
//! echo alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use einet::{Error, Result};

/// `key=value` lines, `#` comments, blank lines ignored.
pub struct Overlay {
    values: BTreeMap<String, String>,
}

impl Overlay {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    detail: format!("expected key=value, got '{line}'"),
                })?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Overlay { values })
    }

    /// Flag wins, then file, then default.
    pub fn resolve<T: FromStr + Clone>(&self, key: &str, flag: &Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        match self.values.get(key) {
            Some(text) => text
                .parse::<T>()
                .map_err(|_| Error::Config(format!("config key '{key}' has unparsable value '{text}'"))),
            None => Ok(default),
        }
    }

    pub fn resolve_opt<T: FromStr + Clone>(&self, key: &str, flag: &Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag.clone());
        }
        match self.values.get(key) {
            Some(text) => text
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key '{key}' has unparsable value '{text}'"))),
            None => Ok(None),
        }
    }
}

/// Writes the resolved configuration echo under the run's output directory.
pub fn write_run_echo<T: serde::Serialize>(out: &Path, resolved: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(resolved).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(out.join("run.json"), json + "\n")?;
    Ok(())
}
