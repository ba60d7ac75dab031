//! Config-file handling and run-metadata assembly.
//!
//! A config file holds `key = value` lines (`#` comments allowed) using the
//! long flag names without the leading dashes. Command-line flags win over
//! file values. Every command embeds its fully resolved configuration into
//! each artifact it writes, so outputs are self-describing.

use std::collections::BTreeMap;
use std::path::Path;

use patchdesc::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parsed `key = value` file.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Arg(format!("config file {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Arg(format!(
                        "config file {}:{}: expected `key = value`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig { values })
    }

    /// Flag value wins; otherwise the file value is parsed; otherwise the
    /// default.
    pub fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::Arg(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
            None => Ok(default),
        }
    }

    /// Booleans: a bare CLI switch can only turn a setting on, so the file
    /// value applies whenever the switch is absent.
    pub fn resolve_flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<bool>().map_err(|_| {
                Error::Arg(format!("config key `{key}`: cannot parse `{raw}` as bool"))
            }),
            None => Ok(false),
        }
    }
}

/// Deterministic `key = value` metadata block embedded into artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunMeta {
    entries: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(command: &str) -> Self {
        let mut m = RunMeta::default();
        m.push("tool", format!("patchdesc {TOOL_VERSION}"));
        m.push("command", command.to_string());
        m
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Reads a `key = value` metadata block (e.g. from a model container).
pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}
