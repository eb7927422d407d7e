//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Values may be quoted. The kernel
//! may be given inline as `kernel = {kind = rbf, gamma = auto, degree = 2,
//! coef0 = 1}`, which is the same as setting `kernel`, `gamma`, `degree` and
//! `coef0` separately. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use patchsift_core::{Error, Result};

pub const KEYS: &[&str] = &[
    "anchor_mode",
    "anchors",
    "band_mode",
    "bits",
    "cap",
    "center_kernel",
    "coef0",
    "degree",
    "downsample",
    "eig_tol",
    "epsilon",
    "gamma",
    "kernel",
    "normalize",
    "prefix_bits",
    "seed",
    "subset",
    "target",
    "threads",
    "variance_on",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = FileConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "kernel" && value.starts_with('{') {
                let inner = value
                    .strip_prefix('{')
                    .and_then(|v| v.strip_suffix('}'))
                    .ok_or_else(|| format!("line {}: unterminated kernel block", n + 1))?;
                for field in inner.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                    let (k, v) = field
                        .split_once('=')
                        .or_else(|| field.split_once(':'))
                        .ok_or_else(|| format!("line {}: bad kernel field {field:?}", n + 1))?;
                    let k = match k.trim() {
                        "kind" => "kernel",
                        k @ ("gamma" | "degree" | "coef0") => k,
                        other => return Err(format!("line {}: unknown kernel field {other:?}", n + 1)),
                    };
                    cfg.insert(k, v.trim(), n + 1)?;
                }
            } else {
                cfg.insert(key, value, n + 1)?;
            }
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> std::result::Result<(), String> {
        let key = key.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("line {line}: unknown key {key:?}"));
        }
        let value = value.trim_matches('"').to_string();
        if self.values.insert(key.clone(), value).is_some() {
            return Err(format!("line {line}: {key:?} set twice"));
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key {key}: invalid value {v:?}")))
            })
            .transpose()
    }

    /// The flag if given, else the file value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
