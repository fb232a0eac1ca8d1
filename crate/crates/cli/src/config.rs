//! Line-oriented `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are skipped.
//! Duplicate keys and keys outside the consumer's documented set are
//! rejected outright so a typo cannot silently fall back to a default.

use slicevol_core::{Error, Result};
use std::path::Path;

pub struct Config {
    entries: Vec<(String, String)>,
    /// Where it was read from, for error messages.
    source: String,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Config> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::validation(format!(
                    "{source}:{}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::validation(format!(
                    "{source}:{}: empty key",
                    lineno + 1
                )));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::validation(format!(
                    "{source}:{}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            entries.push((key, value));
        }
        Ok(Config {
            entries,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    pub fn empty() -> Config {
        Config {
            entries: Vec::new(),
            source: "<defaults>".to_string(),
        }
    }

    /// Fails on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::validation(format!(
                    "{}: unknown key {k:?} (known keys: {})",
                    self.source,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| self.bad(key, s, "a nonnegative integer")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| self.bad(key, s, "a nonnegative integer")),
        }
    }

    pub fn u16_or(&self, key: &str, default: u16) -> Result<u16> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| self.bad(key, s, "a small nonnegative integer")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| self.bad(key, s, "a number")),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse()
                        .map_err(|_| self.bad(key, s, "comma-separated numbers"))
                })
                .collect(),
        }
    }

    fn bad(&self, key: &str, value: &str, want: &str) -> Error {
        Error::validation(format!(
            "{}: key {key:?}: expected {want}, got {value:?}",
            self.source
        ))
    }
}
