//! Flat key-value experiment configuration.
//!
//! ```text
//! # comment
//! observable = linear
//! [model]
//! potential = gaussian(1.0)
//! grid = 2001
//! ```
//!
//! Section headers prefix the keys that follow them, so the example defines
//! `model.potential` and `model.grid`. Dotted keys may also be written out in
//! full. Later assignments replace earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim();
                if !valid_key(name) {
                    return Err(CliError::Config(format!(
                        "line {}: bad section name `{name}`",
                        lineno + 1
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(CliError::Config(format!("line {}: bad key `{key}`", lineno + 1)));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            values.insert(full, value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        let k = k.trim();
        if !valid_key(k) {
            return Err(CliError::Config(format!("bad key `{k}` in override")));
        }
        self.set(k, v.trim());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| CliError::Config(format!("{key} = `{v}`: {e}"))),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v: f64 = self.get(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!("{key} must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize, CliError> {
        let v: usize = self.get(key, default)?;
        if v == 0 {
            return Err(CliError::Config(format!("{key} must be at least 1")));
        }
        Ok(v)
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.get(key, false)
    }

    /// Comma-separated list; `None` when the key is absent.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| {
            split_top_level(v)
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// Comma-separated numbers. `pi` is accepted as a factor, as in `pi/8`
    /// or `3pi/16`.
    pub fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|s| parse_number(s).ok_or_else(|| CliError::Config(format!("{key}: bad number `{s}`"))))
                    .collect()
            })
            .transpose()
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
    }

    /// Canonical `key = value` listing in key order.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical listing, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
}

/// Splits on commas outside parentheses, so `mixed(1, -1), linear` has two items.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim().parse::<f64>().ok()?),
        None => (s, 1.0),
    };
    let factor = if num == "pi" {
        1.0
    } else {
        num.strip_suffix("pi")?
            .trim()
            .trim_end_matches('*')
            .parse::<f64>()
            .ok()?
    };
    Some(factor * std::f64::consts::PI / den)
}
