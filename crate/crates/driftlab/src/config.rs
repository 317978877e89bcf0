//! Plain-text experiment configs.
//!
//! Format: `[section]` headers, `key = value` pairs, `#` or `;` comments,
//! blank lines ignored. Values are strings until a typed getter interprets
//! them; duplicate keys within a section are an error so a typo cannot
//! silently shadow an earlier setting.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse_str(text: &str) -> Result<ConfigFile> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        sections.entry(String::new()).or_default();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = lineno + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {n}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::config(format!("line {n}: empty section name")));
                }
                if name.contains('[') || name.contains(']') {
                    return Err(Error::config(format!("line {n}: bad section name {name:?}")));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {n}: expected key = value")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {n}: empty key")));
            }
            let section = sections.get_mut(&current).expect("current section exists");
            if section.contains_key(key) {
                return Err(Error::config(format!(
                    "line {n}: duplicate key {key:?} in section {current:?}"
                )));
            }
            section.insert(key.to_string(), value.to_string());
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn get_str(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).unwrap_or(default).to_string()
    }

    fn typed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::config(format!(
                    "[{section}] {key} = {raw:?} is not a valid {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.typed(section, key, default)
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        self.typed(section, key, default)
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.typed(section, key, default)
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(Error::config(format!(
                "[{section}] {key} = {raw:?} is not a boolean"
            ))),
        }
    }
}
