//! Flat `key = value` config files.
//!
//! Shared by the dataset manifest and the training configs. Lines are
//! `key = value`, blank lines and `#` comments are ignored. Consumers
//! pull typed values out and then call [`KvFile::ensure_consumed`] so
//! unknown keys surface as config errors instead of silent typos.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 'key = value', got '{raw}'"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "empty key".to_string(),
                });
            }
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(KvFile {
            entries,
            consumed: Default::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.consumed.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(format!("key '{key}': cannot parse value '{raw}'"))),
        }
    }

    /// Errors when the file contains keys nobody asked for.
    pub fn ensure_consumed(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_skips_comments() {
        let kv = KvFile::parse("# header\nseed = 7\n\nname = run one\n").unwrap();
        assert_eq!(kv.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.get_str("name"), Some("run one".to_string()));
        kv.ensure_consumed().unwrap();
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KvFile::parse("seed = 1\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let kv = KvFile::parse("seed = 1\ntypo_key = 2\n").unwrap();
        let _ = kv.get::<u64>("seed").unwrap();
        let err = kv.ensure_consumed().unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let kv = KvFile::parse("seed = notanumber\n").unwrap();
        let err = kv.get::<u64>("seed").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }
}
