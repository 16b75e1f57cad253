//! Minimal `key=value` text format used for config files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may not repeat.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}"))),
        }
    }

    /// Comma-separated list value; an empty value yields an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {s:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Errors if any key is not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KvMap::parse("# c\nm = 10\n\nsignal_features=0, 2\n").unwrap();
        assert_eq!(kv.get::<usize>("m").unwrap(), Some(10));
        assert_eq!(kv.get_list::<usize>("signal_features").unwrap(), Some(vec![0, 2]));
        assert_eq!(kv.get::<usize>("n").unwrap(), None);
    }

    #[test]
    fn rejects_garbage() {
        assert!(KvMap::parse("novalue").is_err());
        assert!(KvMap::parse("a=1\na=2").is_err());
        let kv = KvMap::parse("a=x").unwrap();
        assert!(kv.get::<f64>("a").is_err());
        assert!(kv.reject_unknown(&["b"]).is_err());
    }
}
