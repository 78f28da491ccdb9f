use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Flat `key = value` configuration. `#` starts a comment; later keys win.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_pair(line).map_err(|_| invalid(format!("config line {}: expected key=value, got '{line}'", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::from(e),
        })?;
        Self::parse(&text)
    }

    /// Apply one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| invalid(format!("expected key=value, got '{pair}'")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(invalid(format!("empty key in '{pair}'")));
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key).ok_or_else(|| invalid(format!("missing required key '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_str(key)
            .map(|v| v.parse::<T>().map_err(|_| invalid(format!("bad value for '{key}': '{v}'"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list; empty items are dropped.
    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get_str(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = KvConfig::parse("# run\nn_frames = 200\nscenarios=perimeter, spheres # two\n\nseed=3\nseed=4").unwrap();
        assert_eq!(c.get::<usize>("n_frames").unwrap(), Some(200));
        assert_eq!(c.get_or::<u64>("seed", 0).unwrap(), 4);
        assert_eq!(c.get_list("scenarios").unwrap(), vec!["perimeter", "spheres"]);
        c.set_pair("seed=9").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(9));
        assert!(c.get::<u64>("scenarios").is_err());
        assert!(KvConfig::parse("just words").is_err());
        assert!(c.require_str("nope").is_err());
        assert!(matches!(KvConfig::load("/definitely/not/here.cfg"), Err(Error::NotFound(_))));
    }
}
