//! `key = value` run configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RunConfig {
    /// One `key = value` per line; blank lines and `#` comments are ignored.
    /// A repeated key keeps its last value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: no + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config {
                    line: no + 1,
                    reason: "empty key".into(),
                });
            }
            entries.insert(k.to_string(), (no + 1, v.trim().to_string()));
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Sets `key`, as a command-line flag overriding the file would.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Config {
                line: *line,
                reason: format!("cannot parse `{v}` for `{key}`"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// A `lo, hi` pair.
    pub fn pair_or(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(default);
        };
        let bad = || Error::Config {
            line: *line,
            reason: format!("expected `lo, hi` for `{key}`, got `{v}`"),
        };
        let (a, b) = v.split_once(',').ok_or_else(bad)?;
        Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_reports_lines() {
        let cfg = RunConfig::parse("# run\nepochs = 30\n\nlr=0.05 # fast\nrange = 0.7, 1.3\n").unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), Some(30));
        assert_eq!(cfg.get_or("lr", 0.0).unwrap(), 0.05);
        assert_eq!(cfg.get_or("batch", 8usize).unwrap(), 8);
        assert_eq!(cfg.pair_or("range", (1.0, 1.0)).unwrap(), (0.7, 1.3));
        let err = cfg.get::<usize>("lr").unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
        assert!(matches!(RunConfig::parse("a = 1\noops\n"), Err(Error::Config { line: 2, .. })));
    }
}
