use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker written in manifests and label-map files for dropped raw classes.
pub const EXCLUDED: &str = "EXCLUDED";

/// Raw movement name to training class (`None` = excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    entries: Vec<(String, Option<usize>)>,
    class_names: Vec<String>,
}

impl Default for LabelMap {
    /// The twelve raw movements of the reference dataset merged into six
    /// classes. Left/right variants share a class; step 7 is dropped.
    fn default() -> Self {
        let entries = [
            ("Step1", Some(0)),
            ("Step2Left", Some(1)),
            ("Step2Right", Some(1)),
            ("Step3", Some(2)),
            ("Step4Left", Some(3)),
            ("Step4Right", Some(3)),
            ("Step5Left", Some(4)),
            ("Step5Right", Some(4)),
            ("Step6Left", Some(5)),
            ("Step6Right", Some(5)),
            ("Step7Left", None),
            ("Step7Right", None),
        ];
        LabelMap {
            entries: entries.iter().map(|&(n, c)| (n.to_string(), c)).collect(),
            class_names: (1..=6).map(|i| format!("Step{i}")).collect(),
        }
    }
}

impl LabelMap {
    /// Builds a map, checking that the mapped classes are exactly `0..K`
    /// with `K >= 2` and that raw names are unique.
    pub fn new(entries: Vec<(String, Option<usize>)>, class_names: Option<Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, _) in &entries {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Dataset(format!("invalid raw class name `{name}`")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Dataset(format!("raw class `{name}` listed twice")));
            }
        }
        let image: BTreeSet<usize> = entries.iter().filter_map(|e| e.1).collect();
        let k = image.len();
        if k < 2 || image.iter().copied().ne(0..k) {
            return Err(Error::Dataset(format!(
                "mapped classes must be 0..K with K >= 2, got {image:?}"
            )));
        }
        let class_names = match class_names {
            Some(names) if names.len() != k => {
                return Err(Error::Dataset(format!("{} class names for {k} classes", names.len())))
            }
            Some(names) => names,
            None => (0..k).map(|i| format!("class{i}")).collect(),
        };
        Ok(LabelMap { entries, class_names })
    }

    /// Parses the label-map file format:
    ///
    /// ```text
    /// # comment
    /// Step1       0
    /// Step7Left   EXCLUDED
    /// @name 0 Palms
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut names: Vec<(usize, String)> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Config { line: no + 1, reason };
            if let Some(rest) = line.strip_prefix("@name") {
                let rest = rest.trim_start();
                let (idx, name) = rest.split_once(char::is_whitespace).ok_or_else(|| bad("expected `@name <index> <name>`".into()))?;
                let idx = idx.parse().map_err(|_| bad(format!("bad class index `{idx}`")))?;
                names.push((idx, name.trim().to_string()));
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(raw), Some(mapped), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `<raw class> <index|EXCLUDED>`".into()));
            };
            let mapped = if mapped == EXCLUDED {
                None
            } else {
                Some(mapped.parse().map_err(|_| bad(format!("bad class index `{mapped}`")))?)
            };
            entries.push((raw.to_string(), mapped));
        }
        let class_names = if names.is_empty() {
            None
        } else {
            names.sort();
            if names.iter().map(|n| n.0).ne(0..names.len()) {
                return Err(Error::Dataset("@name lines must cover every class exactly once".into()));
            }
            Some(names.into_iter().map(|n| n.1).collect())
        };
        LabelMap::new(entries, class_names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelMap::parse(&text)
    }

    /// Inverse of [`LabelMap::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, mapped) in &self.entries {
            match mapped {
                Some(c) => out.push_str(&format!("{name}\t{c}\n")),
                None => out.push_str(&format!("{name}\t{EXCLUDED}\n")),
            }
        }
        for (i, name) in self.class_names.iter().enumerate() {
            out.push_str(&format!("@name {i} {name}\n"));
        }
        out
    }

    /// Number of training classes.
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_raw(&self) -> usize {
        self.entries.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn raw_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn raw_index(&self, name: &str) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e.0 == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn raw_name(&self, raw: usize) -> Result<&str> {
        self.entries
            .get(raw)
            .map(|e| e.0.as_str())
            .ok_or_else(|| Error::UnknownClass(raw.to_string()))
    }

    /// Mapped class of raw class index `raw`; `None` when excluded.
    pub fn map(&self, raw: usize) -> Result<Option<usize>> {
        self.entries
            .get(raw)
            .map(|e| e.1)
            .ok_or_else(|| Error::UnknownClass(raw.to_string()))
    }

    pub fn map_name(&self, name: &str) -> Result<Option<usize>> {
        self.map(self.raw_index(name)?)
    }
}
