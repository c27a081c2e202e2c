use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::imageio::read_image;
use super::labels::{LabelMap, EXCLUDED};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "#csab-manifest v1";
const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub raw_class: usize,
    /// `None` for excluded raw classes.
    pub mapped_class: Option<usize>,
    pub environment: u32,
    /// File stem up to the first `_`; frames of one clip share it.
    pub source_video: String,
}

fn source_video_of(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    stem.split('_').next().unwrap_or(stem).to_string()
}

impl SampleRecord {
    pub fn new(path: PathBuf, raw_class: usize, label_map: &LabelMap, environment: u32) -> Result<Self> {
        Ok(SampleRecord {
            source_video: source_video_of(&path),
            mapped_class: label_map.map(raw_class)?,
            path,
            raw_class,
            environment,
        })
    }

    fn line(&self) -> String {
        let mapped = self.mapped_class.map_or(EXCLUDED.to_string(), |c| c.to_string());
        format!("{}\t{}\t{}\t{}", self.path.display(), self.raw_class, mapped, self.environment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub label_map: LabelMap,
    /// Hex SHA-256 of the record lines.
    pub checksum: String,
}

impl DatasetManifest {
    /// Sorts records by path and computes the checksum. Duplicate paths are
    /// rejected.
    pub fn new(mut records: Vec<SampleRecord>, label_map: LabelMap) -> Result<Self> {
        records.sort_by(|a, b| a.path.cmp(&b.path));
        if let Some(w) = records.windows(2).find(|w| w[0].path == w[1].path) {
            return Err(Error::Dataset(format!("duplicate path {}", w[0].path.display())));
        }
        let mut hasher = Sha256::new();
        for r in &records {
            hasher.update(r.line().as_bytes());
            hasher.update(b"\n");
        }
        let checksum = hasher.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Ok(DatasetManifest {
            records,
            label_map,
            checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct environment ids, ascending.
    pub fn environments(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.environment).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for r in &self.records {
            out.push_str(&r.line());
            out.push('\n');
        }
        out
    }

    /// Parses manifest text. Each record's mapped class must agree with
    /// `label_map`.
    pub fn parse(text: &str, label_map: LabelMap) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::Config {
                    line: 1,
                    reason: format!("missing `{MANIFEST_HEADER}` header"),
                })
            }
        }
        let mut records = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Config { line: no + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, raw, mapped, env] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let raw: usize = raw.parse().map_err(|_| bad(format!("bad raw class `{raw}`")))?;
            let env: u32 = env.parse().map_err(|_| bad(format!("bad environment `{env}`")))?;
            let record = SampleRecord::new(PathBuf::from(path), raw, &label_map, env).map_err(|e| bad(e.to_string()))?;
            let expected = record.mapped_class.map_or(EXCLUDED.to_string(), |c| c.to_string());
            if mapped != expected {
                return Err(bad(format!("mapped class {mapped} disagrees with label map ({expected})")));
            }
            records.push(record);
        }
        DatasetManifest::new(records, label_map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, label_map: LabelMap) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::parse(&text, label_map)
    }
}

/// Paths (relative to the dataset root) to leave out of a scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExcludeList(BTreeSet<PathBuf>);

impl ExcludeList {
    /// One relative path per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        ExcludeList(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(PathBuf::from)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(ExcludeList::parse(&text))
    }

    pub fn contains(&self, relative: &Path) -> bool {
        self.0.contains(relative)
    }
}

/// Files the scan passed over, with the reason.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub skipped: Vec<(PathBuf, String)>,
    pub excluded: Vec<PathBuf>,
}

fn parse_environment(name: &str) -> Option<u32> {
    name.strip_prefix("env").unwrap_or(name).parse().ok()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if !hidden {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Walks `root/env<k>/<RawClass>/<image>` and decodes every image once.
/// Undecodable files and unsupported extensions are listed in the report;
/// an unknown class directory is an error. Loose files directly under
/// `root` or an environment directory are ignored.
pub fn scan_dataset(root: &Path, label_map: &LabelMap, exclude: &ExcludeList) -> Result<(DatasetManifest, ScanReport)> {
    let mut records = Vec::new();
    let mut report = ScanReport::default();
    for env_dir in sorted_entries(root)? {
        if !env_dir.is_dir() {
            continue;
        }
        let name = env_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let env = parse_environment(name)
            .ok_or_else(|| Error::Dataset(format!("{}: expected an `env<k>` directory", env_dir.display())))?;
        for class_dir in sorted_entries(&env_dir)? {
            if !class_dir.is_dir() {
                continue;
            }
            let class_name = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let raw = label_map
                .raw_index(class_name)
                .map_err(|_| Error::UnknownClassDir(class_dir.clone()))?;
            for file in sorted_entries(&class_dir)? {
                if !file.is_file() {
                    continue;
                }
                let relative = file.strip_prefix(root).unwrap_or(&file).to_path_buf();
                if exclude.contains(&relative) {
                    report.excluded.push(file);
                    continue;
                }
                let ext = file.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                if !ext.as_deref().is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)) {
                    report.skipped.push((file, "unsupported file type".into()));
                    continue;
                }
                if let Err(e) = read_image(&file) {
                    warn!("skipping {}: {e}", file.display());
                    report.skipped.push((file, e.to_string()));
                    continue;
                }
                records.push(SampleRecord::new(file, raw, label_map, env)?);
            }
        }
    }
    debug!("scanned {} records under {}", records.len(), root.display());
    Ok((DatasetManifest::new(records, label_map.clone())?, report))
}
