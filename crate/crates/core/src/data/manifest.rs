//! Newline-delimited JSON manifests.
//!
//! One record per line:
//!
//! ```text
//! {"path":"images/v0001_f00.png","label":1,"video_id":"v0001","method":"toy_checker","split":"train"}
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Blank lines
//! are skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// One labelled frame. `label` is 0 for real and 1 for fake.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub label: u8,
    pub video_id: String,
    pub method: String,
    pub split: Split,
}

impl Sample {
    pub fn is_fake(&self) -> bool {
        self.label == 1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        if sample.path.is_absolute() {
            sample.path.clone()
        } else {
            self.root.join(&sample.path)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut out: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        for s in &self.samples {
            *out.entry(s.split).or_default() += 1;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Parse manifest text. Does not touch the filesystem.
pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<Manifest> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        let bad = |msg: String| Error::Manifest { line: line_no, msg };
        if s.label > 1 {
            return Err(bad(format!("label must be 0 or 1, got {}", s.label)));
        }
        if s.video_id.trim().is_empty() {
            return Err(bad("field `video_id` is empty".into()));
        }
        if s.path.as_os_str().is_empty() {
            return Err(bad("field `path` is empty".into()));
        }
        if !seen.insert(s.path.clone()) {
            return Err(bad(format!("duplicate path `{}`", s.path.display())));
        }
        samples.push(s);
    }
    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push("manifest contains no records".to_string());
    }
    Ok(Manifest {
        root: root.into(),
        samples,
        warnings,
    })
}

/// Read and validate a manifest; every image path must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = parse_manifest(&text, root)?;
    let mut line_of = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = &m.samples[line_of];
        line_of += 1;
        if !m.resolve(s).is_file() {
            return Err(Error::Manifest {
                line: i + 1,
                msg: format!("image `{}` not found", m.resolve(s).display()),
            });
        }
    }
    Ok(m)
}

pub fn manifest_to_string(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let text = manifest_to_string(samples)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
