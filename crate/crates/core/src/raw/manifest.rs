//! Dataset manifest: a TOML record listing RGB/RAW pairs.
//!
//! ```toml
//! format = "rawdiff-dataset"
//! version = 1
//! split = "train"
//! seed = 7
//!
//! [isp.synthetic]          # optional named ISP parameter records
//! black_level = 256.0
//! # ...
//!
//! [[entries]]
//! rgb = "rgb/000000.png"    # paths are relative to the manifest file
//! raw = "raw/000000.rawd"   # absent for RGB-only corpora
//! isp = "synthetic"         # optional reference into [isp]
//! annotations = []          # optional sidecar files carried along
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IspParams;
use crate::error::{bail, Error, Result};

pub const FORMAT: &str = "rawdiff-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub rgb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isp: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub isp: BTreeMap<String, IspParams>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative paths resolve against (not serialized).
    #[serde(skip)]
    pub root: PathBuf,
}

fn check_relative(p: &str) -> Result<()> {
    let path = Path::new(p);
    if p.is_empty() || path.is_absolute() || path.components().any(|c| !matches!(c, Component::Normal(_))) {
        bail!(Data, "manifest path '{p}' must be a plain relative path");
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(split: Split, seed: u64) -> Self {
        DatasetManifest {
            format: FORMAT.into(),
            version: MANIFEST_VERSION,
            split,
            seed,
            isp: BTreeMap::new(),
            entries: Vec::new(),
            root: PathBuf::new(),
        }
    }

    /// Parses and structurally validates manifest text (no file access).
    pub fn parse(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            bail!(Data, "manifest format '{}' is not '{FORMAT}'", self.format);
        }
        if self.version != MANIFEST_VERSION {
            bail!(Data, "unsupported manifest version {}", self.version);
        }
        if self.entries.is_empty() {
            bail!(Data, "manifest has no entries");
        }
        for (name, p) in &self.isp {
            p.validate().map_err(|e| Error::Data(format!("isp record '{name}': {e}")))?;
        }
        for e in &self.entries {
            check_relative(&e.rgb)?;
            if let Some(r) = &e.raw {
                check_relative(r)?;
            }
            for a in &e.annotations {
                check_relative(a)?;
            }
            if let Some(name) = &e.isp {
                if !self.isp.contains_key(name) {
                    bail!(Data, "entry {} references unknown isp record '{name}'", e.rgb);
                }
            }
        }
        Ok(())
    }

    /// Loads a manifest file (or `manifest.toml` inside a directory) and
    /// checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m = Self::parse(&text)?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        for e in &m.entries {
            let mut paths = vec![&e.rgb];
            paths.extend(e.raw.as_ref());
            paths.extend(e.annotations.iter());
            for p in paths {
                if !m.root.join(p).is_file() {
                    bail!(Data, "manifest {} lists missing file {p}", file.display());
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        self.validate()?;
        let file = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Fails unless every entry has a RAW file.
    pub fn require_pairs(&self) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.raw.is_none()) {
            bail!(Data, "entry {} has no RAW file", e.rgb);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
format = "rawdiff-dataset"
version = 1
split = "test"
seed = 3

[[entries]]
rgb = "rgb/a.png"
raw = "raw/a.rawd"
"#;

    #[test]
    fn parses_minimal_manifest() {
        let m = DatasetManifest::parse(TEXT).unwrap();
        assert_eq!(m.split, Split::Test);
        assert_eq!(m.entries.len(), 1);
        assert!(m.require_pairs().is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_empty_lists() {
        assert!(DatasetManifest::parse(&format!("{TEXT}\nextra = 1")).is_err());
        let empty = "format = \"rawdiff-dataset\"\nversion = 1\nsplit = \"train\"\nseed = 0\nentries = []";
        assert!(DatasetManifest::parse(empty).is_err());
    }

    #[test]
    fn rejects_escaping_paths_and_dangling_refs() {
        let esc = TEXT.replace("rgb/a.png", "../a.png");
        assert!(DatasetManifest::parse(&esc).is_err());
        let dangling = format!("{TEXT}isp = \"nope\"\n");
        assert!(DatasetManifest::parse(&dangling).is_err());
    }

    #[test]
    fn load_checks_files_exist() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), TEXT).unwrap();
        assert!(DatasetManifest::load(dir.path()).is_err());
    }
}
