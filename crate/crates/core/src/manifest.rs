//! Patient metadata and the line-oriented dataset manifest.
//!
//! Each non-empty manifest line is one JSON object:
//!
//! ```text
//! {"path":"train/vol_000.volz","age":9.5,"weight":31.2,"sex":"female","split":"train"}
//! {"path":"test/vol_000.volz","age":12.0,"weight":40.0,"sex":"male","split":"test","mask_path":"test/mask_000.volz"}
//! ```
//!
//! Lines starting with `#` are comments. Relative paths resolve against the
//! manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_AGE_YEARS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// Symmetric binary coding used in condition vectors.
    pub fn signed(self) -> f64 {
        match self {
            Sex::Female => -1.0,
            Sex::Male => 1.0,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    /// Years.
    pub age: f64,
    /// Kilograms.
    pub weight: f64,
    pub sex: Sex,
}

impl PatientMeta {
    pub fn new(age: f64, weight: f64, sex: Sex) -> Result<Self> {
        let m = PatientMeta { age, weight, sex };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.age.is_finite() && (0.0..=MAX_AGE_YEARS).contains(&self.age)) {
            return Err(Error::Validation(format!("age {} outside [0, {MAX_AGE_YEARS}]", self.age)));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::Validation(format!("weight {} must be > 0", self.weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub meta: PatientMeta,
    pub mask_path: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    path: String,
    age: f64,
    weight: f64,
    sex: String,
    split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn train(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("empty manifest".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            e.meta.validate()?;
            match (e.split, &e.mask_path) {
                (Split::Train, Some(_)) => {
                    return Err(Error::Validation(format!("entry {i}: train entry carries a mask")))
                }
                (Split::Test, None) => return Err(Error::Validation(format!("entry {i}: test entry has no mask"))),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    /// Parses manifest text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line_err = |msg: String| Error::format("manifest", format!("line {lineno}: {msg}"));
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
            let sex = match rec.sex.as_str() {
                "female" | "f" | "F" => Sex::Female,
                "male" | "m" | "M" => Sex::Male,
                other => return Err(line_err(format!("unknown sex `{other}`"))),
            };
            let split = match rec.split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(line_err(format!("unknown split `{other}`"))),
            };
            if rec.weight.is_nan() || rec.weight <= 0.0 {
                return Err(line_err(format!("weight {} must be > 0", rec.weight)));
            }
            let meta = PatientMeta::new(rec.age, rec.weight, sex).map_err(|e| line_err(e.to_string()))?;
            if split == Split::Train && rec.mask_path.is_some() {
                return Err(line_err("train entry carries a mask_path".into()));
            }
            if split == Split::Test && rec.mask_path.is_none() {
                return Err(line_err("test entry requires a mask_path".into()));
            }
            entries.push(ManifestEntry {
                path: base.join(&rec.path),
                meta,
                mask_path: rec.mask_path.map(|p| base.join(p)),
                split,
            });
        }
        let manifest = DatasetManifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes one record per line with paths relative to the manifest directory
    /// when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let rel = |p: &Path| -> String { p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/") };
        let mut out = String::new();
        for e in &self.entries {
            let rec = ManifestRecord {
                path: rel(&e.path),
                age: e.meta.age,
                weight: e.meta.weight,
                sex: e.meta.sex.to_string(),
                split: match e.split {
                    Split::Train => "train".into(),
                    Split::Test => "test".into(),
                },
                mask_path: e.mask_path.as_deref().map(rel),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
