//! JSON-lines dataset manifests with a `classes.json` sidecar.
//!
//! Each manifest line is `{"path": "...", "label": k}`; relative paths are
//! resolved against the manifest's directory. The sidecar next to the
//! manifest lists class names: `{"classes": ["...", ...]}`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASS_TABLE: &str = "classes.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTable {
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn per_class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.class_count()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    /// Loads `path` and the class table beside it, in file order.
    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let table_path = dir.join(CLASS_TABLE);
        let table: ClassTable = serde_json::from_slice(
            &std::fs::read(&table_path).map_err(|e| Error::io(&table_path, e))?,
        )
        .map_err(|e| Error::Malformed {
            format: "class table",
            detail: format!("{}: {e}", table_path.display()),
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
                format: "manifest",
                detail: format!("{}:{}: {e}", path.display(), lineno + 1),
            })?;
            if rec.label >= table.classes.len() {
                return Err(Error::Malformed {
                    format: "manifest",
                    detail: format!(
                        "{}:{}: label {} but only {} classes",
                        path.display(),
                        lineno + 1,
                        rec.label,
                        table.classes.len()
                    ),
                });
            }
            let chip = dir.join(&rec.path);
            if !chip.is_file() {
                return Err(Error::Malformed {
                    format: "manifest",
                    detail: format!("{}:{}: no chip file at {}", path.display(), lineno + 1, chip.display()),
                });
            }
            entries.push(ManifestEntry {
                path: chip,
                label: rec.label,
            });
        }
        Ok(DatasetManifest {
            entries,
            class_names: table.classes,
            split,
        })
    }
}

/// Serializes records as JSON lines.
pub fn encode_manifest(records: &[ManifestRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").expect("write to Vec");
    }
    Ok(out)
}

pub fn encode_class_table(names: &[String]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&ClassTable {
        classes: names.to_vec(),
    })?;
    out.push(b'\n');
    Ok(out)
}
