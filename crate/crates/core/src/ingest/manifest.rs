use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_wav, segment_events, write_atomic, AnnotationRecord};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub annotation: PathBuf,
    pub split: Split,
}

/// Dataset listing. Relative paths resolve against `root`, and a relative
/// `root` against the directory holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Reads the manifest, makes `root` absolute and checks that every
    /// listed file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        if m.root.is_relative() {
            m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
        }
        for e in &m.entries {
            for p in [&e.audio, &e.annotation] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("manifest entry {} does not exist", full.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// One classifiable unit: an annotated event or a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub clip: AudioClip,
    pub raw_label: String,
    pub split: Split,
}

/// Loads every entry, returning events (`records == false`) or whole
/// recordings with their record label.
pub fn load_samples(manifest: &DatasetManifest, records: bool) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        let clip = load_wav(&manifest.resolve(&e.audio))?;
        let ann = AnnotationRecord::load(&manifest.resolve(&e.annotation))?;
        if records {
            out.push(Sample {
                id: ann.recording_id.clone(),
                clip,
                raw_label: ann.record_label.clone(),
                split: e.split,
            });
        } else {
            for (k, (clip, label)) in segment_events(&clip, &ann)?.into_iter().enumerate() {
                out.push(Sample { id: format!("{}#{k}", ann.recording_id), clip, raw_label: label, split: e.split });
            }
        }
    }
    Ok(out)
}
