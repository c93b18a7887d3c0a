//! Getting data in: WAV decoding, annotations, event segmentation, dataset
//! manifests, run configuration files and the synthetic dataset generator.

mod annotation;
mod config;
mod manifest;
mod synth;
mod wav;

pub use annotation::{segment_events, AnnotationRecord, EventAnnotation};
pub use config::{DspOverrides, RunConfig, PAPER_SIZES};
pub use manifest::{load_samples, DatasetManifest, ManifestEntry, Sample, Split};
pub use synth::{generate_synthetic_dataset, SynthSummary, SYNTH_RATE};
pub use wav::{encode_wav, load_wav, parse_wav};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
