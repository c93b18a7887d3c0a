//! On-disk feature sets: one spectrogram cache per sample plus `index.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use respira_core::augment::LabeledSpectrogram;
use respira_core::dsp::{FeatureConfig, FeatureExtractor, Spectrogram};
use respira_core::eval::{Level, TaskSpec};
use respira_core::ingest::{write_atomic, Sample, Split};
use serde::{Deserialize, Serialize};

use crate::SplitArg;

pub const INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexItem {
    pub id: String,
    pub label: String,
    pub split: Split,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub level: String,
    pub features: FeatureConfig,
    pub items: Vec<IndexItem>,
}

pub fn level_name(level: Level) -> &'static str {
    match level {
        Level::Event => "event",
        Level::Record => "record",
    }
}

/// `features_root/{event,record}`.
pub fn level_dir(root: &Path, level: Level) -> PathBuf {
    root.join(level_name(level))
}

fn cache_name(id: &str) -> String {
    let safe: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{safe}.lssg")
}

/// Extracts every sample, one worker per available core, and writes the
/// caches and index into `dir`. Output does not depend on the worker count.
pub fn extract_all(samples: &[Sample], config: &FeatureConfig, level: Level, dir: &Path) -> Result<FeatureIndex> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let extractor = FeatureExtractor::new(config.clone())?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    let per = samples.len().div_ceil(workers.max(1)).max(1);
    let results: Vec<Result<Vec<IndexItem>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(per)
            .map(|chunk| {
                let extractor = &extractor;
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|sample| {
                            let spec =
                                extractor.extract(&sample.clip).with_context(|| format!("extracting {}", sample.id))?;
                            let file = cache_name(&sample.id);
                            spec.write_cache(&dir.join(&file))?;
                            Ok(IndexItem {
                                id: sample.id.clone(),
                                label: sample.raw_label.clone(),
                                split: sample.split,
                                file,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
    });
    let mut items = Vec::with_capacity(samples.len());
    for r in results {
        items.extend(r?);
    }
    let index = FeatureIndex { level: level_name(level).into(), features: config.clone(), items };
    let json = serde_json::to_string_pretty(&index)?;
    write_atomic(&dir.join(INDEX), json.as_bytes())?;
    Ok(index)
}

pub fn load_index(dir: &Path) -> Result<FeatureIndex> {
    let path = dir.join(INDEX);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `respira extract` first)", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A task's labelled spectrograms from one split.
pub struct TaskData {
    pub ids: Vec<String>,
    pub samples: Vec<LabeledSpectrogram>,
}

impl TaskData {
    pub fn classes(&self) -> Vec<usize> {
        self.samples.iter().map(|s| respira_core::eval::argmax(&s.label)).collect()
    }
}

pub fn load_task_data(dir: &Path, index: &FeatureIndex, task: &TaskSpec, split: SplitArg) -> Result<TaskData> {
    let mut out = TaskData { ids: Vec::new(), samples: Vec::new() };
    for item in &index.items {
        let keep = match split {
            SplitArg::All => true,
            SplitArg::Train => item.split == Split::Train,
            SplitArg::Validation => item.split == Split::Validation,
        };
        if !keep {
            continue;
        }
        let class = task.map_label(&item.label).with_context(|| format!("sample {}", item.id))?;
        let spec = Spectrogram::read_cache(&dir.join(&item.file))?;
        out.ids.push(item.id.clone());
        out.samples.push(LabeledSpectrogram::one_hot(spec, class, task.n_classes())?);
    }
    if out.samples.is_empty() {
        bail!("no samples in the requested split of {}", dir.display());
    }
    Ok(out)
}
