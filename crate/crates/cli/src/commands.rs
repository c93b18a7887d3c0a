use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use respira_core::dsp::Spectrogram;
use respira_core::eval::{argmax, parse_predictions_csv, predictions_csv, Level, ScoreReport, TaskId};
use respira_core::ingest::{generate_synthetic_dataset, load_samples, write_atomic, DatasetManifest, RunConfig};
use respira_core::train::{fit, history_csv, Checkpoint, Trainer};

use crate::features::{extract_all, level_dir, level_name, load_index, load_task_data};
use crate::SplitArg;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

fn features_root(cfg: &RunConfig, features: Option<PathBuf>) -> PathBuf {
    features.unwrap_or_else(|| cfg.out_dir.join("features"))
}

fn checkpoint_path(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> PathBuf {
    checkpoint.unwrap_or_else(|| cfg.out_dir.join(format!("model-{}.lsck", cfg.task)))
}

pub fn synth(out: &Path, seed: u64, per_class: usize) -> Result<()> {
    let s = generate_synthetic_dataset(out, seed, per_class)?;
    eprintln!(
        "wrote {} recordings ({} events) to {}; nearest-centroid separability {:.3}",
        s.recordings,
        s.events,
        out.display(),
        s.oracle_accuracy
    );
    Ok(())
}

pub fn extract(cfg: &RunConfig, manifest: &Path, level: Option<Level>) -> Result<()> {
    let mut cfg = cfg.clone();
    // Feature defaults follow the level, so pick a task at the requested one.
    match (level, cfg.level()) {
        (Some(Level::Event), Level::Record) => cfg.task = TaskId::T1_2,
        (Some(Level::Record), Level::Event) => cfg.task = TaskId::T2_2,
        _ => {}
    }
    let level = cfg.level();
    let manifest = DatasetManifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let samples = load_samples(&manifest, level == Level::Record)?;
    ensure!(!samples.is_empty(), "manifest yields no {} samples", level_name(level));
    let dir = level_dir(&features_root(&cfg, None), level);
    let index = extract_all(&samples, &cfg.feature_config(), level, &dir)?;
    eprintln!("extracted {} {} spectrograms into {}", index.items.len(), level_name(level), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, features: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<()> {
    let spec = cfg.task.spec();
    let dir = level_dir(&features_root(cfg, features), cfg.level());
    let index = load_index(&dir)?;
    if index.features != cfg.feature_config() {
        bail!("features in {} were extracted with a different configuration", dir.display());
    }
    let train_set = load_task_data(&dir, &index, &spec, SplitArg::Train)?;
    let val_set = load_task_data(&dir, &index, &spec, SplitArg::Validation)?;
    let model_cfg = cfg.model_config(spec.n_classes())?;
    let train_cfg = cfg.train_config(spec.n_classes())?;
    let mut trainer = Trainer::new(model_cfg, train_cfg)?;
    eprintln!(
        "task {}: {} training and {} validation samples, {} trainable parameters",
        cfg.task,
        train_set.samples.len(),
        val_set.samples.len(),
        trainer.model().trainable_count()
    );
    let ckpt = checkpoint_path(cfg, checkpoint);
    if let Some(d) = ckpt.parent() {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let outcome = fit(&mut trainer, &train_set.samples, &val_set.samples, &cfg.augment, &spec, Some(&ckpt))?;
    for row in &outcome.history {
        eprintln!("epoch {:>4}  val loss {:.4}  Score {:.4}", row.epoch, row.loss, row.score);
    }
    write(&cfg.out_dir.join(format!("history-{}.csv", cfg.task)), history_csv(&outcome.history).as_bytes())?;
    write(&cfg.out_dir.join(format!("run-{}.conf", cfg.task)), cfg.to_text().as_bytes())?;
    eprintln!(
        "wrote {} (best validation Score {})",
        ckpt.display(),
        outcome.best_score.map_or("n/a".into(), |s| format!("{s:.4}"))
    );
    Ok(())
}

fn write_report(cfg: &RunConfig, report: &ScoreReport) -> Result<()> {
    let path = cfg.out_dir.join(format!("report-{}.json", cfg.task));
    write(&path, report.to_json().as_bytes())?;
    println!(
        "task {}: SE {:.4} SP {:.4} AS {:.4} HS {:.4} Score {:.4}",
        report.task, report.se, report.sp, report.as_, report.hs, report.score
    );
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    features: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    split: SplitArg,
) -> Result<()> {
    let spec = cfg.task.spec();
    let path = checkpoint_path(cfg, checkpoint);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let trainer = Trainer::from_checkpoint(&ckpt)?;
    let model_cfg = trainer.model().config();
    if model_cfg.n_classes != spec.n_classes() {
        bail!(
            "checkpoint {} has {} outputs but task {} has {} classes",
            path.display(),
            model_cfg.n_classes,
            cfg.task,
            spec.n_classes()
        );
    }
    let dir = level_dir(&features_root(cfg, features), cfg.level());
    let index = load_index(&dir)?;
    let data = load_task_data(&dir, &index, &spec, split)?;
    let (f, t) = data.samples[0].spec.dims();
    let (mf, mt) = model_cfg.input_dims;
    if f < mf || t < mt || f - mf != t - mt {
        bail!("{f}x{t} features do not fit a model trained on {mf}x{mt} crops");
    }
    let probs = trainer.predict(&data.samples, f - mf)?;
    let truth = data.classes();
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let report = ScoreReport::from_predictions(&spec, &truth, &pred)?;
    write(
        &cfg.out_dir.join(format!("predictions-{}.csv", cfg.task)),
        predictions_csv(&spec, &data.ids, &truth, &probs).as_bytes(),
    )?;
    write_report(cfg, &report)
}

pub fn evaluate_predictions(cfg: &RunConfig, csv: &Path) -> Result<()> {
    let spec = cfg.task.spec();
    let text = std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let (truth, pred) = parse_predictions_csv(&spec, &text).with_context(|| csv.display().to_string())?;
    ensure!(!truth.is_empty(), "{} holds no predictions", csv.display());
    write_report(cfg, &ScoreReport::from_predictions(&spec, &truth, &pred)?)
}

/// Binary PGM with a linear min-max map to 0..=255, highest frequency on top.
pub fn pgm(spec: &Spectrogram) -> Vec<u8> {
    let (f, t) = spec.dims();
    let v = spec.values();
    let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let mut out = format!("P5\n{t} {f}\n255\n").into_bytes();
    out.extend(v.iter().map(|&x| if range > 0.0 { ((x - lo) / range * 255.0).round() as u8 } else { 0 }));
    out
}

pub fn report(cfg: &RunConfig, features: Option<PathBuf>, limit: usize) -> Result<()> {
    let root = features_root(cfg, features);
    let mut images = 0;
    for level in [Level::Event, Level::Record] {
        let dir = level_dir(&root, level);
        if !dir.join(crate::features::INDEX).is_file() {
            continue;
        }
        let index = load_index(&dir)?;
        for item in index.items.iter().take(limit) {
            let spec = Spectrogram::read_cache(&dir.join(&item.file))?;
            let name = item.file.trim_end_matches(".lssg");
            write(&cfg.out_dir.join("images").join(level_name(level)).join(format!("{name}.pgm")), &pgm(&spec))?;
            images += 1;
        }
    }
    let mut summary = String::from("task  n     SE      SP      AS      HS      Score\n");
    let mut reports = 0;
    for task in TaskId::ALL {
        let path = cfg.out_dir.join(format!("report-{task}.json"));
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let r = ScoreReport::from_json(&text)?;
        writeln!(
            summary,
            "{:<5} {:<5} {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
            task.as_str(),
            r.confusion.total(),
            r.se,
            r.sp,
            r.as_,
            r.hs,
            r.score
        )?;
        reports += 1;
    }
    ensure!(images + reports > 0, "nothing to report under {} (no features or score reports)", cfg.out_dir.display());
    write(&cfg.out_dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    eprintln!("wrote {images} images and a summary of {reports} reports");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let s = Spectrogram::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let out = pgm(&s);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(&out[header.len()..], &[0, 51, 102, 153, 204, 255]);
        let flat = pgm(&Spectrogram::constant(2, 2, -3.0));
        assert!(flat.ends_with(&[0, 0, 0, 0]));
    }
}
