use std::path::{Path, PathBuf};

use crate::augment::AugmentConfig;
use crate::dsp::{FeatureConfig, WaveletFamily, WaveletSpec};
use crate::error::{Error, Result};
use crate::eval::{Level, TaskId};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Spectrogram geometries `(F, T)` accepted without `size_override`.
pub const PAPER_SIZES: [(usize, usize); 6] = [(128, 128), (128, 256), (128, 512), (140, 256), (140, 512), (140, 1024)];

/// Optional replacements for the level-dependent feature defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DspOverrides {
    pub target_rate: Option<u32>,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    pub duration_secs: Option<f64>,
}

/// Settings for one pipeline run, read from a flat `key = value` file.
///
/// ```text
/// # event-level run
/// task = 1-2
/// wavelet = bump
/// size = 128x512
/// augment.crop_bins = 10
/// train.epochs = 50
/// model.inc_res_channels = 128, 256
/// ```
///
/// Unset `wavelet` and `size` follow the task level: Bump at 128x512 for
/// events and Morse at 140x1024 for recordings. `train.batch_size = 0`
/// picks the largest multiple of the class count not above 32.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskId,
    pub wavelet: Option<WaveletFamily>,
    pub size: Option<(usize, usize)>,
    pub size_override: bool,
    pub out_dir: PathBuf,
    pub dsp: DspOverrides,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    /// Width template; input dims and class count are filled per task.
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskId::T1_2,
            wavelet: None,
            size: None,
            size_override: false,
            out_dir: PathBuf::from("out"),
            dsp: DspOverrides::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig { batch_size: 0, ..TrainConfig::default() },
            model: ModelConfig::new((0, 0), 2),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected true or false, got '{value}'"))),
    }
}

/// Parses `FxT` (also accepts `×`).
pub(crate) fn parse_size(value: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("size '{value}' is not of the form FxT"));
    let (f, t) = value.split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let f: usize = f.trim().parse().map_err(|_| bad())?;
    let t: usize = t.trim().parse().map_err(|_| bad())?;
    if f == 0 || t == 0 {
        return Err(bad());
    }
    Ok((f, t))
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim()).map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "task" => self.task = value.parse()?,
            "wavelet" => self.wavelet = Some(value.parse()?),
            "size" => self.size = Some(parse_size(value)?),
            "size_override" => self.size_override = parse_bool(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "dsp.target_rate" => self.dsp.target_rate = Some(parse_num(key, value)?),
            "dsp.band_lo" => self.dsp.band_lo = Some(parse_num(key, value)?),
            "dsp.band_hi" => self.dsp.band_hi = Some(parse_num(key, value)?),
            "dsp.duration_secs" => self.dsp.duration_secs = Some(parse_num(key, value)?),
            "augment.crop_bins" => self.augment.crop_bins = parse_num(key, value)?,
            "augment.mixup" => self.augment.mixup = parse_bool(key, value)?,
            "augment.mixup_alpha" => self.augment.mixup_alpha = parse_num(key, value)?,
            "augment.oversample" => self.augment.oversample = parse_bool(key, value)?,
            "train.epochs" => self.train.epochs = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "train.l2_lambda" => self.train.l2_lambda = parse_num(key, value)?,
            "train.eval_every" => self.train.eval_every = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.adam_beta1" => self.train.adam.beta1 = parse_num(key, value)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse_num(key, value)?,
            "train.adam_eps" => self.train.adam.eps = parse_num(key, value)?,
            "model.doub_inc_channels" => self.model.doub_inc_channels = parse_num(key, value)?,
            "model.inc_res_channels" => {
                let chans = value.split(',').map(|c| parse_num(key, c.trim())).collect::<Result<Vec<usize>>>()?;
                if chans.is_empty() {
                    return Err(Error::InvalidConfig("model.inc_res_channels is empty".into()));
                }
                // Blocks beyond the template reuse its last kernel sets.
                let m = &mut self.model;
                for list in [&mut m.incft_kernels, &mut m.inct_kernels] {
                    let last = list.last().cloned().unwrap_or_else(|| vec![3]);
                    list.resize(chans.len(), last);
                }
                m.inc_res_channels = chans;
            }
            "model.rn_lambda" => self.model.rn_lambda = parse_num(key, value)?,
            "model.attn_heads" => self.model.attn_heads = parse_num(key, value)?,
            "model.attn_key_dim" => self.model.attn_key_dim = parse_num(key, value)?,
            "model.fc_hidden" => self.model.fc_hidden = parse_num(key, value)?,
            "model.dropout" => self.model.dropout = parse_num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Renders every setting in the file format; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("seed = {}", self.seed), format!("task = {}", self.task)];
        if let Some(w) = self.wavelet {
            lines.push(format!("wavelet = {w}"));
        }
        if let Some((f, t)) = self.size {
            lines.push(format!("size = {f}x{t}"));
        }
        lines.push(format!("size_override = {}", self.size_override));
        lines.push(format!("out = {}", self.out_dir.display()));
        let d = &self.dsp;
        if let Some(v) = d.target_rate {
            lines.push(format!("dsp.target_rate = {v}"));
        }
        for (k, v) in [("band_lo", d.band_lo), ("band_hi", d.band_hi), ("duration_secs", d.duration_secs)] {
            if let Some(v) = v {
                lines.push(format!("dsp.{k} = {v:?}"));
            }
        }
        let a = &self.augment;
        lines.push(format!("augment.crop_bins = {}", a.crop_bins));
        lines.push(format!("augment.mixup = {}", a.mixup));
        lines.push(format!("augment.mixup_alpha = {:?}", a.mixup_alpha));
        lines.push(format!("augment.oversample = {}", a.oversample));
        let t = &self.train;
        lines.push(format!("train.epochs = {}", t.epochs));
        lines.push(format!("train.batch_size = {}", t.batch_size));
        lines.push(format!("train.learning_rate = {:?}", t.learning_rate));
        lines.push(format!("train.l2_lambda = {:?}", t.l2_lambda));
        lines.push(format!("train.eval_every = {}", t.eval_every));
        lines.push(format!("train.patience = {}", t.patience));
        lines.push(format!("train.adam_beta1 = {:?}", t.adam.beta1));
        lines.push(format!("train.adam_beta2 = {:?}", t.adam.beta2));
        lines.push(format!("train.adam_eps = {:?}", t.adam.eps));
        let m = &self.model;
        lines.push(format!("model.doub_inc_channels = {}", m.doub_inc_channels));
        lines.push(format!("model.inc_res_channels = {}", fmt_list(&m.inc_res_channels)));
        lines.push(format!("model.rn_lambda = {:?}", m.rn_lambda));
        lines.push(format!("model.attn_heads = {}", m.attn_heads));
        lines.push(format!("model.attn_key_dim = {}", m.attn_key_dim));
        lines.push(format!("model.fc_hidden = {}", m.fc_hidden));
        lines.push(format!("model.dropout = {:?}", m.dropout));
        lines.join("\n") + "\n"
    }

    pub fn level(&self) -> Level {
        self.task.level()
    }

    pub fn wavelet(&self) -> WaveletFamily {
        self.wavelet.unwrap_or(match self.level() {
            Level::Event => WaveletFamily::Bump,
            Level::Record => WaveletFamily::Morse,
        })
    }

    /// Spectrogram `(F, T)` before cropping.
    pub fn size(&self) -> (usize, usize) {
        self.size.unwrap_or(match self.level() {
            Level::Event => (128, 512),
            Level::Record => (140, 1024),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.size();
        if !self.size_override && !PAPER_SIZES.contains(&size) {
            return Err(Error::InvalidConfig(format!(
                "size {}x{} is not one of the supported geometries (set size_override = true to allow it)",
                size.0, size.1
            )));
        }
        self.augment.validate(size)?;
        self.train_config(2)?;
        self.model_config(2)?;
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let (f, t) = self.size();
        let wavelet = WaveletSpec::new(self.wavelet());
        let mut c = match self.level() {
            Level::Event => FeatureConfig::event(wavelet, t),
            Level::Record => FeatureConfig::recording(wavelet, t),
        };
        c.freq_bins = f;
        let d = &self.dsp;
        c.target_rate = d.target_rate.unwrap_or(c.target_rate);
        c.band_lo = d.band_lo.unwrap_or(c.band_lo);
        c.band_hi = d.band_hi.unwrap_or(c.band_hi);
        c.duration_secs = d.duration_secs.unwrap_or(c.duration_secs);
        c
    }

    /// The network for `n_classes` outputs on cropped inputs.
    pub fn model_config(&self, n_classes: usize) -> Result<ModelConfig> {
        let (f, t) = self.size();
        let crop = self.augment.crop_bins;
        if crop >= f.min(t) {
            return Err(Error::InvalidConfig(format!("crop of {crop} bins does not fit {f}x{t}")));
        }
        let m = ModelConfig { input_dims: (f - crop, t - crop), n_classes, ..self.model.clone() };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self, n_classes: usize) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if t.batch_size == 0 {
            t.batch_size = (32 / n_classes.max(1)).max(1) * n_classes.max(1);
        }
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let cfg = RunConfig::parse(
            "# header\nseed = 7\ntask = 2-2 # trailing\n\nwavelet = amor\nsize = 140x256\n\
             model.inc_res_channels = 16, 32, 64\naugment.mixup = false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.task, TaskId::T2_2);
        assert_eq!(cfg.wavelet(), WaveletFamily::Amor);
        assert_eq!(cfg.model.inc_res_channels, vec![16, 32, 64]);
        assert_eq!(cfg.model.inct_kernels.len(), 3);
        assert!(!cfg.augment.mixup);
        let m = cfg.model_config(5).unwrap();
        assert_eq!(m.input_dims, (130, 246));
        assert_eq!(cfg.feature_config().freq_bins, 140);
        assert_eq!(cfg.feature_config().duration_secs, 30.0);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("size", "32x64"),
            ("size_override", "true"),
            ("dsp.duration_secs", "2.5"),
            ("train.learning_rate", "0.001"),
            ("model.inc_res_channels", "8, 16"),
        ] {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn level_defaults() {
        let ev = RunConfig::default();
        assert_eq!((ev.wavelet(), ev.size()), (WaveletFamily::Bump, (128, 512)));
        let rec = RunConfig::parse("task = 2-1").unwrap();
        assert_eq!((rec.wavelet(), rec.size()), (WaveletFamily::Morse, (140, 1024)));
    }

    #[test]
    fn auto_batch_size() {
        let cfg = RunConfig::default();
        let sizes: Vec<usize> = [2, 3, 5, 7].iter().map(|&c| cfg.train_config(c).unwrap().batch_size).collect();
        assert_eq!(sizes, vec![32, 30, 30, 28]);
    }

    #[test]
    fn rejections() {
        for text in [
            "colour = red",
            "seed = -1",
            "seed = 1\nseed = 2",
            "size = 100x100",
            "size = 128by512",
            "task = 3-1",
            "wavelet = haar",
            "augment.mixup = maybe",
            "novalue",
            "size = 32x32\nsize_override = true\naugment.crop_bins = 40",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
        assert!(RunConfig::parse("size = 100x100\nsize_override = true").is_ok());
    }
}
