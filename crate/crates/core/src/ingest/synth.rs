use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    encode_wav, segment_events, write_atomic, AnnotationRecord, DatasetManifest, EventAnnotation, ManifestEntry, Split,
};
use crate::dsp::{cwt, AudioClip, BandpassFilter, ScaleGrid, WaveletFamily, WaveletSpec};
use crate::error::{Error, Result};
use crate::eval::EVENT_LABELS;

pub const SYNTH_RATE: u32 = 8000;

const EVENTS_PER_RECORDING: usize = 2;
const BREATH_BAND: (f64, f64) = (80.0, 160.0);
const ORACLE_MIN_ACCURACY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub recordings: usize,
    pub events: usize,
    /// Leave-one-out nearest-centroid accuracy on mean CWT rows of the events.
    pub oracle_accuracy: f64,
}

fn record_label(event_class: &str, index: usize) -> &'static str {
    match event_class {
        "N" if index % 2 == 1 => "PQ",
        "N" => "N",
        "Rho" | "W" | "Str" => "CAS",
        "CC" | "FC" => "DAS",
        _ => "CD",
    }
}

/// Two of every five recordings per class go to validation.
fn split_of(index: usize) -> Split {
    if index % 5 >= 3 {
        Split::Validation
    } else {
        Split::Train
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Band-limited noise scaled to the given RMS.
fn breath(rng: &mut ChaCha8Rng, n: usize, rms: f64) -> Result<Vec<f64>> {
    let filt = BandpassFilter::design(SYNTH_RATE, BREATH_BAND.0, BREATH_BAND.1)?;
    let x = filt.apply(&noise(rng, n));
    let r = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    Ok(x.into_iter().map(|v| v * rms / r).collect())
}

fn tone(rng: &mut ChaCha8Rng, n: usize, freq: f64, amp: f64) -> Vec<f64> {
    let fs = SYNTH_RATE as f64;
    let f = freq * rng.random_range(0.97..1.03);
    let am = rng.random_range(2.0..4.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            amp * (1.0 + 0.3 * (2.0 * PI * am * t).sin()) * (2.0 * PI * f * t + phase).sin()
        })
        .collect()
}

/// Decaying sinusoid bursts at a jittered rate.
fn clicks(rng: &mut ChaCha8Rng, n: usize, ring_hz: f64, per_sec: f64, amp: f64) -> Vec<f64> {
    let fs = SYNTH_RATE as f64;
    let tau = 0.003 * fs;
    let len = (8.0 * tau) as usize;
    let mut out = vec![0.0; n];
    let mut pos = rng.random_range(0.0..fs / per_sec);
    while (pos as usize) < n {
        let start = pos as usize;
        let a = amp * rng.random_range(0.7..1.0);
        for k in 0..len.min(n - start) {
            let t = k as f64;
            out[start + k] += a * (-t / tau).exp() * (2.0 * PI * ring_hz * t / fs).sin();
        }
        pos += fs / per_sec * rng.random_range(0.7..1.3);
    }
    out
}

fn event_signal(rng: &mut ChaCha8Rng, class: &str, n: usize) -> Result<Vec<f64>> {
    let body = match class {
        "N" => return breath(rng, n, 0.2),
        "Rho" => tone(rng, n, 220.0, 0.3),
        "W" => tone(rng, n, 450.0, 0.3),
        "Str" => tone(rng, n, 1100.0, 0.3),
        "CC" => clicks(rng, n, 700.0, 8.0, 0.6),
        "FC" => clicks(rng, n, 1600.0, 20.0, 0.5),
        _ => {
            let w = tone(rng, n, 450.0, 0.25);
            let c = clicks(rng, n, 1600.0, 20.0, 0.45);
            w.into_iter().zip(c).map(|(a, b)| a + b).collect()
        }
    };
    let bg = breath(rng, n, 0.05)?;
    // Short raised-cosine fades keep onsets click-free.
    let fade = (0.01 * SYNTH_RATE as f64) as usize;
    Ok(body
        .into_iter()
        .zip(bg)
        .enumerate()
        .map(|(i, (s, b))| {
            let edge = i.min(n - 1 - i);
            let g = if edge < fade { 0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos() } else { 1.0 };
            g * s + b
        })
        .collect())
}

/// One recording: quiet breathing with events of `class`, or a clipped,
/// noisy poor-quality take without events.
fn recording(rng: &mut ChaCha8Rng, class: &str, poor: bool) -> Result<(Vec<f64>, Vec<EventAnnotation>)> {
    let fs = SYNTH_RATE as f64;
    let ms = |samples: usize| (samples as f64 * 1000.0 / fs).round() as u64;
    let mut spans = Vec::new();
    let mut pos = (rng.random_range(0.2..0.5) * fs) as usize;
    for _ in 0..EVENTS_PER_RECORDING {
        let len = (rng.random_range(0.6..1.4) * fs) as usize;
        spans.push((pos, pos + len));
        pos += len + (rng.random_range(0.2..0.5) * fs) as usize;
    }
    let n = pos;
    let mut x = breath(rng, n, 0.02)?;
    if poor {
        let hiss = noise(rng, n);
        let hum = breath(rng, n, 0.4)?;
        for ((v, h), b) in x.iter_mut().zip(hiss).zip(hum) {
            *v = (*v + 0.4 * h + b).clamp(-0.5, 0.5);
        }
        return Ok((x, Vec::new()));
    }
    let mut events = Vec::new();
    for &(a, b) in &spans {
        let (start_ms, end_ms) = (ms(a), ms(b));
        // Place the event on the exact samples its annotation maps back to.
        let (a, b) = (
            (start_ms as usize * SYNTH_RATE as usize + 500) / 1000,
            (end_ms as usize * SYNTH_RATE as usize + 500) / 1000,
        );
        for (v, e) in x[a..b].iter_mut().zip(event_signal(rng, class, b - a)?) {
            *v += e;
        }
        events.push(EventAnnotation { start_ms, end_ms, label: class.to_string() });
    }
    for v in &mut x {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok((x, events))
}

/// Mean log-magnitude per CWT row.
fn oracle_features(clip: &AudioClip) -> Result<Vec<f64>> {
    let wavelet = WaveletSpec::new(WaveletFamily::Morse);
    let grid = ScaleGrid::log_spaced(&wavelet, clip.sample_rate(), 100.0, 2400.0, 24)?;
    let coeffs = cwt(clip, &wavelet, &grid)?;
    Ok((0..grid.len())
        .map(|i| {
            let row = coeffs.row(i);
            (row.iter().map(|c| c.norm()).sum::<f64>() / row.len() as f64 + 1e-9).ln()
        })
        .collect())
}

/// Leave-one-out nearest-centroid accuracy.
fn nearest_centroid_accuracy(features: &[Vec<f64>], labels: &[usize], n_classes: usize) -> f64 {
    let dim = features[0].len();
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(f) {
            *s += v;
        }
    }
    let mut correct = 0;
    for (f, &l) in features.iter().zip(labels) {
        let mut best = (f64::INFINITY, usize::MAX);
        for c in 0..n_classes {
            let n = counts[c] - usize::from(c == l && counts[c] > 1);
            if n == 0 {
                continue;
            }
            let d: f64 = (0..dim)
                .map(|k| {
                    let s = sums[c][k] - if c == l && counts[c] > 1 { f[k] } else { 0.0 };
                    (s / n as f64 - f[k]).powi(2)
                })
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        correct += usize::from(best.1 == l);
    }
    correct as f64 / features.len() as f64
}

/// Writes `n_per_class` recordings for each of the seven event classes as
/// 8 kHz WAV files with JSON annotations, plus `manifest.json`. Every
/// second normal recording is a poor-quality take without events.
/// Generation fails if a nearest-centroid classifier on mean CWT rows
/// cannot separate the event classes.
pub fn generate_synthetic_dataset(out_dir: &Path, seed: u64, n_per_class: usize) -> Result<SynthSummary> {
    if n_per_class == 0 {
        return Err(Error::InvalidConfig("n_per_class must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (c, class) in EVENT_LABELS.iter().enumerate() {
        for i in 0..n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((c * 1_000_000 + i) as u64);
            let label = record_label(class, i);
            let (samples, events) = recording(&mut rng, class, label == "PQ")?;
            let id = format!("syn_{}_{i:03}", class.to_lowercase());
            let ann = AnnotationRecord { recording_id: id.clone(), record_label: label.to_string(), events };
            let (wav, json) = (format!("{id}.wav"), format!("{id}.json"));
            let bytes = encode_wav(&samples, SYNTH_RATE);
            write_atomic(&out_dir.join(&wav), &bytes)?;
            write_atomic(&out_dir.join(&json), ann.to_json().as_bytes())?;
            // Score what was written, after 16-bit quantisation.
            let clip = super::parse_wav(&bytes)?;
            for (ev, _) in segment_events(&clip, &ann)? {
                features.push(oracle_features(&ev)?);
                labels.push(c);
            }
            entries.push(ManifestEntry { audio: wav.into(), annotation: json.into(), split: split_of(i) });
        }
    }
    let oracle_accuracy = nearest_centroid_accuracy(&features, &labels, EVENT_LABELS.len());
    if oracle_accuracy < ORACLE_MIN_ACCURACY {
        return Err(Error::Data(format!(
            "synthetic classes not separable: nearest-centroid accuracy {oracle_accuracy:.3}"
        )));
    }
    let manifest = DatasetManifest { root: PathBuf::from("."), entries };
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(SynthSummary { manifest: path, recordings: manifest.entries.len(), events: features.len(), oracle_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_samples;

    #[test]
    fn counting_contract_and_determinism() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = generate_synthetic_dataset(a.path(), 1, 5).unwrap();
        generate_synthetic_dataset(b.path(), 1, 5).unwrap();
        let count = |ext: &str| {
            std::fs::read_dir(a.path())
                .unwrap()
                .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
                .count()
        };
        assert_eq!((count("wav"), count("json")), (35, 36));
        assert_eq!(sa.recordings, 35);
        assert!(sa.oracle_accuracy >= 0.9, "{}", sa.oracle_accuracy);
        for e in std::fs::read_dir(a.path()).unwrap() {
            let p = e.unwrap().path();
            let q = b.path().join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{}", p.display());
        }
        let c = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(c.path(), 2, 5).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("syn_w_000.wav")).unwrap(),
            std::fs::read(c.path().join("syn_w_000.wav")).unwrap()
        );
    }

    #[test]
    fn labels_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_dataset(dir.path(), 3, 5).unwrap();
        let m = DatasetManifest::load(&s.manifest).unwrap();
        let records = load_samples(&m, true).unwrap();
        let events = load_samples(&m, false).unwrap();
        assert_eq!(events.len(), s.events);
        assert_eq!(events.len(), (7 * 5 - 2) * 2);
        for label in ["N", "CAS", "DAS", "CD", "PQ"] {
            for split in [Split::Train, Split::Validation] {
                assert!(records.iter().any(|r| r.raw_label == label && r.split == split), "{label} {split:?}");
            }
        }
        for label in EVENT_LABELS {
            assert!(events.iter().any(|e| e.raw_label == label && e.split == Split::Train));
        }
        assert!(generate_synthetic_dataset(dir.path(), 3, 0).is_err());
    }

    #[test]
    fn centroid_oracle_on_known_points() {
        let f = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2], vec![0.2]];
        assert_eq!(nearest_centroid_accuracy(&f, &[0, 0, 1, 1, 0], 2), 1.0);
        assert_eq!(nearest_centroid_accuracy(&f, &[0, 0, 1, 1, 1], 2), 0.8);
    }
}
