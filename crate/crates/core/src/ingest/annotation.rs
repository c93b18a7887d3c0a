use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::eval::{EVENT_LABELS, RECORD_LABELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(rename = "type")]
    pub label: String,
}

/// One recording's labels: a record-level class and the annotated events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub recording_id: String,
    #[serde(rename = "record_annotation")]
    pub record_label: String,
    #[serde(rename = "event_annotation")]
    pub events: Vec<EventAnnotation>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Data(format!("recording {}: {m}", self.recording_id)));
        if !RECORD_LABELS.contains(&self.record_label.as_str()) {
            return err(format!("unknown record label '{}'", self.record_label));
        }
        for e in &self.events {
            if !EVENT_LABELS.contains(&e.label.as_str()) {
                return err(format!("unknown event label '{}'", e.label));
            }
            if e.start_ms >= e.end_ms {
                return err(format!("event [{}, {}) ms is empty", e.start_ms, e.end_ms));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("annotation: {e}")))?;
        rec.validate()?;
        Ok(rec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn ms_to_sample(ms: u64, rate: u32) -> usize {
    ((ms as u128 * rate as u128 + 500) / 1000) as usize
}

/// One sub-clip per annotated event, sliced at `[onset, offset)`.
pub fn segment_events(clip: &AudioClip, ann: &AnnotationRecord) -> Result<Vec<(AudioClip, String)>> {
    let rate = clip.sample_rate();
    ann.events
        .iter()
        .map(|e| {
            let (a, b) = (ms_to_sample(e.start_ms, rate), ms_to_sample(e.end_ms, rate));
            if a >= b || b > clip.len() {
                return Err(Error::Data(format!(
                    "recording {}: event [{}, {}) ms outside the {} ms clip",
                    ann.recording_id,
                    e.start_ms,
                    e.end_ms,
                    clip.len() as u64 * 1000 / rate as u64
                )));
            }
            Ok((AudioClip::new(clip.samples()[a..b].to_vec(), rate)?, e.label.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(events: &[(u64, u64)]) -> AnnotationRecord {
        AnnotationRecord {
            recording_id: "r1".into(),
            record_label: "CAS".into(),
            events: events
                .iter()
                .map(|&(s, e)| EventAnnotation { start_ms: s, end_ms: e, label: "W".into() })
                .collect(),
        }
    }

    #[test]
    fn slices_at_sample_boundaries() {
        let clip = AudioClip::new((0..16000).map(|i| i as f64).collect(), 8000).unwrap();
        let out = segment_events(&clip, &rec(&[(1000, 1500)])).unwrap();
        assert_eq!(out[0].0.len(), 4000);
        assert_eq!(out[0].0.samples()[0], 8000.0);
        assert_eq!(out[0].1, "W");
        assert!(segment_events(&clip, &rec(&[])).unwrap().is_empty());
        let err = segment_events(&clip, &rec(&[(1500, 2500)])).unwrap_err().to_string();
        assert!(err.contains("r1"), "{err}");
    }

    #[test]
    fn adjacent_segments_rebuild_the_source() {
        let clip = AudioClip::new((0..8000).map(|i| (i as f64 * 0.01).sin()).collect(), 8000).unwrap();
        let out = segment_events(&clip, &rec(&[(0, 250), (250, 600), (600, 1000)])).unwrap();
        let joined: Vec<f64> = out.iter().flat_map(|(c, _)| c.samples().to_vec()).collect();
        assert_eq!(joined, clip.samples());
    }

    #[test]
    fn json_schema() {
        let text = r#"{"recording_id":"a","record_annotation":"DAS",
            "event_annotation":[{"start_ms":10,"end_ms":90,"type":"FC"}]}"#;
        let r = AnnotationRecord::from_json(text).unwrap();
        assert_eq!(r.events[0].label, "FC");
        assert_eq!(AnnotationRecord::from_json(&r.to_json()).unwrap(), r);
        assert!(AnnotationRecord::from_json(&text.replace("FC", "XX")).is_err());
        assert!(AnnotationRecord::from_json(&text.replace("DAS", "Normal")).is_err());
    }
}
