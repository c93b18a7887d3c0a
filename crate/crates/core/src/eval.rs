//! Task definitions and the SE / SP / AS / HS / Score metric suite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::model::Model;

pub const EVENT_LABELS: [&str; 7] = ["N", "Rho", "W", "Str", "CC", "FC", "B"];
pub const RECORD_LABELS: [&str; 5] = ["N", "CAS", "DAS", "CD", "PQ"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "1-1")]
    T1_1,
    #[serde(rename = "1-2")]
    T1_2,
    #[serde(rename = "2-1")]
    T2_1,
    #[serde(rename = "2-2")]
    T2_2,
}

/// Whether a task classifies annotated events or whole recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Event,
    Record,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::T1_1, TaskId::T1_2, TaskId::T2_1, TaskId::T2_2];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::T1_1 => "1-1",
            TaskId::T1_2 => "1-2",
            TaskId::T2_1 => "2-1",
            TaskId::T2_2 => "2-2",
        }
    }

    pub fn level(self) -> Level {
        match self {
            TaskId::T1_1 | TaskId::T1_2 => Level::Event,
            TaskId::T2_1 | TaskId::T2_2 => Level::Record,
        }
    }

    pub fn spec(self) -> TaskSpec {
        let names: &[&str] = match self {
            TaskId::T1_1 => &["Normal", "Adventitious"],
            TaskId::T1_2 => &EVENT_LABELS,
            TaskId::T2_1 => &["Normal", "Adventitious", "Poor Quality"],
            TaskId::T2_2 => &RECORD_LABELS,
        };
        TaskSpec { task: self, class_names: names.iter().map(|s| s.to_string()).collect(), normal_class: 0 }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task '{s}' (expected 1-1, 1-2, 2-1 or 2-2)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: TaskId,
    pub class_names: Vec<String>,
    pub normal_class: usize,
}

impl TaskSpec {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Task class of a raw event or record label.
    pub fn map_label(&self, raw: &str) -> Result<usize> {
        let unknown = || Error::Data(format!("label '{raw}' is not part of task {}", self.task));
        match self.task {
            TaskId::T1_1 => match raw {
                "N" => Ok(0),
                _ if EVENT_LABELS.contains(&raw) => Ok(1),
                _ => Err(unknown()),
            },
            TaskId::T1_2 => EVENT_LABELS.iter().position(|&l| l == raw).ok_or_else(unknown),
            TaskId::T2_1 => match raw {
                "N" => Ok(0),
                "CAS" | "DAS" | "CD" => Ok(1),
                "PQ" => Ok(2),
                _ => Err(unknown()),
            },
            TaskId::T2_2 => RECORD_LABELS.iter().position(|&l| l == raw).ok_or_else(unknown),
        }
    }

    pub fn map_labels<S: AsRef<str>>(&self, raw: &[S]) -> Result<Vec<usize>> {
        raw.iter().map(|r| self.map_label(r.as_ref())).collect()
    }
}

/// Counts with rows = truth and columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Collapses to `[normal, rest]`.
    pub fn binary(&self, normal: usize) -> ConfusionMatrix {
        let mut counts = vec![vec![0; 2]; 2];
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                counts[usize::from(t != normal)][usize::from(p != normal)] += n;
            }
        }
        ConfusionMatrix { counts }
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidInput(format!("{} truths vs {} predictions", truth.len(), pred.len())));
    }
    let mut counts = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidInput(format!("class pair ({t}, {p}) outside 0..{n_classes}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Sensitivity and specificity, with flags for empty denominators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeSp {
    pub se: f64,
    pub sp: f64,
    pub se_degenerate: bool,
    pub sp_degenerate: bool,
}

/// SP is the recall of the normal class; SE credits non-normal samples only
/// when predicted as their exact class.
pub fn se_sp(cm: &ConfusionMatrix, normal: usize) -> SeSp {
    let normal_total: u64 = cm.counts[normal].iter().sum();
    let (mut hit, mut total) = (0u64, 0u64);
    for (c, row) in cm.counts.iter().enumerate() {
        if c != normal {
            hit += row[c];
            total += row.iter().sum::<u64>();
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SeSp {
        se: ratio(hit, total),
        sp: ratio(cm.counts[normal][normal], normal_total),
        se_degenerate: total == 0,
        sp_degenerate: normal_total == 0,
    }
}

/// `(AS, HS, Score)`.
pub fn scores(se: f64, sp: f64) -> (f64, f64, f64) {
    let avg = (se + sp) / 2.0;
    let harmonic = if se + sp == 0.0 { 0.0 } else { 2.0 * se * sp / (se + sp) };
    (avg, harmonic, (avg + harmonic) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degenerate {
    pub se: bool,
    pub sp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: TaskId,
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class_recall: Vec<f64>,
    #[serde(rename = "SE")]
    pub se: f64,
    #[serde(rename = "SP")]
    pub sp: f64,
    #[serde(rename = "AS")]
    pub as_: f64,
    #[serde(rename = "HS")]
    pub hs: f64,
    #[serde(rename = "Score")]
    pub score: f64,
    pub degenerate: Degenerate,
}

impl ScoreReport {
    pub fn from_confusion(spec: &TaskSpec, confusion: ConfusionMatrix) -> Result<Self> {
        if confusion.n_classes() != spec.n_classes() {
            return Err(Error::InvalidInput(format!(
                "{}-class confusion for task {} with {} classes",
                confusion.n_classes(),
                spec.task,
                spec.n_classes()
            )));
        }
        let s = se_sp(&confusion, spec.normal_class);
        let (as_, hs, score) = scores(s.se, s.sp);
        let per_class_recall = confusion
            .counts
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        Ok(Self {
            task: spec.task,
            class_names: spec.class_names.clone(),
            confusion,
            per_class_recall,
            se: s.se,
            sp: s.sp,
            as_,
            hs,
            score,
            degenerate: Degenerate { se: s.se_degenerate, sp: s.sp_degenerate },
        })
    }

    pub fn from_predictions(spec: &TaskSpec, truth: &[usize], pred: &[usize]) -> Result<Self> {
        Self::from_confusion(spec, confusion(truth, pred, spec.n_classes())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("score report: {e}")))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode class probabilities, evaluated `chunk` samples at a time.
/// Inputs must already have the model's input dims.
pub fn predict<T: Real>(model: &Model<T>, inputs: &[&Spectrogram], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let (f, t) = model.config().input_dims;
    let classes = model.config().n_classes;
    let mut out = Vec::with_capacity(inputs.len());
    for group in inputs.chunks(chunk.max(1)) {
        let mut data = Vec::with_capacity(group.len() * f * t);
        for s in group {
            if s.dims() != (f, t) {
                return Err(Error::shape(
                    "predict",
                    format!("spectrogram {:?} for model input {:?}", s.dims(), (f, t)),
                ));
            }
            data.extend(s.values().iter().map(|&v| T::from_f64(v as f64)));
        }
        let probs = model.predict(Tensor::new(&[group.len(), 1, f, t], data)?)?;
        out.extend(probs.chunks(classes).map(|r| r.iter().map(|&p| p.to_f64()).collect()));
    }
    Ok(out)
}

/// Scores a model on inputs with known task classes.
pub fn evaluate_task<T: Real>(
    model: &Model<T>,
    inputs: &[&Spectrogram],
    truth: &[usize],
    task: TaskId,
) -> Result<(ScoreReport, Vec<Vec<f64>>)> {
    let spec = task.spec();
    if model.config().n_classes != spec.n_classes() {
        return Err(Error::InvalidConfig(format!(
            "model has {} outputs, task {task} has {} classes",
            model.config().n_classes,
            spec.n_classes()
        )));
    }
    let probs = predict(model, inputs, 16)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok((ScoreReport::from_predictions(&spec, truth, &pred)?, probs))
}

/// Prediction dump: sample id, truth, prediction, then one probability column
/// per class.
pub fn predictions_csv(spec: &TaskSpec, ids: &[String], truth: &[usize], probs: &[Vec<f64>]) -> String {
    let mut s = String::from("id,truth,prediction");
    for name in &spec.class_names {
        s.push_str(&format!(",p_{}", name.replace(' ', "_")));
    }
    s.push('\n');
    for ((id, &t), p) in ids.iter().zip(truth).zip(probs) {
        s.push_str(&format!("{id},{},{}", spec.class_names[t], spec.class_names[argmax(p)]));
        for v in p {
            s.push_str(&format!(",{v:.6}"));
        }
        s.push('\n');
    }
    s
}

/// Reads `id,truth,prediction,...` rows (class names) back into indices.
pub fn parse_predictions_csv(spec: &TaskSpec, text: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let index = |name: &str| {
        spec.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("class '{name}' is not part of task {}", spec.task)))
    };
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(Error::Format(format!("prediction line {}: expected id,truth,prediction", n + 1)));
        }
        truth.push(index(cols[1].trim())?);
        pred.push(index(cols[2].trim())?);
    }
    Ok((truth, pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_maps() {
        let t11 = TaskId::T1_1.spec();
        assert_eq!(t11.map_label("FC").unwrap(), 1);
        assert_eq!(t11.map_label("N").unwrap(), 0);
        assert_eq!(TaskId::T2_1.spec().map_label("CD").unwrap(), 1);
        assert_eq!(TaskId::T2_1.spec().map_label("PQ").unwrap(), 2);
        assert_eq!(TaskId::T2_2.spec().map_label("N").unwrap(), 0);
        assert_eq!(TaskId::T1_2.spec().map_label("B").unwrap(), 6);
        let err = t11.map_label("CAS").unwrap_err().to_string();
        assert!(err.contains("CAS"), "{err}");
        assert_eq!("2-2".parse::<TaskId>().unwrap(), TaskId::T2_2);
        assert!("3-1".parse::<TaskId>().is_err());
    }

    #[test]
    fn confusion_tally() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn binary_se_sp() {
        let cm = ConfusionMatrix { counts: vec![vec![80, 20], vec![30, 70]] };
        let s = se_sp(&cm, 0);
        assert!((s.sp - 0.8).abs() < 1e-12 && (s.se - 0.7).abs() < 1e-12);
        let none = ConfusionMatrix { counts: vec![vec![0, 0], vec![3, 2]] };
        let s = se_sp(&none, 0);
        assert_eq!(s.sp, 0.0);
        assert!(s.sp_degenerate && !s.se_degenerate);
    }

    #[test]
    fn published_rows() {
        let (a, h, s) = scores(0.81, 0.91);
        assert!((a - 0.86).abs() <= 0.005 && (h - 0.86).abs() <= 0.005 && (s - 0.86).abs() <= 0.005);
        // AS is exactly 0.625 here; the table rounds half up to 0.63.
        let (a, h, _) = scores(0.66, 0.59);
        let two_places = |x: f64| (x * 100.0).round() / 100.0;
        assert_eq!((two_places(a), two_places(h)), (0.63, 0.62));
        assert_eq!(scores(1.0, 1.0), (1.0, 1.0, 1.0));
        assert_eq!(scores(0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn always_normal_predictor() {
        let spec = TaskId::T1_1.spec();
        let r = ScoreReport::from_predictions(&spec, &[0, 0, 1, 1, 1], &[0; 5]).unwrap();
        assert_eq!((r.se, r.sp, r.as_, r.hs, r.score), (0.0, 1.0, 0.5, 0.0, 0.25));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn report_json_round_trip() {
        let spec = TaskId::T2_2.spec();
        let r = ScoreReport::from_predictions(&spec, &[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(r.score, 1.0);
        let back = ScoreReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().contains("\"task\": \"2-2\""));
    }

    #[test]
    fn csv_round_trip() {
        let spec = TaskId::T2_1.spec();
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]];
        let csv = predictions_csv(&spec, &["a".into(), "b".into()], &[0, 1], &probs);
        assert!(csv.starts_with("id,truth,prediction,p_Normal,p_Adventitious,p_Poor_Quality\n"));
        assert_eq!(parse_predictions_csv(&spec, &csv).unwrap(), (vec![0, 1], vec![0, 2]));
    }

    proptest! {
        #[test]
        fn metric_invariants(pairs in proptest::collection::vec((0usize..5, 0usize..5), 0..60)) {
            let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let spec = TaskId::T2_2.spec();
            let r = ScoreReport::from_predictions(&spec, &truth, &pred).unwrap();
            for v in [r.se, r.sp, r.as_, r.hs, r.score] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.hs <= r.as_ + 1e-12);
            prop_assert!((r.as_ - (r.se + r.sp) / 2.0).abs() < 1e-9);
            prop_assert!((r.score - (r.as_ + r.hs) / 2.0).abs() < 1e-9);

            let mut idx: Vec<usize> = (0..truth.len()).collect();
            idx.reverse();
            let t2: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
            let p2: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
            prop_assert_eq!(&ScoreReport::from_predictions(&spec, &t2, &p2).unwrap(), &r);
        }

        #[test]
        fn binary_collapse_keeps_sp(pairs in proptest::collection::vec((0usize..7, 0usize..7), 1..60)) {
            let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let fine = ScoreReport::from_predictions(&TaskId::T1_2.spec(), &truth, &pred).unwrap();
            let collapsed = se_sp(&fine.confusion.binary(0), 0);
            let t11 = TaskId::T1_1.spec();
            let map = |v: &[usize]| v.iter().map(|&c| t11.map_label(EVENT_LABELS[c]).unwrap()).collect::<Vec<_>>();
            let coarse = ScoreReport::from_predictions(&t11, &map(&truth), &map(&pred)).unwrap();
            prop_assert_eq!(collapsed.sp, coarse.sp);
            prop_assert_eq!(fine.sp, coarse.sp);
        }
    }
}
