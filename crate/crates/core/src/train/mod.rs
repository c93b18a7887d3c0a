//! Optimisation of the KL-divergence objective with an L2 penalty on the
//! convolution and dense weights, using Adam.

mod adam;
mod checkpoint;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, MomentState, NamedTensor, MAGIC, VERSION};

use crate::augment::{center_crop, make_batch, AugmentConfig, BalancedSampler, Batch, LabeledSpectrogram};
use crate::autodiff::{Graph, Tensor, KL_CLAMP};
use crate::error::{Error, Result};
use crate::eval::{argmax, predict, ScoreReport, TaskSpec};
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Evaluations without a better validation Score before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 28,
            learning_rate: 1e-4,
            l2_lambda: 1e-4,
            seed: 0,
            eval_every: 1,
            patience: 20,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.eval_every > 0
            && self.patience > 0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.l2_lambda >= 0.0
            && self.l2_lambda.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration {self:?}")))
        }
    }
}

/// `sum_n sum_c y log(y / max(yhat, 1e-8)) + (lambda / 2) sum ||theta||^2`
/// with `0 log 0 = 0`, on plain row-major slices.
pub fn kl_loss(y: &[f64], yhat: &[f64], theta: &[&[f64]], lambda: f64) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidInput(format!("{} labels vs {} predictions", y.len(), yhat.len())));
    }
    if let Some(v) = y.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidInput(format!("negative label entry {v}")));
    }
    let kl: f64 =
        y.iter().zip(yhat).filter(|(&t, _)| t > 0.0).map(|(&t, &p)| t * (t.ln() - p.max(KL_CLAMP).ln())).sum();
    let l2: f64 = theta.iter().flat_map(|t| t.iter()).map(|v| v * v).sum();
    Ok(kl + 0.5 * lambda * l2)
}

/// Result of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Full objective before the update.
    pub loss: f64,
    /// KL part, summed over the batch.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    /// Mean objective over the epoch's batches.
    pub loss: f64,
    /// Mean KL per sample.
    pub kl_per_sample: f64,
}

/// One row of the metric history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: u64,
    pub split: String,
    /// Mean KL per sample.
    pub loss: f64,
    pub se: f64,
    pub sp: f64,
    pub as_: f64,
    pub hs: f64,
    pub score: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,split,loss,SE,SP,AS,HS,Score\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.split, r.loss, r.se, r.sp, r.as_, r.hs, r.score
        ));
    }
    s
}

/// Model, optimiser state and the epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model<f32>,
    adam: Adam<f32>,
    config: TrainConfig,
    epoch: u64,
}

fn class_of(data: &[LabeledSpectrogram]) -> Vec<usize> {
    data.iter().map(|s| argmax(&s.label)).collect()
}

impl Trainer {
    /// Fresh parameters initialised from `config.seed`.
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model, config.seed)?;
        let adam = Adam::new(model.params(), config.adam);
        Ok(Self { model, adam, config, epoch: 0 })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<f32> {
        &mut self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Forward, backward and one Adam update on a prepared batch.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        let classes = self.model.config().n_classes;
        if batch.n_classes != classes {
            return Err(Error::shape("train_step", format!("{} label columns for {classes} classes", batch.n_classes)));
        }
        if batch.labels.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("negative label entry".into()));
        }
        let lambda = self.config.l2_lambda;
        let (loss, kl, grads, updates) = {
            let mut g = Graph::<f32>::new();
            let params = self.model.bind(&mut g);
            let x = g.constant(Tensor::new(&batch.input_dims(), batch.inputs.iter().map(|&v| v as f32).collect())?);
            let out = self.model.forward_with(&mut g, &params, &x, Some(rng))?;
            if !out.probs.value().is_finite() {
                return Err(Error::NonFinite("model output".into()));
            }
            let y = Tensor::new(&[batch.n, classes], batch.labels.iter().map(|&v| v as f32).collect())?;
            let kl = g.kl_div(&out.probs, &y)?;
            let mut loss = kl.clone();
            if lambda > 0.0 {
                for (id, p) in self.model.params().iter() {
                    if p.decay && p.trainable {
                        let pen = g.l2_penalty(&params[id.0], lambda)?;
                        loss = g.add(&loss, &pen)?;
                    }
                }
            }
            if !loss.value().is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
            let grads = g.backward(&loss)?.for_store(self.model.params());
            (loss.data()[0] as f64, kl.data()[0] as f64, grads, out.bn_updates)
        };
        for ((_, p), g) in self.model.params().iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.model.apply_bn_updates(&updates);
        self.adam.update(self.model.params_mut(), &grads, self.config.learning_rate)?;
        for (_, p) in self.model.params().iter() {
            if !p.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter {} after update", p.name)));
            }
        }
        Ok(StepOutcome { loss, kl })
    }

    fn epoch_rng(&self, epoch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch);
        rng
    }

    /// One pass of `ceil(len / batch_size)` batches. Every random choice of
    /// the epoch comes from a stream derived from `(seed, epoch)`.
    pub fn run_epoch(&mut self, data: &[LabeledSpectrogram], augment: &AugmentConfig) -> Result<EpochSummary> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let next = self.epoch + 1;
        let mut rng = self.epoch_rng(next);
        let bs = self.config.batch_size;
        let n_batches = data.len().div_ceil(bs);
        let batches: Vec<Vec<usize>> = if augment.oversample {
            let sampler = BalancedSampler::new(&class_of(data), self.model.config().n_classes, bs, rng.next_u64())?;
            sampler.take(n_batches).collect()
        } else {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            order.chunks(bs).map(<[usize]>::to_vec).collect()
        };
        let (mut loss, mut kl, mut samples) = (0.0, 0.0, 0usize);
        for idx in &batches {
            let batch = make_batch(data, idx, augment, &mut rng)?;
            let step = self.train_step(&batch, &mut rng)?;
            loss += step.loss;
            kl += step.kl;
            samples += batch.n;
        }
        self.epoch = next;
        Ok(EpochSummary { epoch: next, loss: loss / batches.len() as f64, kl_per_sample: kl / samples as f64 })
    }

    /// Eval-mode probabilities on centre crops.
    pub fn predict(&self, data: &[LabeledSpectrogram], crop_bins: usize) -> Result<Vec<Vec<f64>>> {
        let crops = data.iter().map(|s| center_crop(&s.spec, crop_bins)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = crops.iter().collect();
        predict(&self.model, &refs, 16)
    }

    /// Fraction of samples whose argmax prediction matches the label argmax.
    pub fn accuracy(&self, data: &[LabeledSpectrogram], crop_bins: usize) -> Result<f64> {
        let probs = self.predict(data, crop_bins)?;
        let hits = probs.iter().zip(data).filter(|(p, s)| argmax(p) == argmax(&s.label)).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    /// Metrics and mean per-sample KL on a labelled split.
    pub fn evaluate(
        &self,
        data: &[LabeledSpectrogram],
        crop_bins: usize,
        task: &TaskSpec,
    ) -> Result<(ScoreReport, f64)> {
        let probs = self.predict(data, crop_bins)?;
        let truth = class_of(data);
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let mut kl = 0.0;
        for (p, s) in probs.iter().zip(data) {
            kl += kl_loss(&s.label, p, &[], 0.0)?;
        }
        let report = ScoreReport::from_predictions(task, &truth, &pred)?;
        Ok((report, kl / data.len().max(1) as f64))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let store = self.model.params();
        let mut tensors = Vec::new();
        let mut moments = Vec::new();
        for (k, (_, p)) in store.iter().enumerate() {
            tensors.push(NamedTensor {
                name: p.name.clone(),
                dims: p.value.dims().to_vec(),
                data: p.value.data().to_vec(),
            });
            if p.trainable {
                moments.push(MomentState {
                    name: p.name.clone(),
                    m: self.adam.m[k].clone(),
                    v: self.adam.v[k].clone(),
                });
            }
        }
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            tensors,
            optimizer_step: self.adam.step,
            moments,
            seed: self.config.seed,
            epoch: self.epoch,
        }
    }

    /// Rebuilds the trainer; every stored tensor must name a parameter of
    /// the configured model with matching dims, and every parameter must be
    /// present.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut train = ckpt.train.clone();
        train.seed = ckpt.seed;
        let mut trainer = Trainer::new(ckpt.model.clone(), train)?;
        let store = trainer.model.params_mut();
        let mut seen = vec![false; store.len()];
        for t in &ckpt.tensors {
            let id = store
                .id(&t.name)
                .ok_or_else(|| Error::Data(format!("checkpoint has unknown parameter '{}'", t.name)))?;
            let value = Tensor::new(&t.dims, t.data.clone())?;
            store.set(id, value).map_err(|e| Error::Data(format!("parameter '{}': {e}", t.name)))?;
            seen[id.0] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            let name = &store.get(crate::autodiff::ParamId(k)).name;
            return Err(Error::Data(format!("checkpoint lacks parameter '{name}'")));
        }
        for m in &ckpt.moments {
            let id = store
                .id(&m.name)
                .ok_or_else(|| Error::Data(format!("checkpoint has moments for unknown parameter '{}'", m.name)))?;
            let n = store.value(id).numel();
            if m.m.len() != n || m.v.len() != n || !store.get(id).trainable {
                return Err(Error::Data(format!("moment state of '{}' does not fit the parameter", m.name)));
            }
            trainer.adam.m[id.0] = m.m.clone();
            trainer.adam.v[id.0] = m.v.clone();
        }
        trainer.adam.step = ckpt.optimizer_step;
        trainer.epoch = ckpt.epoch;
        Ok(trainer)
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// One validation row per evaluation point.
    pub history: Vec<HistoryRow>,
    /// Best-Score state (the initial state when nothing was evaluated).
    pub best: Checkpoint,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
}

/// Trains for up to `config.epochs` more epochs, scoring the validation
/// split every `eval_every` epochs and keeping the best-Score state, which
/// is also written to `checkpoint` when given. Stops after `patience`
/// evaluations without improvement.
pub fn fit(
    trainer: &mut Trainer,
    train: &[LabeledSpectrogram],
    validation: &[LabeledSpectrogram],
    augment: &AugmentConfig,
    task: &TaskSpec,
    checkpoint: Option<&Path>,
) -> Result<FitOutcome> {
    let n_classes = trainer.model.config().n_classes;
    let mut present = vec![false; n_classes];
    for c in class_of(train) {
        present[c] = true;
    }
    if train.is_empty() || present.contains(&false) {
        return Err(Error::InvalidInput("training set must contain every class".into()));
    }
    if validation.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let mut out =
        FitOutcome { history: Vec::new(), best: trainer.checkpoint(), best_score: None, stopped_early: false };
    let mut since_best = 0;
    for _ in 0..trainer.config.epochs {
        trainer.run_epoch(train, augment)?;
        if trainer.epoch % trainer.config.eval_every as u64 != 0 {
            continue;
        }
        let (report, loss) = trainer.evaluate(validation, augment.crop_bins, task)?;
        out.history.push(HistoryRow {
            epoch: trainer.epoch,
            split: "validation".into(),
            loss,
            se: report.se,
            sp: report.sp,
            as_: report.as_,
            hs: report.hs,
            score: report.score,
        });
        if out.best_score.is_none_or(|b| report.score > b) {
            out.best_score = Some(report.score);
            out.best = trainer.checkpoint();
            since_best = 0;
            if let Some(path) = checkpoint {
                out.best.save(path)?;
            }
        } else {
            since_best += 1;
            if since_best >= trainer.config.patience {
                out.stopped_early = true;
                break;
            }
        }
    }
    if out.best_score.is_none() {
        if let Some(path) = checkpoint {
            out.best.save(path)?;
        }
    }
    Ok(out)
}
