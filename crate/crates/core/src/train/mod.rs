//! SGD training, evaluation, persistence and model comparison.

mod checkpoint;
mod compare;
mod metrics;
mod saliency;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use compare::{compare_models, Comparison, ComparisonRow};
pub use metrics::{history_csv, ConfusionMatrix, EpochStats};
pub use saliency::{saliency_map, saliency_with};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, splitmix64, AugmentConfig};
use crate::config::RunConfig;
use crate::dataset::{carve_validation, environment_split, DatasetManifest, LoadedSet, SampleRecord, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{argmax, forward, forward_on_tape, init_params, Mode, ModelSpec};
use crate::param::ParamSet;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Share of the training environments held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            augment: AugmentConfig::default(),
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        self.augment.validate()
    }

    /// Applies `epochs`, `batch_size`, `learning_rate`, `momentum`, `seed`,
    /// `val_fraction` and `augment.*` keys from a run config.
    pub fn overridden_by(&self, cfg: &RunConfig) -> Result<Self> {
        let out = TrainConfig {
            epochs: cfg.get_or("epochs", self.epochs)?,
            batch_size: cfg.get_or("batch_size", self.batch_size)?,
            optimizer: self.optimizer,
            learning_rate: cfg.get_or("learning_rate", self.learning_rate)?,
            momentum: cfg.get_or("momentum", self.momentum)?,
            seed: cfg.get_or("seed", self.seed)?,
            augment: self.augment.overridden_by(cfg)?,
            val_fraction: cfg.get_or("val_fraction", self.val_fraction)?,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Heavy-ball SGD: `v = momentum * v - lr * g; p += v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamSet<f32>, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate: learning_rate as f32,
            momentum: momentum as f32,
            velocity: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<f32>) {
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let grad = p.grad.data().to_vec();
            for ((w, vel), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vel = self.momentum * *vel - self.learning_rate * g;
                *w += *vel;
            }
        }
    }
}

/// In-memory training and validation images.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: LoadedSet,
    pub val: LoadedSet,
}

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed ^ salt) ^ epoch as u64))
}

/// Trains `params` in place and returns the per-epoch history.
pub fn fit(spec: &ModelSpec, params: &mut ParamSet<f32>, data: &TrainData, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if let Some(&l) = data.train.labels.iter().chain(&data.val.labels).find(|&&l| l >= spec.num_classes) {
        return Err(Error::LabelOutOfRange {
            label: l,
            classes: spec.num_classes,
        });
    }
    let missing: Vec<usize> = (0..spec.num_classes).filter(|c| !data.train.labels.contains(c)).collect();
    if !missing.is_empty() {
        warn!("classes {missing:?} have no training samples");
    }

    let mut sgd = Sgd::new(params, cfg.learning_rate, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 0x5348_5546));
        let mut dropout_rng = epoch_rng(cfg.seed, epoch, 0x4452_4f50);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) = data.train.batch(chunk)?;
            let batch = augment_batch(&batch, &cfg.augment, epoch, bi)?;
            let mut tape = Tape::new();
            let x = tape.input(batch);
            let out = forward_on_tape(&mut tape, spec, params, x, Mode::Train(&mut dropout_rng))?;
            let loss = tape.cross_entropy(out.logits, &labels)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: loss_value,
                });
            }
            let k = spec.num_classes;
            let logits = tape.value(out.logits).data();
            correct += labels.iter().enumerate().filter(|&(i, &l)| argmax(&logits[i * k..(i + 1) * k]) == l).count();
            loss_sum += loss_value * chunk.len() as f64;
            tape.backward(loss)?.write_to(params)?;
            sgd.step(params);
        }
        let n = data.train.len() as f64;
        let val_acc = if data.val.is_empty() {
            None
        } else {
            Some(evaluate_set(spec, params, &data.val)?.0)
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc,
        };
        info!(
            "epoch {}: loss {:.4} train acc {:.4} val acc {}",
            stats.epoch,
            stats.train_loss,
            stats.train_acc,
            val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(stats);
    }
    Ok(history)
}

/// Train/validation/test record lists for a held-out environment.
pub fn split_records(
    manifest: &DatasetManifest,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>)> {
    let halves = environment_split(manifest, split.test_environment)?;
    if halves.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let (train, val) = carve_validation(&halves.train, cfg.val_fraction, cfg.seed)?;
    Ok((train, val, halves.test))
}

/// Holds out `split.test_environment`, carves validation from the rest,
/// trains from a fresh initialization and returns the checkpoint.
pub fn train(spec: &ModelSpec, manifest: &DatasetManifest, split: &SplitSpec, cfg: &TrainConfig) -> Result<Checkpoint> {
    spec.validate()?;
    cfg.validate()?;
    if spec.num_classes != manifest.label_map.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "spec has {} classes, label map has {}",
            spec.num_classes,
            manifest.label_map.num_classes()
        )));
    }
    let (train_records, val_records, _) = split_records(manifest, split, cfg)?;
    let data = TrainData {
        train: LoadedSet::from_records(&train_records, spec.input_size)?,
        val: LoadedSet::from_records(&val_records, spec.input_size)?,
    };
    let mut params = init_params(spec, cfg.seed)?;
    let history = fit(spec, &mut params, &data, cfg)?;
    Ok(Checkpoint {
        spec: spec.clone(),
        params,
        label_map: manifest.label_map.clone(),
        train_config: cfg.clone(),
        split: Some(split.clone()),
        history,
    })
}

const EVAL_BATCH: usize = 32;

/// Accuracy and confusion matrix of `params` on a loaded set.
pub fn evaluate_set(spec: &ModelSpec, params: &ParamSet<f32>, set: &LoadedSet) -> Result<(f64, ConfusionMatrix)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty set".into()));
    }
    let k = spec.num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (batch, labels) = set.batch(chunk)?;
        let logits = forward(spec, params, &batch)?;
        for (row, &l) in logits.data().chunks(k).zip(&labels) {
            cm.add(l, argmax(row))?;
        }
    }
    Ok((cm.accuracy(), cm))
}

/// Loads `records` at the checkpoint's input size and evaluates them.
pub fn evaluate(cp: &Checkpoint, records: &[SampleRecord]) -> Result<(f64, ConfusionMatrix)> {
    if let Some(&l) = records.iter().filter_map(|r| r.mapped_class.as_ref()).find(|&&l| l >= cp.label_map.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label: l,
            classes: cp.label_map.num_classes(),
        });
    }
    let set = LoadedSet::from_records(records, cp.spec.input_size)?;
    evaluate_set(&cp.spec, &cp.params, &set)
}
