//! Optimizer, learning-rate schedule, the pretraining and linear-evaluation
//! loops, and checkpoint/history files.

mod checkpoint;
mod optim;
#[cfg(test)]
mod tests;

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, history_csv, load_checkpoint, read_history, save_checkpoint,
    write_history, EpochRecord,
};
pub use optim::{lr_at_epoch, sgd_step, OptimState, ScheduleSpec};

use crate::augment::AugPolicy;
use crate::data::{batch_iter, BatchConfig, ImageBank};
use crate::error::{Error, Result};
use crate::evalsuite::{score, MetricKind};
use crate::evalsuite::metrics::argmax_rows;
use crate::losses::{cross_entropy, supcon_loss, Reduction};
use crate::models::{
    classifier_forward, encoder_forward, init_params, projection_forward, EncoderConfig, ModelBundle, ModelConfig,
    ParamGroup, DEFAULT_HEAD_DIM,
};
use crate::ndtensor::{Tape, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.sckp";
pub const HISTORY_FILE: &str = "history.csv";

/// Images per forward pass when extracting frozen features.
const FEATURE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    SupCon { temperature: f64, head_dim: usize },
    CrossEntropy,
}

impl Objective {
    pub fn stage(&self) -> &'static str {
        match self {
            Objective::SupCon { .. } => "pretrain_supcon",
            Objective::CrossEntropy => "pretrain_ce",
        }
    }

    pub fn loss_name(&self) -> &'static str {
        match self {
            Objective::SupCon { .. } => "supcon",
            Objective::CrossEntropy => "ce",
        }
    }
}

/// Everything a pretraining run needs; `schedule.total_epochs` is the epoch count.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub encoder: EncoderConfig,
    pub batch_size: usize,
    pub schedule: ScheduleSpec,
    pub momentum: f64,
    pub weight_decay: f64,
    pub policy: AugPolicy,
    pub seed: u64,
    /// Also checkpoint every this many epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Where checkpoints and history go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// The SupCon recipe: lr 0.1, batch 1024, 400 epochs, warmup 10, decay ×0.1
    /// at 250 and 350, τ = 0.13, momentum 0.9, weight decay 1e-4, SimAugment.
    pub fn supcon(encoder: EncoderConfig) -> Self {
        TrainConfig {
            objective: Objective::SupCon {
                temperature: 0.13,
                head_dim: DEFAULT_HEAD_DIM,
            },
            encoder,
            batch_size: 1024,
            schedule: ScheduleSpec {
                base_lr: 0.1,
                warmup_epochs: 10,
                decay_epochs: vec![250, 350],
                decay_rate: 0.1,
                total_epochs: 400,
            },
            momentum: 0.9,
            weight_decay: 1e-4,
            policy: AugPolicy::from_strategy(crate::augment::Strategy::SimAugment),
            seed: 0,
            checkpoint_every: 0,
            out_dir: None,
        }
    }

    /// The cross-entropy baseline: as [`TrainConfig::supcon`] but batch 512,
    /// decays at 150, 250 and 350, and no projection head.
    pub fn cross_entropy(encoder: EncoderConfig) -> Self {
        let mut cfg = Self::supcon(encoder);
        cfg.objective = Objective::CrossEntropy;
        cfg.batch_size = 512;
        cfg.schedule.decay_epochs = vec![150, 250, 350];
        cfg
    }

    pub fn epochs(&self) -> usize {
        self.schedule.total_epochs
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.schedule.validate()?;
        self.policy.validate()?;
        OptimState::new(self.schedule.base_lr, self.momentum, self.weight_decay)?;
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        if let Objective::SupCon { temperature, head_dim } = self.objective {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Validation(format!("temperature must be positive, got {temperature}")));
            }
            if head_dim == 0 {
                return Err(Error::Validation("head_dim must be positive".into()));
            }
        }
        Ok(())
    }
}

pub struct PretrainOutput {
    pub bundle: ModelBundle,
    pub history: Vec<EpochRecord>,
}

fn check_bank_matches(bank: &ImageBank, enc: &EncoderConfig) -> Result<()> {
    if (bank.channels, bank.height, bank.width) != (enc.in_channels, enc.input_size, enc.input_size) {
        return Err(Error::Validation(format!(
            "bank images are {}×{}×{} but the encoder expects {}×{}×{}",
            bank.channels, bank.height, bank.width, enc.in_channels, enc.input_size, enc.input_size
        )));
    }
    if bank.is_empty() {
        return Err(Error::Validation("bank has no records".into()));
    }
    Ok(())
}

/// Train encoder + head with SupCon on two-view batches, or encoder +
/// classifier with cross-entropy on single-view batches. Every record of
/// `bank` is used; the last partial batch of each epoch is dropped.
pub fn pretrain(bank: &ImageBank, config: &TrainConfig) -> Result<PretrainOutput> {
    config.validate()?;
    check_bank_matches(bank, &config.encoder)?;
    let (model_cfg, groups, views) = match config.objective {
        Objective::SupCon { head_dim, .. } => (
            ModelConfig {
                encoder: config.encoder.clone(),
                head_dim: Some(head_dim),
                n_classes: None,
            },
            [ParamGroup::Encoder, ParamGroup::Head],
            2,
        ),
        Objective::CrossEntropy => (
            ModelConfig::cross_entropy(config.encoder.clone(), bank.n_classes()),
            [ParamGroup::Encoder, ParamGroup::Classifier],
            1,
        ),
    };
    let mut bundle = init_params(&model_cfg, config.seed)?;
    let meta = &mut bundle.metadata;
    meta.insert("stage".into(), config.objective.stage().into());
    meta.insert("loss".into(), config.objective.loss_name().into());
    if let Objective::SupCon { temperature, .. } = config.objective {
        meta.insert("temperature".into(), temperature.to_string());
    }
    meta.insert("seed".into(), config.seed.to_string());
    meta.insert("batch_size".into(), config.batch_size.to_string());
    meta.insert("augment".into(), config.policy.strategy().to_string());

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }
    let indices: Vec<usize> = (0..bank.len()).collect();
    let batch_cfg = BatchConfig {
        batch_size: config.batch_size,
        views,
        shuffle: true,
        drop_last: true,
        seed: config.seed,
    };
    let mut state = OptimState::new(config.schedule.base_lr, config.momentum, config.weight_decay)?;
    let mut history = Vec::with_capacity(config.epochs());
    for epoch in 1..=config.epochs() {
        state.lr = lr_at_epoch(&config.schedule, epoch)?;
        let batches = batch_iter(bank, &indices, epoch as u64, &batch_cfg, &config.policy)?;
        if batches.n_batches() == 0 {
            return Err(Error::Validation(format!(
                "batch size {} exceeds the {} training records",
                config.batch_size,
                bank.len()
            )));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches {
            let batch = batch?;
            let mut tape = Tape::<f32>::new();
            let bound = bundle.bind(&mut tape, &groups)?;
            let x = tape.leaf(batch.images)?;
            let features = encoder_forward(&mut tape, &config.encoder, &bound, x)?;
            let loss = match config.objective {
                Objective::SupCon { temperature, .. } => {
                    let z = projection_forward(&mut tape, &bound, features)?;
                    supcon_loss(&mut tape, z, &batch.labels, temperature, Reduction::Mean)?.loss
                }
                Objective::CrossEntropy => {
                    let logits = classifier_forward(&mut tape, &bound, features)?;
                    cross_entropy(&mut tape, logits, &batch.labels, Reduction::Mean)?
                }
            };
            total += tape.value(loss).item()? as f64;
            count += 1;
            let grads = tape.backward(loss)?;
            sgd_step(&mut bundle, &bound.gradients(&tape, &grads), &mut state)?;
        }
        history.push(EpochRecord {
            epoch,
            lr: state.lr,
            mean_loss: total / count as f64,
        });
        bundle.metadata.insert("epochs_completed".into(), epoch.to_string());
        if let Some(dir) = &config.out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs() {
                save_checkpoint(&bundle, dir.join(format!("checkpoint_epoch{epoch:04}.sckp")))?;
            }
        }
    }
    if let Some(dir) = &config.out_dir {
        save_checkpoint(&bundle, dir.join(CHECKPOINT_FILE))?;
        write_history(&history, dir.join(HISTORY_FILE))?;
    }
    Ok(PretrainOutput { bundle, history })
}

/// Frozen-encoder features `[n×feature_dim]` of raw (unaugmented) images.
pub fn extract_features(bundle: &ModelBundle, bank: &ImageBank, indices: &[usize]) -> Result<Tensor<f32>> {
    check_bank_matches(bank, &bundle.config.encoder)?;
    let fd = bundle.config.encoder.feature_dim;
    let cfg = BatchConfig {
        batch_size: FEATURE_CHUNK,
        views: 1,
        shuffle: false,
        drop_last: false,
        seed: 0,
    };
    let mut data = Vec::with_capacity(indices.len() * fd);
    for batch in batch_iter(bank, indices, 0, &cfg, &AugPolicy::None)? {
        let batch = batch?;
        let mut tape = Tape::<f32>::new();
        let bound = bundle.bind(&mut tape, &[ParamGroup::Encoder])?;
        let x = tape.leaf(batch.images)?;
        let f = encoder_forward(&mut tape, &bundle.config.encoder, &bound, x)?;
        data.extend_from_slice(tape.value(f).data());
    }
    Tensor::new(vec![indices.len(), fd], data)
}

/// Linear-probe hyperparameters. Weight decay is always zero, the learning
/// rate is constant and inputs are never augmented.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.1,
            batch_size: 128,
            epochs: 50,
            momentum: 0.9,
            seed: 0,
        }
    }
}

fn gather_rows(features: &Tensor<f32>, rows: &[usize]) -> Result<Tensor<f32>> {
    let f = features.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * f);
    for &r in rows {
        data.extend_from_slice(&features.data()[r * f..(r + 1) * f]);
    }
    Tensor::new(vec![rows.len(), f], data)
}

/// Train a fresh linear classifier on fixed `features`. The returned bundle
/// is `pretrained` with its head discarded, encoder frozen and the trained
/// classifier attached.
pub fn train_probe(
    pretrained: &ModelBundle,
    features: &Tensor<f32>,
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ModelBundle> {
    let fd = pretrained.config.encoder.feature_dim;
    if features.shape() != [labels.len(), fd] {
        return Err(Error::shape(
            "train_probe",
            format!("features {:?} do not match {} labels × feature_dim {fd}", features.shape(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::invalid("probe training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Validation("probe batch size and epochs must be positive".into()));
    }
    let schedule = ScheduleSpec::constant(cfg.lr, cfg.epochs);
    schedule.validate()?;

    let mut bundle = pretrained.clone();
    bundle.discard_head();
    bundle.attach_classifier(n_classes, cfg.seed)?;
    bundle.freeze(ParamGroup::Encoder);
    bundle.metadata.insert("stage".into(), "linear_eval".into());

    let mut state = OptimState::new(cfg.lr, cfg.momentum, 0.0)?;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 1..=cfg.epochs {
        state.lr = lr_at_epoch(&schedule, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::<f32>::new();
            let bound = bundle.bind(&mut tape, &[ParamGroup::Classifier])?;
            let x = tape.leaf(gather_rows(features, chunk)?)?;
            let logits = classifier_forward(&mut tape, &bound, x)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = cross_entropy(&mut tape, logits, &batch_labels, Reduction::Mean)?;
            let grads = tape.backward(loss)?;
            sgd_step(&mut bundle, &bound.gradients(&tape, &grads), &mut state)?;
        }
    }
    Ok(bundle)
}

/// Classifier predictions for precomputed features.
pub fn predict(bundle: &ModelBundle, features: &Tensor<f32>) -> Result<Vec<usize>> {
    let mut tape = Tape::<f32>::new();
    let bound = bundle.bind(&mut tape, &[ParamGroup::Classifier])?;
    let x = tape.leaf(features.clone())?;
    let logits = classifier_forward(&mut tape, &bound, x)?;
    argmax_rows(tape.value(logits))
}

pub struct LinearEvalOutput {
    pub bundle: ModelBundle,
    pub train_accuracy: f64,
    pub test_metric: f64,
    pub test_predictions: Vec<usize>,
}

/// Fixed-feature linear evaluation: train a probe on `train` records of
/// `bank` and score it on `test` records with `metric`.
pub fn linear_eval(
    pretrained: &ModelBundle,
    bank: &ImageBank,
    train: &[usize],
    test: &[usize],
    metric: MetricKind,
    cfg: &ProbeConfig,
) -> Result<LinearEvalOutput> {
    let train_x = extract_features(pretrained, bank, train)?;
    let train_y = bank.labels(train);
    let bundle = train_probe(pretrained, &train_x, &train_y, bank.n_classes(), cfg)?;
    let train_accuracy = score(MetricKind::Top1, &predict(&bundle, &train_x)?, &train_y, bank.n_classes())?;
    let test_x = extract_features(pretrained, bank, test)?;
    let test_predictions = predict(&bundle, &test_x)?;
    let test_metric = score(metric, &test_predictions, &bank.labels(test), bank.n_classes())?;
    Ok(LinearEvalOutput {
        bundle,
        train_accuracy,
        test_metric,
        test_predictions,
    })
}
