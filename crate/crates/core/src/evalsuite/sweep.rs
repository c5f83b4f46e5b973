use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{holdout_split, ImageBank, SplitSpec};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::ndtensor::Tensor;
use crate::trainer::{extract_features, predict, train_probe, ProbeConfig};

use super::metrics::{score, MetricKind};

/// Learning rates × batch sizes tried for the linear probe.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            learning_rates: vec![0.1, 0.01, 0.001],
            batch_sizes: vec![32, 64, 128],
        }
    }
}

impl SweepGrid {
    pub fn single(lr: f64, batch_size: usize) -> Self {
        SweepGrid {
            learning_rates: vec![lr],
            batch_sizes: vec![batch_size],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return Err(Error::Validation("sweep grid is empty".into()));
        }
        if let Some(lr) = self.learning_rates.iter().find(|&&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Validation(format!("sweep learning rate must be positive, got {lr}")));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::Validation("sweep batch sizes must be positive".into()));
        }
        Ok(())
    }

    /// Grid points in lr-major order, as listed.
    pub fn points(&self) -> Vec<(f64, usize)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.batch_sizes.iter().map(move |&b| (lr, b)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub lr: f64,
    pub batch_size: usize,
    pub val_accuracy: f64,
}

/// Highest validation accuracy; ties go to the smaller lr, then the smaller batch.
pub fn select_best(table: &[SweepPoint]) -> Result<SweepPoint> {
    let mut iter = table.iter();
    let mut best = *iter.next().ok_or_else(|| Error::Validation("sweep grid is empty".into()))?;
    for p in iter {
        let better = p.val_accuracy > best.val_accuracy
            || (p.val_accuracy == best.val_accuracy
                && (p.lr < best.lr || (p.lr == best.lr && p.batch_size < best.batch_size)));
        if better {
            best = *p;
        }
    }
    Ok(best)
}

/// What the sweep needs from a probe: a validation score per grid point and a
/// test score after refitting on train+val.
pub trait ProbeTrainer {
    fn val_accuracy(&mut self, lr: f64, batch_size: usize) -> Result<f64>;
    fn refit_test_metric(&mut self, lr: f64, batch_size: usize, seed: u64) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub table: Vec<SweepPoint>,
    pub best: SweepPoint,
    pub test_metric: f64,
}

/// One probe per grid point scored on val, selection, then a refit on
/// train+val with `seed` scored on test.
pub fn run_sweep(trainer: &mut dyn ProbeTrainer, grid: &SweepGrid, seed: u64) -> Result<SweepOutcome> {
    grid.validate()?;
    let table = grid
        .points()
        .into_iter()
        .map(|(lr, batch_size)| {
            Ok(SweepPoint {
                lr,
                batch_size,
                val_accuracy: trainer.val_accuracy(lr, batch_size)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&table)?;
    let test_metric = trainer.refit_test_metric(best.lr, best.batch_size, seed)?;
    Ok(SweepOutcome {
        table,
        best,
        test_metric,
    })
}

/// Probe trainer over frozen features of one bank, extracted once.
pub struct FeatureProbe<'a> {
    pretrained: &'a ModelBundle,
    n_classes: usize,
    metric: MetricKind,
    /// Template for epochs, momentum and the seed used during selection.
    base: ProbeConfig,
    train: (Tensor<f32>, Vec<usize>),
    val: (Tensor<f32>, Vec<usize>),
    train_val: (Tensor<f32>, Vec<usize>),
    test: (Tensor<f32>, Vec<usize>),
    pub trainings: usize,
}

impl<'a> FeatureProbe<'a> {
    pub fn new(
        pretrained: &'a ModelBundle,
        bank: &ImageBank,
        split: &SplitSpec,
        metric: MetricKind,
        base: ProbeConfig,
    ) -> Result<Self> {
        if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
            return Err(Error::invalid(format!(
                "sweep needs non-empty train/val/test, got {}/{}/{}",
                split.train.len(),
                split.val.len(),
                split.test.len()
            )));
        }
        let part = |idx: &[usize]| -> Result<(Tensor<f32>, Vec<usize>)> {
            Ok((extract_features(pretrained, bank, idx)?, bank.labels(idx)))
        };
        Ok(FeatureProbe {
            pretrained,
            n_classes: bank.n_classes(),
            metric,
            base,
            train: part(&split.train)?,
            val: part(&split.val)?,
            train_val: part(&split.train_val())?,
            test: part(&split.test)?,
            trainings: 0,
        })
    }

    fn fit(&mut self, on: Fit, lr: f64, batch_size: usize, seed: u64) -> Result<ModelBundle> {
        let (x, y) = match on {
            Fit::Train => &self.train,
            Fit::TrainVal => &self.train_val,
        };
        let cfg = ProbeConfig {
            lr,
            batch_size,
            seed,
            ..self.base.clone()
        };
        self.trainings += 1;
        train_probe(self.pretrained, x, y, self.n_classes, &cfg)
    }
}

#[derive(Clone, Copy)]
enum Fit {
    Train,
    TrainVal,
}

impl ProbeTrainer for FeatureProbe<'_> {
    fn val_accuracy(&mut self, lr: f64, batch_size: usize) -> Result<f64> {
        let probe = self.fit(Fit::Train, lr, batch_size, self.base.seed)?;
        let (x, y) = &self.val;
        score(MetricKind::Top1, &predict(&probe, x)?, y, self.n_classes)
    }

    fn refit_test_metric(&mut self, lr: f64, batch_size: usize, seed: u64) -> Result<f64> {
        let probe = self.fit(Fit::TrainVal, lr, batch_size, seed)?;
        let (x, y) = &self.test;
        score(self.metric, &predict(&probe, x)?, y, self.n_classes)
    }
}

/// What varies between the repeated evaluation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RunProtocol {
    /// One split and one selection; only the final probe's seed changes.
    #[default]
    ProbeSeed,
    /// Each run draws its own train/val split and repeats the selection.
    Resplit,
}

/// Linear-evaluation settings for one downstream bank.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub metric: MetricKind,
    pub grid: SweepGrid,
    pub epochs: usize,
    pub momentum: f64,
    pub runs: usize,
    pub seed: u64,
    pub protocol: RunProtocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metric: MetricKind::Top1,
            grid: SweepGrid::default(),
            epochs: ProbeConfig::default().epochs,
            momentum: ProbeConfig::default().momentum,
            runs: 5,
            seed: 0,
            protocol: RunProtocol::ProbeSeed,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.runs == 0 || self.epochs == 0 {
            return Err(Error::Validation("runs and probe epochs must be positive".into()));
        }
        Ok(())
    }

    fn probe(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            epochs: self.epochs,
            momentum: self.momentum,
            seed,
            ..ProbeConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    /// Test metric of each run, in run order.
    pub accuracies: Vec<f64>,
    /// Selection of the first run.
    pub best: SweepPoint,
    /// Validation table of the first run.
    pub table: Vec<SweepPoint>,
    pub trainings: usize,
}

/// Sweep, select and refit on `bank`, repeated `cfg.runs` times.
pub fn evaluate(pretrained: &ModelBundle, bank: &ImageBank, cfg: &EvalConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let run_seed = |r: usize| cfg.seed.wrapping_add(r as u64);
    match cfg.protocol {
        RunProtocol::ProbeSeed => {
            let split = holdout_split(bank, cfg.seed)?;
            let mut probe = FeatureProbe::new(pretrained, bank, &split, cfg.metric, cfg.probe(cfg.seed))?;
            let first = run_sweep(&mut probe, &cfg.grid, run_seed(0))?;
            let mut accuracies = vec![first.test_metric];
            for r in 1..cfg.runs {
                accuracies.push(probe.refit_test_metric(first.best.lr, first.best.batch_size, run_seed(r))?);
            }
            Ok(EvalOutcome {
                accuracies,
                best: first.best,
                table: first.table,
                trainings: probe.trainings,
            })
        }
        RunProtocol::Resplit => {
            let mut outcomes = Vec::with_capacity(cfg.runs);
            let mut trainings = 0;
            for r in 0..cfg.runs {
                let split = holdout_split(bank, run_seed(r))?;
                let mut probe = FeatureProbe::new(pretrained, bank, &split, cfg.metric, cfg.probe(run_seed(r)))?;
                outcomes.push(run_sweep(&mut probe, &cfg.grid, run_seed(r))?);
                trainings += probe.trainings;
            }
            let first = outcomes[0].clone();
            Ok(EvalOutcome {
                accuracies: outcomes.iter().map(|o| o.test_metric).collect(),
                best: first.best,
                table: first.table,
                trainings,
            })
        }
    }
}

pub fn sweep_trace_csv(table: &[SweepPoint]) -> String {
    let mut out = String::from("lr,batch,val_accuracy\n");
    for p in table {
        let _ = writeln!(out, "{},{},{:.4}", p.lr, p.batch_size, p.val_accuracy);
    }
    out
}

pub fn write_sweep_trace(table: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, sweep_trace_csv(table))?;
    Ok(())
}
