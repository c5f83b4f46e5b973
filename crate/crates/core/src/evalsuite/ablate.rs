use std::fmt;
use std::str::FromStr;

use crate::augment::{AugPolicy, Strategy};
use crate::data::ImageBank;
use crate::error::{Error, Result};
use crate::models::{Arch, ModelBundle};
use crate::trainer::{Objective, TrainConfig};

use super::report::{ReportRow, RunReport};
use super::sweep::{evaluate, EvalConfig};

/// Temperatures of the ablation grid.
pub const TEMPERATURES: [f64; 5] = [0.04, 0.07, 0.10, 0.13, 0.17];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Knob {
    Temperature,
    Augmentation,
    Encoder,
}

impl Knob {
    pub fn as_str(self) -> &'static str {
        match self {
            Knob::Temperature => "temperature",
            Knob::Augmentation => "augmentation",
            Knob::Encoder => "encoder",
        }
    }

    pub fn default_values(self) -> Vec<KnobValue> {
        match self {
            Knob::Temperature => TEMPERATURES.iter().map(|&t| KnobValue::Temperature(t)).collect(),
            Knob::Augmentation => Strategy::ABLATION.iter().map(|&s| KnobValue::Augmentation(s)).collect(),
            Knob::Encoder => vec![KnobValue::Encoder(Arch::Small), KnobValue::Encoder(Arch::Deep)],
        }
    }

    /// Comma-separated values for this knob.
    pub fn parse_values(self, list: &str) -> Result<Vec<KnobValue>> {
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.parse_value(s))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Validation(format!("no values given for knob `{self}`")));
        }
        Ok(values)
    }

    fn parse_value(self, s: &str) -> Result<KnobValue> {
        Ok(match self {
            Knob::Temperature => {
                let t: f64 = s.parse().map_err(|_| Error::Validation(format!("bad temperature `{s}`")))?;
                KnobValue::Temperature(t)
            }
            Knob::Augmentation => KnobValue::Augmentation(s.parse()?),
            Knob::Encoder => KnobValue::Encoder(s.parse()?),
        })
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "temperature" => Ok(Knob::Temperature),
            "augmentation" => Ok(Knob::Augmentation),
            "encoder" => Ok(Knob::Encoder),
            other => Err(Error::Validation(format!(
                "unknown knob `{other}` (expected temperature, augmentation or encoder)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KnobValue {
    Temperature(f64),
    Augmentation(Strategy),
    Encoder(Arch),
}

impl KnobValue {
    pub fn knob(&self) -> Knob {
        match self {
            KnobValue::Temperature(_) => Knob::Temperature,
            KnobValue::Augmentation(_) => Knob::Augmentation,
            KnobValue::Encoder(_) => Knob::Encoder,
        }
    }

    /// `base` with only this knob changed.
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match *self {
            KnobValue::Temperature(t) => match &mut cfg.objective {
                Objective::SupCon { temperature, .. } => *temperature = t,
                Objective::CrossEntropy => {
                    return Err(Error::Validation("temperature ablation needs the supcon objective".into()))
                }
            },
            KnobValue::Augmentation(s) => cfg.policy = AugPolicy::from_strategy(s),
            KnobValue::Encoder(arch) => cfg.encoder.arch = arch,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model label used in report rows, e.g. `temperature=0.13`.
    pub fn label(&self) -> String {
        format!("{}={}", self.knob(), self)
    }
}

impl fmt::Display for KnobValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnobValue::Temperature(t) => write!(f, "{t:.2}"),
            KnobValue::Augmentation(s) => write!(f, "{s}"),
            KnobValue::Encoder(a) => write!(f, "{a}"),
        }
    }
}

/// A downstream dataset for evaluation.
pub struct EvalBank<'a> {
    pub name: String,
    pub bank: &'a ImageBank,
    pub config: EvalConfig,
}

/// Pretrain once per value with `pretrain_fn(label, config)`, then run the
/// full linear evaluation on every bank. Rows are value-major.
pub fn ablate<F>(base: &TrainConfig, values: &[KnobValue], eval_banks: &[EvalBank<'_>], mut pretrain_fn: F) -> Result<RunReport>
where
    F: FnMut(&str, &TrainConfig) -> Result<ModelBundle>,
{
    if values.is_empty() {
        return Err(Error::Validation("ablation needs at least one value".into()));
    }
    if eval_banks.is_empty() {
        return Err(Error::Validation("ablation needs at least one evaluation bank".into()));
    }
    let configs = values.iter().map(|v| v.apply(base)).collect::<Result<Vec<_>>>()?;
    let mut report = RunReport::default();
    for (value, cfg) in values.iter().zip(&configs) {
        let label = value.label();
        let bundle = pretrain_fn(&label, cfg)?;
        for eb in eval_banks {
            let out = evaluate(&bundle, eb.bank, &eb.config)?;
            report.rows.push(ReportRow::from_runs(
                eb.name.clone(),
                label.clone(),
                eb.config.metric.as_str(),
                out.accuracies,
                out.best.lr,
                out.best.batch_size,
            )?);
        }
    }
    Ok(report)
}
