//! Line-oriented run configuration: `[section]` headers and `key = value`
//! lines, `#` comments. Unset keys take the reference recipe's defaults for
//! the chosen loss; unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use supcon_core::augment::{AugPolicy, Strategy};
use supcon_core::evalsuite::{EvalConfig, RunProtocol, SweepGrid};
use supcon_core::models::EncoderConfig;
use supcon_core::trainer::{Objective, TrainConfig};

use crate::CliError;

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed"]),
    ("data", &["bank"]),
    ("model", &["arch", "width", "feature_dim", "head_dim", "input_size", "in_channels"]),
    ("loss", &["temperature"]),
    ("optimizer", &["lr", "momentum", "weight_decay", "batch_size"]),
    ("schedule", &["epochs", "warmup_epochs", "decay_epochs", "decay_rate", "checkpoint_every"]),
    ("augment", &["strategy"]),
    ("eval", &["metric", "learning_rates", "batch_sizes", "epochs", "momentum", "runs", "seed", "protocol"]),
];

/// Keys that only mean something for the contrastive objective.
const SUPCON_ONLY: &[&str] = &["loss.temperature", "model.head_dim"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SupCon,
    CrossEntropy,
}

impl FromStr for LossKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "supcon" => Ok(LossKind::SupCon),
            "ce" => Ok(LossKind::CrossEntropy),
            other => Err(CliError::Usage(format!("unknown loss `{other}` (expected supcon or ce)"))),
        }
    }
}

/// Parsed `section.key → (value, line)` pairs.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
    /// Directory relative paths are resolved against.
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| CliError::Config { line: line_no, detail };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                let known = KEYS.iter().find(|(s, _)| *s == name).map(|(s, _)| *s);
                section = Some(known.ok_or_else(|| err(format!("unknown section [{name}]")))?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| err(format!("`{key}` appears before any [section]")))?;
            let allowed = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(err(format!("unknown key `{key}` in [{sec}]")));
            }
            let full = format!("{sec}.{key}");
            if entries.insert(full.clone(), (value.to_string(), line_no)).is_some() {
                return Err(err(format!("`{full}` is set twice")));
            }
        }
        Ok(RawConfig {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| CliError::Config {
                line: *line,
                detail: format!("`{key}` has invalid value `{v}`"),
            }),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| CliError::Config {
                    line: *line,
                    detail: format!("`{key}` has invalid list `{v}`"),
                }),
        }
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|(v, _)| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(_, l)| *l)
    }
}

/// A fully resolved pretraining run.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSettings {
    pub loss: LossKind,
    pub bank: Option<PathBuf>,
    pub train: TrainConfig,
}

impl PretrainSettings {
    pub fn resolve(raw: &RawConfig, loss: LossKind) -> Result<Self, CliError> {
        if loss == LossKind::CrossEntropy {
            for key in SUPCON_ONLY.iter().filter(|k| raw.entries.contains_key(**k)) {
                eprintln!("note: `{key}` is ignored by the cross-entropy objective");
            }
        }
        let mut encoder = EncoderConfig::default();
        raw.set("model.arch", &mut encoder.arch)?;
        raw.set("model.width", &mut encoder.width)?;
        raw.set("model.feature_dim", &mut encoder.feature_dim)?;
        raw.set("model.input_size", &mut encoder.input_size)?;
        raw.set("model.in_channels", &mut encoder.in_channels)?;

        let mut train = match loss {
            LossKind::SupCon => TrainConfig::supcon(encoder),
            LossKind::CrossEntropy => TrainConfig::cross_entropy(encoder),
        };
        if let Objective::SupCon { temperature, head_dim } = &mut train.objective {
            raw.set("loss.temperature", temperature)?;
            raw.set("model.head_dim", head_dim)?;
        }
        raw.set("run.seed", &mut train.seed)?;
        raw.set("optimizer.lr", &mut train.schedule.base_lr)?;
        raw.set("optimizer.momentum", &mut train.momentum)?;
        raw.set("optimizer.weight_decay", &mut train.weight_decay)?;
        raw.set("optimizer.batch_size", &mut train.batch_size)?;
        raw.set("schedule.epochs", &mut train.schedule.total_epochs)?;
        raw.set("schedule.warmup_epochs", &mut train.schedule.warmup_epochs)?;
        raw.set("schedule.decay_rate", &mut train.schedule.decay_rate)?;
        raw.set("schedule.checkpoint_every", &mut train.checkpoint_every)?;
        if let Some(d) = raw.list("schedule.decay_epochs")? {
            train.schedule.decay_epochs = d;
        }
        if let Some(s) = raw.get::<Strategy>("augment.strategy")? {
            train.policy = AugPolicy::from_strategy(s);
        }
        train.validate()?;
        Ok(PretrainSettings {
            loss,
            bank: raw.path("data.bank"),
            train,
        })
    }

    /// Every setting, including defaults, in config-file syntax. The
    /// cross-entropy form has neither a temperature nor a head size.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let _ = writeln!(out, "# loss: {}", t.objective.loss_name());
        let _ = writeln!(out, "[run]\nseed = {}\n", t.seed);
        if let Some(bank) = &self.bank {
            let _ = writeln!(out, "[data]\nbank = {}\n", bank.display());
        }
        let e = &t.encoder;
        let _ = writeln!(out, "[model]\narch = {}\nwidth = {}\nfeature_dim = {}", e.arch, e.width, e.feature_dim);
        if let Objective::SupCon { head_dim, .. } = t.objective {
            let _ = writeln!(out, "head_dim = {head_dim}");
        }
        let _ = writeln!(out, "input_size = {}\nin_channels = {}\n", e.input_size, e.in_channels);
        if let Objective::SupCon { temperature, .. } = t.objective {
            let _ = writeln!(out, "[loss]\ntemperature = {temperature}\n");
        }
        let _ = writeln!(
            out,
            "[optimizer]\nlr = {}\nmomentum = {}\nweight_decay = {}\nbatch_size = {}\n",
            t.schedule.base_lr, t.momentum, t.weight_decay, t.batch_size
        );
        let _ = writeln!(
            out,
            "[schedule]\nepochs = {}\nwarmup_epochs = {}\ndecay_epochs = {}\ndecay_rate = {}\ncheckpoint_every = {}\n",
            t.schedule.total_epochs,
            t.schedule.warmup_epochs,
            join(&t.schedule.decay_epochs),
            t.schedule.decay_rate,
            t.checkpoint_every
        );
        let _ = writeln!(out, "[augment]\nstrategy = {}", t.policy.strategy());
        out
    }
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            loss: LossKind::SupCon,
            bank: None,
            train: TrainConfig::supcon(EncoderConfig::default()),
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Linear-evaluation settings from the `[eval]` section.
pub fn resolve_eval(raw: &RawConfig) -> Result<EvalConfig, CliError> {
    let mut cfg = EvalConfig::default();
    raw.set("eval.metric", &mut cfg.metric)?;
    raw.set("eval.epochs", &mut cfg.epochs)?;
    raw.set("eval.momentum", &mut cfg.momentum)?;
    raw.set("eval.runs", &mut cfg.runs)?;
    raw.set("eval.seed", &mut cfg.seed)?;
    if let Some(p) = raw.get::<String>("eval.protocol")? {
        cfg.protocol = parse_protocol(&p).ok_or_else(|| CliError::Config {
            line: raw.line_of("eval.protocol").unwrap_or(0),
            detail: format!("unknown protocol `{p}` (expected probe-seed or resplit)"),
        })?;
    }
    if let Some(lrs) = raw.list("eval.learning_rates")? {
        cfg.grid.learning_rates = lrs;
    }
    if let Some(bs) = raw.list("eval.batch_sizes")? {
        cfg.grid.batch_sizes = bs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_protocol(s: &str) -> Option<RunProtocol> {
    match s {
        "probe-seed" => Some(RunProtocol::ProbeSeed),
        "resplit" => Some(RunProtocol::Resplit),
        _ => None,
    }
}

fn protocol_name(p: RunProtocol) -> &'static str {
    match p {
        RunProtocol::ProbeSeed => "probe-seed",
        RunProtocol::Resplit => "resplit",
    }
}

pub fn eval_to_text(cfg: &EvalConfig) -> String {
    format!(
        "[eval]\nmetric = {}\nlearning_rates = {}\nbatch_sizes = {}\nepochs = {}\nmomentum = {}\nruns = {}\nseed = {}\nprotocol = {}\n",
        cfg.metric,
        join(&cfg.grid.learning_rates),
        join(&cfg.grid.batch_sizes),
        cfg.epochs,
        cfg.momentum,
        cfg.runs,
        cfg.seed,
        protocol_name(cfg.protocol)
    )
}

/// Grid actually used: the configured grid with `--sweep`; otherwise one
/// point, `lr`/`batch` if given, else the first configured value of each.
pub fn effective_grid(cfg: &EvalConfig, sweep: bool, lr: Option<f64>, batch: Option<usize>) -> SweepGrid {
    if sweep {
        return cfg.grid.clone();
    }
    SweepGrid::single(
        lr.unwrap_or(cfg.grid.learning_rates[0]),
        batch.unwrap_or(cfg.grid.batch_sizes[0]),
    )
}
