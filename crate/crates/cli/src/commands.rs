use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use supcon_core::data::{gen_synthetic_multidomain, read_bank, write_bank, ImageBank};
use supcon_core::evalsuite::{
    ablate, evaluate, write_report, write_sweep_trace, EvalBank, EvalConfig, Knob, MetricKind, ReportRow, RunReport,
};
use supcon_core::models::ModelBundle;
use supcon_core::trainer::{load_checkpoint, pretrain, TrainConfig};
use supcon_core::verify::{run_suite, Mutant, Suite};

use crate::config::{effective_grid, eval_to_text, resolve_eval, LossKind, PretrainSettings, RawConfig};
use crate::CliError;

/// Name of the fully resolved configuration echoed into every output directory.
pub const RESOLVED_CONFIG: &str = "resolved.conf";
pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "supcon", version, about = "Supervised contrastive pretraining and linear-probe transfer evaluation")]
pub struct Cli {
    /// Worker threads for augmentation and kernels (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-domain image bank.
    GenData(GenDataArgs),
    /// Pretrain an encoder with SupCon or cross-entropy.
    Pretrain(PretrainArgs),
    /// Linear evaluation of a pretrained checkpoint on a bank.
    LinearEval(LinearEvalArgs),
    /// Pretrain and evaluate once per value of one hyperparameter.
    Ablate(AblateArgs),
    /// Run the built-in numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub domains: usize,
    /// Images per class per domain.
    #[arg(long)]
    pub per: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of records tagged as the test split.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `supcon` or `ce`.
    #[arg(long, default_value = "supcon")]
    pub loss: String,
    /// Overrides `[data] bank`.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LinearEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Only the `[eval]` section is read.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Select lr and batch size over the configured grid.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Probe learning rate when not sweeping.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Probe batch size when not sweeping.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `temperature`, `augmentation` or `encoder`.
    #[arg(long)]
    pub knob: String,
    /// Comma-separated values; defaults to the knob's standard grid.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "supcon")]
    pub loss: String,
    /// Pretraining bank; overrides `[data] bank`.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Downstream bank, repeatable.
    #[arg(long = "eval-bank", required = true)]
    pub eval_banks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only this suite.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, hide = true, default_value = "none")]
    pub mutant: String,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => pretrain_cmd(&a),
        Command::LinearEval(a) => linear_eval_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Verify(a) => verify_cmd(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(CliError::Usage(format!("--test-fraction must be in [0, 1), got {}", a.test_fraction)));
    }
    let mut bank = gen_synthetic_multidomain(a.classes, a.domains, a.per, a.seed)?;
    if a.test_fraction > 0.0 {
        bank.assign_test_split(a.test_fraction, a.seed)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(supcon_core::Error::from)?;
    }
    write_bank(&bank, &a.out)?;
    println!(
        "wrote {} records ({} classes × {} domains × {}) to {}",
        bank.len(),
        a.classes,
        a.domains,
        a.per,
        a.out.display()
    );
    Ok(())
}

fn load_raw(path: Option<&Path>) -> Result<RawConfig, CliError> {
    match path {
        Some(p) => RawConfig::load(p),
        None => Ok(RawConfig::default()),
    }
}

fn open_bank(path: &Path) -> Result<ImageBank, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("bank {} does not exist", path.display())));
    }
    Ok(read_bank(path)?)
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

/// Resolve settings, attach the bank path and make it absolute for the echo.
fn pretrain_settings(config: Option<&Path>, loss: &str, bank: Option<&Path>) -> Result<PretrainSettings, CliError> {
    let raw = load_raw(config)?;
    let mut settings = PretrainSettings::resolve(&raw, loss.parse::<LossKind>()?)?;
    if let Some(b) = bank {
        settings.bank = Some(b.to_path_buf());
    }
    let bank = settings
        .bank
        .as_ref()
        .ok_or_else(|| CliError::Usage("no bank given: set `[data] bank` or pass --bank".into()))?;
    if !bank.is_file() {
        return Err(CliError::Usage(format!("bank {} does not exist", bank.display())));
    }
    settings.bank = Some(fs::canonicalize(bank).map_err(|e| CliError::Core(e.into()))?);
    Ok(settings)
}

fn run_pretrain(bank: &ImageBank, train: &TrainConfig, out: &Path) -> Result<ModelBundle, CliError> {
    let mut cfg = train.clone();
    cfg.out_dir = Some(out.to_path_buf());
    let result = pretrain(bank, &cfg)?;
    for r in &result.history {
        eprintln!("epoch {:>4}  lr {:<10}  loss {:.6}", r.epoch, r.lr, r.mean_loss);
    }
    Ok(result.bundle)
}

fn pretrain_cmd(a: &PretrainArgs) -> Result<(), CliError> {
    let settings = pretrain_settings(a.config.as_deref(), &a.loss, a.bank.as_deref())?;
    let bank = open_bank(settings.bank.as_deref().expect("resolved above"))?;
    make_dir(&a.out)?;
    write_text(&a.out.join(RESOLVED_CONFIG), &settings.to_text())?;
    run_pretrain(&bank, &settings.train, &a.out)?;
    println!("checkpoint written to {}", a.out.join(supcon_core::trainer::CHECKPOINT_FILE).display());
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().replace(',', "_")).unwrap_or_else(|| "bank".into())
}

fn linear_eval_cmd(a: &LinearEvalArgs) -> Result<(), CliError> {
    let raw = load_raw(a.config.as_deref())?;
    let mut cfg = resolve_eval(&raw)?;
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(m) = &a.metric {
        cfg.metric = m.parse::<MetricKind>()?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.sweep && (a.lr.is_some() || a.batch.is_some()) {
        return Err(CliError::Usage("--lr/--batch cannot be combined with --sweep".into()));
    }
    cfg.grid = effective_grid(&cfg, a.sweep, a.lr, a.batch);
    cfg.validate()?;

    if !a.checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let bundle = load_checkpoint(&a.checkpoint)?;
    let bank = open_bank(&a.bank)?;
    make_dir(&a.out)?;
    write_text(&a.out.join(RESOLVED_CONFIG), &eval_to_text(&cfg))?;

    let out = evaluate(&bundle, &bank, &cfg)?;
    if a.sweep {
        write_sweep_trace(&out.table, a.out.join(SWEEP_FILE))?;
    }
    let model = bundle.metadata.get("loss").cloned().unwrap_or_else(|| "model".into());
    let report = RunReport {
        rows: vec![ReportRow::from_runs(
            dataset_name(&a.bank),
            model,
            cfg.metric.as_str(),
            out.accuracies,
            out.best.lr,
            out.best.batch_size,
        )?],
    };
    write_report(&report, a.out.join(REPORT_FILE))?;
    print!("{}", report.to_csv());
    Ok(())
}

fn ablate_cmd(a: &AblateArgs) -> Result<(), CliError> {
    let knob: Knob = a.knob.parse()?;
    let values = match &a.values {
        Some(list) => knob.parse_values(list)?,
        None => knob.default_values(),
    };
    let settings = pretrain_settings(a.config.as_deref(), &a.loss, a.bank.as_deref())?;
    let eval_cfg: EvalConfig = resolve_eval(&load_raw(a.config.as_deref())?)?;
    // Reject bad values before any training starts.
    for v in &values {
        v.apply(&settings.train)?;
    }

    let bank = open_bank(settings.bank.as_deref().expect("resolved above"))?;
    let eval_banks = a.eval_banks.iter().map(|p| open_bank(p)).collect::<Result<Vec<_>, _>>()?;
    let named: Vec<EvalBank<'_>> = a
        .eval_banks
        .iter()
        .zip(&eval_banks)
        .map(|(p, b)| EvalBank {
            name: dataset_name(p),
            bank: b,
            config: eval_cfg.clone(),
        })
        .collect();

    make_dir(&a.out)?;
    write_text(
        &a.out.join(RESOLVED_CONFIG),
        &format!("{}\n{}", settings.to_text(), eval_to_text(&eval_cfg)),
    )?;
    let report = ablate(&settings.train, &values, &named, |label, cfg| {
        let dir = a.out.join(label);
        make_dir(&dir).map_err(into_core)?;
        let echo = PretrainSettings {
            loss: settings.loss,
            bank: settings.bank.clone(),
            train: cfg.clone(),
        };
        write_text(&dir.join(RESOLVED_CONFIG), &echo.to_text()).map_err(into_core)?;
        eprintln!("== {label}");
        run_pretrain(&bank, cfg, &dir).map_err(into_core)
    })?;
    write_report(&report, a.out.join(REPORT_FILE))?;
    print!("{}", report.to_csv());
    Ok(())
}

/// The ablation callback speaks the core error type.
fn into_core(e: CliError) -> supcon_core::Error {
    match e {
        CliError::Core(e) => e,
        other => supcon_core::Error::Validation(other.to_string()),
    }
}

fn verify_cmd(a: &VerifyArgs) -> Result<(), CliError> {
    let mutant: Mutant = a.mutant.parse()?;
    let suites = match &a.suite {
        Some(s) => vec![s.parse::<Suite>()?],
        None => Suite::ALL.to_vec(),
    };
    let mut failed = 0;
    for suite in suites {
        let r = run_suite(suite, mutant);
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{:<12} {status}  {} checks, {} failed, {:.0} ms",
            suite.as_str(),
            r.checks,
            r.failures.len(),
            r.elapsed.as_secs_f64() * 1e3
        );
        for f in r.failures.iter().take(5) {
            println!("    {f}");
        }
        if r.failures.len() > 5 {
            println!("    ... {} more", r.failures.len() - 5);
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
