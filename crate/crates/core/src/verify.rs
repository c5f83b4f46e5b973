//! Self-checks run by `supcon verify`: loss oracles, gradient checks,
//! closed-form values, the schedule, file round-trips and metric oracles.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::gen_synthetic_multidomain;
use crate::error::{Error, Result};
use crate::evalsuite::{mean_per_class_from_predictions, top1_from_predictions};
use crate::losses::{
    cross_entropy, cross_entropy_value, supcon_loss, supcon_loss_bruteforce, supcon_loss_value, CEBatch, Reduction,
    SupConBatch,
};
use crate::models::{init_params, Arch, EncoderConfig, ModelConfig};
use crate::ndtensor::{grad_check, Tensor};
use crate::trainer::{checkpoint_bytes, checkpoint_from_bytes, lr_at_epoch, ScheduleSpec};

const ORACLE_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-5;
const GRAD_H: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Gradients,
    ClosedForm,
    Schedule,
    Formats,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Oracle,
        Suite::Gradients,
        Suite::ClosedForm,
        Suite::Schedule,
        Suite::Formats,
        Suite::Metrics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Gradients => "gradients",
            Suite::ClosedForm => "closed-form",
            Suite::Schedule => "schedule",
            Suite::Formats => "formats",
            Suite::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown suite `{s}`")))
    }
}

/// A deliberately wrong SupCon implementation swapped in to show the oracle
/// suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mutant {
    #[default]
    None,
    /// Averages positives inside the logarithm instead of outside.
    InsideLog,
}

impl FromStr for Mutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Mutant::None),
            "inside-log" => Ok(Mutant::InsideLog),
            other => Err(Error::Validation(format!("unknown mutant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: usize,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Checker {
    checks: usize,
    failures: Vec<String>,
}

impl Checker {
    fn new() -> Self {
        Checker {
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn close(&mut self, got: f64, want: f64, tol: f64, what: &str) {
        self.check((got - want).abs() <= tol, || format!("{what}: got {got:e}, want {want:e} (tol {tol:e})"));
    }

    fn ok<T>(&mut self, r: Result<T>, what: &str) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.checks += 1;
                self.failures.push(format!("{what}: {e}"));
                None
            }
        }
    }
}

pub fn run_suite(suite: Suite, mutant: Mutant) -> SuiteReport {
    let start = Instant::now();
    let mut c = Checker::new();
    match suite {
        Suite::Oracle => oracle(&mut c, mutant),
        Suite::Gradients => gradients(&mut c),
        Suite::ClosedForm => closed_form(&mut c, mutant),
        Suite::Schedule => schedule(&mut c),
        Suite::Formats => formats(&mut c),
        Suite::Metrics => metrics(&mut c),
    }
    SuiteReport {
        suite,
        checks: c.checks,
        failures: c.failures,
        elapsed: start.elapsed(),
    }
}

/// Two views per sample, `n` samples, labels drawn from `classes`.
fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize, tau: f64) -> SupConBatch<f64> {
    let base: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let labels = base.iter().chain(&base).copied().collect();
    let z = Tensor::from_fn([2 * n, d], |_| rng.random_range(-1.0..1.0));
    SupConBatch::new(z, labels, tau).expect("valid batch")
}

/// SupCon as the implementation under test computes it (summed).
fn loss_under_test(batch: &SupConBatch<f64>, mutant: Mutant) -> Result<f64> {
    match mutant {
        Mutant::None => Ok(supcon_loss_value(batch, Reduction::Sum)?.0),
        Mutant::InsideLog => inside_log(batch),
    }
}

fn inside_log(batch: &SupConBatch<f64>) -> Result<f64> {
    let (rows, d) = (batch.labels.len(), batch.projections.shape()[1]);
    let unit: Vec<Vec<f64>> = batch
        .projections
        .data()
        .chunks(d)
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let logit = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / batch.temperature;
    let mut total = 0.0;
    for i in 0..rows {
        let pos: Vec<usize> = (0..rows).filter(|&j| j != i && batch.labels[j] == batch.labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..rows).filter(|&k| k != i).map(|k| logit(i, k).exp()).sum();
        let avg = pos.iter().map(|&j| logit(i, j).exp() / denom).sum::<f64>() / pos.len() as f64;
        total -= avg.ln();
    }
    Ok(total)
}

/// Each view's only positive is its twin; written independently of the SupCon code.
fn twin_positive(z: &Tensor<f64>, tau: f64) -> f64 {
    let (rows, d) = (z.shape()[0], z.shape()[1]);
    let half = rows / 2;
    let unit: Vec<Vec<f64>> = z
        .data()
        .chunks(d)
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let cos = |a: usize, b: usize| unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum::<f64>();
    (0..rows)
        .map(|i| {
            let twin = (i + half) % rows;
            let all: f64 = (0..rows).filter(|&k| k != i).map(|k| (cos(i, k) / tau).exp()).sum();
            all.ln() - cos(i, twin) / tau
        })
        .sum()
}

fn oracle(c: &mut Checker, mutant: Mutant) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C0);
    for t in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let tau = rng.random_range(0.04..=1.0);
        let classes = rng.random_range(1..=n);
        let batch = random_batch(&mut rng, n, d, classes, tau);
        let (Some(got), Some(want)) = (
            c.ok(loss_under_test(&batch, mutant), "supcon"),
            c.ok(supcon_loss_bruteforce(&batch), "brute force"),
        ) else {
            continue;
        };
        c.close(got, want, ORACLE_TOL * want.abs().max(1.0), &format!("batch {t} vs brute force"));
    }

    for t in 0..100 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let tau = rng.random_range(0.04..=1.0);
        let labels: Vec<usize> = (0..n).chain(0..n).collect();
        let z = Tensor::from_fn([2 * n, d], |_| rng.random_range(-1.0..1.0));
        let want = twin_positive(&z, tau);
        let Some(batch) = c.ok(SupConBatch::new(z, labels, tau), "batch") else { continue };
        if let Some(got) = c.ok(loss_under_test(&batch, mutant), "supcon") {
            c.close(got, want, ORACLE_TOL * want.abs().max(1.0), &format!("unique-class batch {t} vs twin formula"));
        }
    }

    let batch = random_batch(&mut rng, 6, 8, 3, 0.1);
    let Some(base) = c.ok(loss_under_test(&batch, mutant), "supcon") else { return };
    for scale in [0.5, 3.0] {
        let mut scaled = batch.clone();
        scaled.projections.data_mut().iter_mut().for_each(|v| *v *= scale);
        if let Some(v) = c.ok(loss_under_test(&scaled, mutant), "supcon") {
            c.close(v, base, ORACLE_TOL, &format!("scale {scale}"));
        }
    }
    let rows = batch.labels.len();
    let d = batch.projections.shape()[1];
    for p in 0..50 {
        let mut perm: Vec<usize> = (0..rows).collect();
        perm.shuffle(&mut rng);
        let data: Vec<f64> = perm
            .iter()
            .flat_map(|&r| batch.projections.data()[r * d..(r + 1) * d].iter().copied())
            .collect();
        let labels = perm.iter().map(|&r| batch.labels[r]).collect();
        let permuted = SupConBatch {
            projections: Tensor::new([rows, d], data).expect("same size"),
            labels,
            temperature: batch.temperature,
        };
        if let Some(v) = c.ok(loss_under_test(&permuted, mutant), "supcon") {
            c.close(v, base, ORACLE_TOL, &format!("permutation {p}"));
        }
    }
}

fn gradients(c: &mut Checker) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    for t in 0..50 {
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=6);
        let tau = rng.random_range(0.1..=1.0);
        let batch = random_batch(&mut rng, n, d, 2, tau);
        let reduction = if t % 2 == 0 { Reduction::Sum } else { Reduction::Mean };
        let err = grad_check(
            |tape, v| Ok(supcon_loss(tape, v, &batch.labels, batch.temperature, reduction)?.loss),
            &batch.projections,
            GRAD_H,
        );
        if let Some(err) = c.ok(err, "supcon grad_check") {
            c.check(err <= GRAD_TOL, || format!("supcon instance {t}: gradient error {err:e}"));
        }
    }
    for t in 0..50 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(2..=8);
        let logits = Tensor::from_fn([n, k], |_| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let reduction = if t % 2 == 0 { Reduction::Sum } else { Reduction::Mean };
        let err = grad_check(|tape, v| cross_entropy(tape, v, &labels, reduction), &logits, GRAD_H);
        if let Some(err) = c.ok(err, "cross-entropy grad_check") {
            c.check(err <= GRAD_TOL, || format!("cross-entropy instance {t}: gradient error {err:e}"));
        }
    }
}

fn closed_form(c: &mut Checker, mutant: Mutant) {
    for k in [2, 10, 100, 345] {
        let logits = Tensor::<f64>::full([3, k], 0.7);
        let v = CEBatch::new(logits, vec![0, 1, k - 1]).and_then(|b| cross_entropy_value(&b, Reduction::Mean));
        if let Some(v) = c.ok(v, "cross-entropy") {
            c.close(v, (k as f64).ln(), 1e-12, &format!("uniform CE, K = {k}"));
        }
    }
    let ln3x4 = 4.0 * 3f64.ln();
    let identical = |tau: f64| SupConBatch::new(Tensor::<f64>::full([4, 3], 0.5), vec![0, 1, 0, 1], tau);
    if let Some(v) = c.ok(identical(0.1).and_then(|b| loss_under_test(&b, mutant)), "supcon") {
        c.close(v, ln3x4, 1e-9, "identical embeddings");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1A7);
    let spread = SupConBatch::new(Tensor::from_fn([4, 3], |_| rng.random_range(-1.0..1.0)), vec![0, 1, 0, 1], 1e6);
    if let Some(v) = c.ok(spread.and_then(|b| loss_under_test(&b, mutant)), "supcon") {
        c.close(v, ln3x4, 1e-3, "τ = 1e6 flattening");
    }
}

fn schedule(c: &mut Checker) {
    let spec = ScheduleSpec {
        base_lr: 0.1,
        warmup_epochs: 10,
        decay_epochs: vec![250, 350],
        decay_rate: 0.1,
        total_epochs: 400,
    };
    for (epoch, want) in [(1, 0.01), (5, 0.05), (10, 0.1), (11, 0.1), (249, 0.1), (250, 0.01), (251, 0.01), (350, 0.001), (351, 0.001), (400, 0.001)] {
        if let Some(lr) = c.ok(lr_at_epoch(&spec, epoch), "lr_at_epoch") {
            c.check(lr == want, || format!("lr({epoch}) = {lr:e}, want exactly {want:e}"));
        }
    }
    let ce = ScheduleSpec {
        decay_epochs: vec![150, 250, 350],
        ..spec
    };
    for (epoch, want) in [(149, 0.1), (150, 0.01), (251, 0.001), (351, 0.0001)] {
        if let Some(lr) = c.ok(lr_at_epoch(&ce, epoch), "lr_at_epoch") {
            c.check(lr == want, || format!("cross-entropy lr({epoch}) = {lr:e}, want exactly {want:e}"));
        }
    }
    let bad = ScheduleSpec {
        decay_epochs: vec![5],
        ..ce
    };
    c.check(bad.validate().is_err(), || "decay inside warmup was accepted".into());
}

fn formats(c: &mut Checker) {
    let bank = gen_synthetic_multidomain(3, 2, 4, 9).and_then(|mut b| {
        b.assign_test_split(0.25, 9)?;
        Ok(b)
    });
    if let Some(bank) = c.ok(bank, "gen_synthetic_multidomain") {
        let round = bank.to_bytes().and_then(|b1| {
            let b2 = crate::data::ImageBank::from_bytes(&b1)?.to_bytes()?;
            Ok((b1, b2))
        });
        if let Some((b1, b2)) = c.ok(round, "MDIB round trip") {
            c.check(b1 == b2, || "MDIB write→read→write differs".into());
        }
    }
    let enc = EncoderConfig {
        arch: Arch::Small,
        width: 4,
        feature_dim: 8,
        input_size: 32,
        in_channels: 3,
    };
    let bundle = init_params(&ModelConfig::supcon(enc), 3).map(|mut b| {
        b.metadata.insert("stage".into(), "pretrain_supcon".into());
        b
    });
    if let Some(bundle) = c.ok(bundle, "init_params") {
        let round = checkpoint_bytes(&bundle).and_then(|b1| {
            let back = checkpoint_from_bytes(&b1)?;
            Ok((b1, checkpoint_bytes(&back)?, back == bundle))
        });
        if let Some((b1, b2, same)) = c.ok(round, "SCKP round trip") {
            c.check(b1 == b2, || "SCKP write→read→write differs".into());
            c.check(same, || "SCKP read does not reproduce the bundle".into());
        }
        let mut cut = checkpoint_bytes(&bundle).unwrap_or_default();
        cut.truncate(cut.len() / 2);
        c.check(
            matches!(checkpoint_from_bytes(&cut), Err(Error::Truncated { .. })),
            || "truncated SCKP was not reported as truncated".into(),
        );
    }
}

fn metrics(c: &mut Checker) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
    for t in 0..100 {
        let k = rng.random_range(2..=12);
        let n = rng.random_range(1..=300);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut hits = vec![0usize; k];
        let mut totals = vec![0usize; k];
        for (&p, &l) in preds.iter().zip(&labels) {
            totals[l] += 1;
            hits[l] += usize::from(p == l);
        }
        let present: Vec<f64> = (0..k).filter(|&j| totals[j] > 0).map(|j| hits[j] as f64 / totals[j] as f64).collect();
        let want = present.iter().sum::<f64>() / present.len() as f64;
        if let Some(m) = c.ok(mean_per_class_from_predictions(&preds, &labels, k), "mean_per_class") {
            c.close(m.accuracy, want, 1e-12, &format!("confusion set {t}"));
        }

        let per = rng.random_range(1..=20);
        let balanced: Vec<usize> = (0..k * per).map(|i| i % k).collect();
        let guesses: Vec<usize> = balanced.iter().map(|&l| if rng.random_bool(0.5) { l } else { rng.random_range(0..k) }).collect();
        let both = mean_per_class_from_predictions(&guesses, &balanced, k)
            .and_then(|m| Ok((m.accuracy, top1_from_predictions(&guesses, &balanced)?)));
        if let Some((m, top1)) = c.ok(both, "balanced metrics") {
            c.close(m, top1, 1e-12, &format!("balanced set {t}"));
        }
    }
}
