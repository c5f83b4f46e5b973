//! Acceptance criteria, one test each. Every test prints a single
//! `criterion NN <name>: PASS|FAIL ...` line; run with `--nocapture` to see them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use supcon_core::augment::{AugPolicy, Strategy};
use supcon_core::data::{batch_iter, gen_synthetic_multidomain, read_bank, write_bank, BatchConfig};
use supcon_core::evalsuite::{
    mean_per_class_from_predictions, read_report, run_sweep, top1_from_predictions, ProbeTrainer, SweepGrid,
};
use supcon_core::losses::{
    cross_entropy, cross_entropy_value, supcon_loss, supcon_loss_value, CEBatch, Reduction, SupConBatch,
};
use supcon_core::models::{init_params, Arch, EncoderConfig, ModelConfig};
use supcon_core::ndtensor::{Tape, Tensor};
use supcon_core::trainer::{load_checkpoint, lr_at_epoch, save_checkpoint, ScheduleSpec};

type Verdict = Result<String, String>;

fn report(n: u32, name: &str, verdict: Verdict) {
    match verdict {
        Ok(detail) => println!("criterion {n:02} {name}: PASS ({detail})"),
        Err(why) => {
            println!("criterion {n:02} {name}: FAIL ({why})");
            panic!("criterion {n:02} {name} failed: {why}");
        }
    }
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn supcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supcon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn succeeded(o: &Output) -> Result<(), String> {
    ensure(o.status.success(), || {
        format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim())
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------------------
// Oracles, written independently of the library.

fn normalized(z: &[f64], rows: usize, d: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|i| {
            let row = &z[i * d..(i + 1) * d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Summed SupCon, straight from the definition with naive exponentials.
fn literal_supcon(z: &[f64], labels: &[usize], d: usize, tau: f64) -> f64 {
    let rows = labels.len();
    let z = normalized(z, rows, d);
    let mut total = 0.0;
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..rows).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let inner: f64 = positives.iter().map(|&p| ((dot(&z[i], &z[p]) / tau).exp() / denom).ln()).sum();
        total += -inner / positives.len() as f64;
    }
    total
}

/// NT-Xent: row `i` of `2N` rows has exactly one positive, its twin `(i + N) mod 2N`.
fn twin_positive(z: &[f64], n: usize, d: usize, tau: f64) -> f64 {
    let rows = 2 * n;
    let z = normalized(z, rows, d);
    (0..rows)
        .map(|i| {
            let twin = (i + n) % rows;
            let denom: f64 = (0..rows).filter(|&k| k != i).map(|k| (dot(&z[i], &z[k]) / tau).exp()).sum();
            -((dot(&z[i], &z[twin]) / tau).exp() / denom).ln()
        })
        .sum()
}

fn two_view_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let samples: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    samples.iter().chain(&samples).copied().collect()
}

fn random_z(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<f64> {
    (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn library_supcon(z: &[f64], labels: &[usize], d: usize, tau: f64) -> Result<f64, String> {
    let t = Tensor::new(vec![labels.len(), d], z.to_vec()).map_err(|e| e.to_string())?;
    let batch = SupConBatch::new(t, labels.to_vec(), tau).map_err(|e| e.to_string())?;
    supcon_loss_value(&batch, Reduction::Sum).map(|(v, _)| v).map_err(|e| e.to_string())
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_supcon_oracle_equivalence() {
    let verdict = (|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst = 0.0f64;
        for b in 0..200 {
            let n = rng.random_range(2..=8);
            let d = rng.random_range(2..=16);
            let tau = rng.random_range(0.04..=1.0);
            let classes = rng.random_range(1..=n);
            let labels = two_view_labels(&mut rng, n, classes);
            let z = random_z(&mut rng, 2 * n, d);
            let want = literal_supcon(&z, &labels, d, tau);
            let got = library_supcon(&z, &labels, d, tau)?;
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("batch {b}: {got} vs {want}"))?;
        }
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
        Ok(format!("200 batches, worst rel err {worst:.1e}, {elapsed:.2?}"))
    })();
    report(1, "SupCon oracle equivalence", verdict);
}

/// Worst `|analytic − numeric| / max(1, |analytic|, |numeric|)` over coordinates.
fn fd_error(x: &[f64], value: &dyn Fn(&[f64]) -> f64, analytic: &[f64]) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
    }
    worst
}

#[test]
fn criterion_02_gradient_checks() {
    let verdict = (|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut worst = 0.0f64;
        for t in 0..50 {
            let n = rng.random_range(2..=4);
            let d = rng.random_range(2..=8);
            let tau = rng.random_range(0.1..=1.0);
            let labels = two_view_labels(&mut rng, n, 2);
            let z = random_z(&mut rng, 2 * n, d);
            let mut tape = Tape::<f64>::new();
            let v = tape.leaf(Tensor::new(vec![2 * n, d], z.clone()).unwrap()).unwrap();
            let loss = supcon_loss(&mut tape, v, &labels, tau, Reduction::Sum).unwrap().loss;
            let grads = tape.backward(loss).unwrap();
            let analytic = grads.get(v).unwrap().data().to_vec();
            let value = |p: &[f64]| literal_supcon(p, &labels, d, tau);
            let err = fd_error(&z, &value, &analytic);
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("supcon instance {t}: {err:e}"))?;
        }
        for t in 0..50 {
            let n = rng.random_range(1..=6);
            let k = rng.random_range(2..=8);
            let s: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut tape = Tape::<f64>::new();
            let v = tape.leaf(Tensor::new(vec![n, k], s.clone()).unwrap()).unwrap();
            let loss = cross_entropy(&mut tape, v, &labels, Reduction::Sum).unwrap();
            let grads = tape.backward(loss).unwrap();
            let analytic = grads.get(v).unwrap().data().to_vec();
            let value = |p: &[f64]| -> f64 {
                (0..n)
                    .map(|i| {
                        let row = &p[i * k..(i + 1) * k];
                        let z: f64 = row.iter().map(|x| x.exp()).sum();
                        -(row[labels[i]].exp() / z).ln()
                    })
                    .sum()
            };
            let err = fd_error(&s, &value, &analytic);
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("cross-entropy instance {t}: {err:e}"))?;
        }
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
        Ok(format!("50+50 instances, worst err {worst:.1e}, {elapsed:.2?}"))
    })();
    report(2, "gradient checks", verdict);
}

#[test]
fn criterion_03_closed_form_values() {
    let verdict = (|| {
        for k in [2usize, 10, 100, 345] {
            let batch = CEBatch::new(Tensor::<f64>::full([4, k], -1.3), vec![0, 1, k - 1, k / 2]).unwrap();
            let v = cross_entropy_value(&batch, Reduction::Mean).unwrap();
            ensure((v - (k as f64).ln()).abs() <= 1e-12, || format!("uniform CE K={k}: {v}"))?;
        }
        let want = 4.0 * 3f64.ln();
        let same = [0.3, -0.2, 0.9].repeat(4);
        let v = library_supcon(&same, &[0, 1, 0, 1], 3, 0.13)?;
        ensure((v - want).abs() <= 1e-9, || format!("identical embeddings: {v}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let z = random_z(&mut rng, 4, 5);
        let v = library_supcon(&z, &[0, 1, 0, 1], 5, 1e6)?;
        ensure((v - want).abs() <= 1e-3, || format!("τ = 1e6: {v}"))?;
        Ok(format!("ln K for K in 2,10,100,345; 4 ln 3 = {want:.6}"))
    })();
    report(3, "closed-form loss values", verdict);
}

#[test]
fn criterion_04_unique_class_reduction() {
    let verdict = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for t in 0..100 {
            let n = rng.random_range(2..=8);
            let d = rng.random_range(2..=16);
            let tau = rng.random_range(0.05..=1.0);
            let labels: Vec<usize> = (0..n).chain(0..n).collect();
            let z = random_z(&mut rng, 2 * n, d);
            let want = twin_positive(&z, n, d, tau);
            let got = library_supcon(&z, &labels, d, tau)?;
            ensure(close(got, want, 1e-9), || format!("instance {t}: {got} vs {want}"))?;
        }
        Ok("100 instances".into())
    })();
    report(4, "unique-class reduction", verdict);
}

#[test]
fn criterion_05_scale_and_permutation_invariance() {
    let verdict = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let (n, d, tau) = (6, 8, 0.1);
        let labels = two_view_labels(&mut rng, n, 3);
        let z = random_z(&mut rng, 2 * n, d);
        let base = library_supcon(&z, &labels, d, tau)?;
        for c in [0.5, 3.0] {
            let scaled: Vec<f64> = z.iter().map(|x| x * c).collect();
            let v = library_supcon(&scaled, &labels, d, tau)?;
            ensure(close(v, base, 1e-9), || format!("scale {c}: {v} vs {base}"))?;
        }
        let mut order: Vec<usize> = (0..2 * n).collect();
        for t in 0..50 {
            order.shuffle(&mut rng);
            let pz: Vec<f64> = order.iter().flat_map(|&i| z[i * d..(i + 1) * d].to_vec()).collect();
            let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let v = library_supcon(&pz, &pl, d, tau)?;
            ensure(close(v, base, 1e-9), || format!("permutation {t}: {v} vs {base}"))?;
        }
        Ok("2 scales, 50 permutations".into())
    })();
    report(5, "scale and permutation invariance", verdict);
}

#[test]
fn criterion_06_schedule_exactness() {
    let verdict = (|| {
        let spec = ScheduleSpec {
            base_lr: 0.1,
            warmup_epochs: 10,
            decay_epochs: vec![250, 350],
            decay_rate: 0.1,
            total_epochs: 400,
        };
        for (epoch, want) in [(5, 0.05), (10, 0.1), (249, 0.1), (251, 0.01), (351, 0.001)] {
            let got = lr_at_epoch(&spec, epoch).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("lr({epoch}) = {got:e}, want {want:e}"))?;
        }
        Ok("lr(5,10,249,251,351) exact".into())
    })();
    report(6, "schedule exactness", verdict);
}

/// A probe whose validation scores come from a fixed table.
struct Injected {
    table: Vec<((f64, usize), f64)>,
    val_calls: Vec<(f64, usize)>,
    refits: Vec<(f64, usize, u64)>,
}

impl ProbeTrainer for Injected {
    fn val_accuracy(&mut self, lr: f64, batch_size: usize) -> supcon_core::Result<f64> {
        self.val_calls.push((lr, batch_size));
        Ok(self.table.iter().find(|(k, _)| *k == (lr, batch_size)).unwrap().1)
    }

    fn refit_test_metric(&mut self, lr: f64, batch_size: usize, seed: u64) -> supcon_core::Result<f64> {
        self.refits.push((lr, batch_size, seed));
        Ok(lr * 1000.0 + batch_size as f64)
    }
}

#[test]
fn criterion_07_protocol_exactness() {
    let verdict = (|| {
        let start = Instant::now();
        let grid = SweepGrid::default();
        let lrs = [0.1, 0.01, 0.001];
        let batches = [32, 64, 128];
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        for case in 0..20 {
            // Few distinct values so ties are common.
            let table: Vec<((f64, usize), f64)> = lrs
                .iter()
                .flat_map(|&lr| batches.iter().map(move |&b| (lr, b)))
                .map(|k| (k, rng.random_range(0..4) as f64 / 4.0))
                .collect();
            let best_val = table.iter().map(|(_, v)| *v).fold(f64::MIN, f64::max);
            let mut winners: Vec<(f64, usize)> = table.iter().filter(|(_, v)| *v == best_val).map(|(k, _)| *k).collect();
            winners.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want = winners[0];

            let mut probe = Injected { table: table.clone(), val_calls: vec![], refits: vec![] };
            let out = run_sweep(&mut probe, &grid, 17).map_err(|e| e.to_string())?;
            ensure(probe.val_calls.len() == 9, || format!("case {case}: {} probe trainings", probe.val_calls.len()))?;
            let mut visited = probe.val_calls.clone();
            visited.sort_by(|a, b| a.partial_cmp(b).unwrap());
            visited.dedup();
            ensure(visited.len() == 9, || format!("case {case}: grid points repeated"))?;
            ensure((out.best.lr, out.best.batch_size) == want, || {
                format!("case {case}: selected {:?}, want {want:?}", (out.best.lr, out.best.batch_size))
            })?;
            ensure(probe.refits == vec![(want.0, want.1, 17)], || format!("case {case}: refits {:?}", probe.refits))?;
            ensure(out.test_metric == want.0 * 1000.0 + want.1 as f64, || format!("case {case}: wrong test metric"))?;
        }
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
        Ok(format!("20 injected tables, 9 trainings each, ties to smaller lr then batch, {elapsed:.2?}"))
    })();
    report(7, "protocol exactness", verdict);
}

#[test]
fn criterion_08_metric_oracles() {
    let verdict = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for t in 0..100 {
            let k = rng.random_range(2..=10);
            let n = rng.random_range(k..=200);
            let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut confusion = vec![vec![0usize; k]; k];
            for (&l, &p) in labels.iter().zip(&preds) {
                confusion[l][p] += 1;
            }
            let want = (0..k)
                .map(|c| confusion[c][c] as f64 / confusion[c].iter().sum::<usize>() as f64)
                .sum::<f64>()
                / k as f64;
            let got = mean_per_class_from_predictions(&preds, &labels, k).map_err(|e| e.to_string())?.accuracy;
            ensure((got - want).abs() <= 1e-12, || format!("dataset {t}: {got} vs {want}"))?;

            let per = rng.random_range(1..=20);
            let balanced: Vec<usize> = (0..k * per).map(|i| i % k).collect();
            let bpreds: Vec<usize> = (0..k * per).map(|_| rng.random_range(0..k)).collect();
            let mpc = mean_per_class_from_predictions(&bpreds, &balanced, k).unwrap().accuracy;
            let top1 = top1_from_predictions(&bpreds, &balanced).unwrap();
            ensure((mpc - top1).abs() <= 1e-12, || format!("balanced {t}: {mpc} vs {top1}"))?;
        }
        Ok("100 confusion datasets + balanced sets".into())
    })();
    report(8, "metric oracles", verdict);
}

const TOY: &str = "\
[run]
seed = 5

[model]
width = 4
feature_dim = 8
head_dim = 8

[optimizer]
lr = 0.05
batch_size = 8

[schedule]
epochs = 2
warmup_epochs = 1
decay_epochs =

[augment]
strategy = simaugment

[eval]
learning_rates = 0.1
batch_sizes = 8
epochs = 3
runs = 2
";

fn gen(dir: &Path, name: &str, args: &[&str]) -> Result<PathBuf, String> {
    let out = dir.join(name);
    let mut full = vec!["gen-data"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", s(&out)]);
    succeeded(&supcon(&full))?;
    Ok(out)
}

fn augmented_epoch(bank: &supcon_core::data::ImageBank, policy: &AugPolicy, threads: usize, reverse: bool) -> Vec<(Vec<usize>, Vec<f32>)> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let mut indices: Vec<usize> = (0..bank.len()).collect();
    if reverse {
        indices.reverse();
    }
    let cfg = BatchConfig { batch_size: 7, views: 2, shuffle: false, drop_last: false, seed: 99 };
    pool.install(|| {
        batch_iter(bank, &indices, 3, &cfg, policy)
            .unwrap()
            .flat_map(|b| {
                let b = b.unwrap();
                let per = b.images.numel() / (2 * b.n_samples());
                let n = b.n_samples();
                // Regroup [views | views] into per-sample (view0, view1).
                (0..n)
                    .map(|i| {
                        let mut pix = b.images.data()[i * per..(i + 1) * per].to_vec();
                        pix.extend_from_slice(&b.images.data()[(n + i) * per..(n + i + 1) * per]);
                        (vec![b.indices[i]], pix)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    })
}

#[test]
fn criterion_09_determinism() {
    let verdict = (|| {
        let dir = tempfile::tempdir().unwrap();
        // (a) gen-data
        let args = ["--classes", "4", "--domains", "3", "--per", "20", "--seed", "42"];
        let a = gen(dir.path(), "a.mdib", &args)?;
        let b = gen(dir.path(), "b.mdib", &args)?;
        ensure(fs::read(&a).unwrap() == fs::read(&b).unwrap(), || "gen-data output differs".into())?;

        // (b) pretrain checkpoint
        let src = gen(dir.path(), "src.mdib", &["--classes", "2", "--domains", "2", "--per", "8", "--seed", "1"])?;
        let cfg = dir.path().join("toy.conf");
        fs::write(&cfg, format!("{TOY}\n[data]\nbank = {}\n", src.display())).unwrap();
        let mut ckpts = Vec::new();
        for run in ["r1", "r2"] {
            let out = dir.path().join(run);
            succeeded(&supcon(&["--threads", "2", "pretrain", "--config", s(&cfg), "--out", s(&out)]))?;
            ckpts.push(fs::read(out.join("checkpoint.sckp")).unwrap());
        }
        ensure(ckpts[0] == ckpts[1], || "checkpoints differ across runs".into())?;

        // (c) augmentation streams
        let bank = read_bank(&a).unwrap();
        let policy = AugPolicy::from_strategy(Strategy::SimAugment);
        let mut serial = augmented_epoch(&bank, &policy, 1, false);
        let parallel = augmented_epoch(&bank, &policy, 4, false);
        ensure(serial == parallel, || "1 vs 4 threads differ".into())?;
        let mut reversed = augmented_epoch(&bank, &policy, 3, true);
        serial.sort_by_key(|x| x.0[0]);
        reversed.sort_by_key(|x| x.0[0]);
        ensure(serial == reversed, || "per-sample views depend on visit order".into())?;
        Ok(format!("gen-data bytes, {} B checkpoint, {} augmented samples", ckpts[0].len(), serial.len()))
    })();
    report(9, "determinism", verdict);
}

#[test]
fn criterion_10_format_round_trips() {
    let verdict = (|| {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = gen_synthetic_multidomain(3, 2, 5, 10).unwrap();
        bank.assign_test_split(0.2, 10).unwrap();
        let p1 = dir.path().join("one.mdib");
        let p2 = dir.path().join("two.mdib");
        write_bank(&bank, &p1).unwrap();
        write_bank(&read_bank(&p1).map_err(|e| e.to_string())?, &p2).unwrap();
        ensure(fs::read(&p1).unwrap() == fs::read(&p2).unwrap(), || "MDIB bytes differ".into())?;

        let enc = EncoderConfig { arch: Arch::Deep, width: 4, feature_dim: 8, input_size: 32, in_channels: 3 };
        let mut bundle = init_params(&ModelConfig::supcon(enc), 10).unwrap();
        bundle.metadata.insert("loss".into(), "supcon".into());
        let c1 = dir.path().join("one.sckp");
        let c2 = dir.path().join("two.sckp");
        save_checkpoint(&bundle, &c1).unwrap();
        save_checkpoint(&load_checkpoint(&c1).map_err(|e| e.to_string())?, &c2).unwrap();
        ensure(fs::read(&c1).unwrap() == fs::read(&c2).unwrap(), || "SCKP bytes differ".into())?;
        Ok("MDIB and SCKP byte-identical".into())
    })();
    report(10, "format round-trips", verdict);
}

const SMOKE: &str = "\
[run]
seed = 42

[model]
arch = small
width = 8
feature_dim = 64
head_dim = 64

[loss]
temperature = 0.13

[optimizer]
lr = 0.2
batch_size = 64

[schedule]
epochs = 30
warmup_epochs = 3
decay_epochs =

[augment]
strategy = simaugment

[eval]
metric = top1
learning_rates = 0.1
batch_sizes = 64
epochs = 20
runs = 1
seed = 7
";

const SMOKE_THRESHOLD: f64 = 0.50;
const SMOKE_ENCODER_LIMIT: usize = 100_000;

#[test]
fn criterion_11_end_to_end_smoke() {
    let verdict = (|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let src = gen(dir.path(), "source.mdib", &["--classes", "4", "--domains", "3", "--per", "100", "--seed", "42", "--test-fraction", "0"])?;
        let down = gen(dir.path(), "downstream.mdib", &["--classes", "4", "--domains", "3", "--per", "50", "--seed", "7", "--test-fraction", "0.3"])?;
        let cfg = dir.path().join("smoke.conf");
        fs::write(&cfg, format!("{SMOKE}\n[data]\nbank = {}\n", src.display())).unwrap();
        let run = dir.path().join("pretrain");
        succeeded(&supcon(&["pretrain", "--config", s(&cfg), "--out", s(&run)]))?;
        let ckpt = run.join("checkpoint.sckp");
        let params = load_checkpoint(&ckpt)
            .map_err(|e| e.to_string())?
            .num_params(supcon_core::models::ParamGroup::Encoder);
        ensure(params < SMOKE_ENCODER_LIMIT, || format!("encoder has {params} parameters"))?;

        let eval = dir.path().join("eval");
        succeeded(&supcon(&["linear-eval", "--checkpoint", s(&ckpt), "--bank", s(&down), "--config", s(&cfg), "--out", s(&eval)]))?;
        let report = read_report(eval.join("report.csv")).map_err(|e| e.to_string())?;
        let top1 = report.rows[0].mean;
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
        ensure(top1 >= SMOKE_THRESHOLD, || format!("probe top-1 {top1:.4} < {SMOKE_THRESHOLD}"))?;
        Ok(format!("top-1 {top1:.4} (chance 0.25), {params} encoder params, {elapsed:.0?}"))
    })();
    report(11, "end-to-end smoke", verdict);
}

#[test]
fn criterion_12_temperature_ablation() {
    let verdict = (|| {
        let dir = tempfile::tempdir().unwrap();
        let src = gen(dir.path(), "src.mdib", &["--classes", "2", "--domains", "1", "--per", "8", "--seed", "2"])?;
        let down = gen(dir.path(), "down.mdib", &["--classes", "2", "--domains", "1", "--per", "10", "--seed", "3"])?;
        let cfg = dir.path().join("toy.conf");
        fs::write(&cfg, format!("{TOY}\n[data]\nbank = {}\n", src.display())).unwrap();
        let out = dir.path().join("ablate");
        succeeded(&supcon(&["ablate", "--knob", "temperature", "--config", s(&cfg), "--eval-bank", s(&down), "--out", s(&out)]))?;
        let rows = read_report(out.join("report.csv")).map_err(|e| e.to_string())?.rows;
        let models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
        let want = ["temperature=0.04", "temperature=0.07", "temperature=0.10", "temperature=0.13", "temperature=0.17"];
        ensure(models == want, || format!("rows {models:?}"))?;
        Ok("5 rows".into())
    })();
    report(12, "temperature ablation", verdict);
}
