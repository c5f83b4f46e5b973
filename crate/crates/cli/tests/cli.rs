use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supcon_core::data::read_bank;
use supcon_core::evalsuite::read_report;

fn supcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supcon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, classes: &str, per: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let o = supcon(&["gen-data", "--classes", classes, "--domains", "1", "--per", per, "--seed", seed, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const TOY: &str = "\
[run]
seed = 3

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
learning_rates = 0.1,0.01,0.001
batch_sizes = 4,8,16
epochs = 2
runs = 3
";

fn toy_config(dir: &Path, bank: &Path) -> PathBuf {
    let path = dir.join("toy.conf");
    fs::write(&path, format!("{TOY}\n[data]\nbank = {}\n", bank.display())).unwrap();
    path
}

#[test]
fn gen_data_counts_determinism_and_bad_domains() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mdib");
    let b = dir.path().join("b.mdib");
    for out in [&a, &b] {
        let o = supcon(&["gen-data", "--classes", "4", "--domains", "3", "--per", "100", "--seed", "42", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(read_bank(&a).unwrap().len(), 1200);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = supcon(&["gen-data", "--classes", "4", "--domains", "0", "--per", "10", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(1));
    let o = supcon(&["gen-data", "--classes", "4"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pretrain_writes_checkpoint_and_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let bank = gen(dir.path(), "src.mdib", "2", "12", "1");
    let cfg = toy_config(dir.path(), &bank);
    let run1 = dir.path().join("run1");
    let o = supcon(&["pretrain", "--config", s(&cfg), "--loss", "supcon", "--out", s(&run1)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run1.join("checkpoint.sckp").is_file());
    assert_eq!(fs::read_to_string(run1.join("history.csv")).unwrap().lines().count(), 3);

    let echo = run1.join("resolved.conf");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("temperature = 0.13"));
    assert!(text.contains("momentum = 0.9"));
    let run2 = dir.path().join("run2");
    let o = supcon(&["pretrain", "--config", s(&echo), "--out", s(&run2), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(run1.join("checkpoint.sckp")).unwrap(), fs::read(run2.join("checkpoint.sckp")).unwrap());
    assert_eq!(fs::read_to_string(run2.join("resolved.conf")).unwrap(), text);
}

#[test]
fn ce_echo_has_no_temperature_or_head() {
    let dir = tempfile::tempdir().unwrap();
    let bank = gen(dir.path(), "src.mdib", "2", "12", "1");
    let cfg = toy_config(dir.path(), &bank);
    let out = dir.path().join("ce");
    let o = supcon(&["pretrain", "--config", s(&cfg), "--loss", "ce", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("resolved.conf")).unwrap();
    assert!(!text.contains("temperature"));
    assert!(!text.contains("head_dim"));
    assert!(text.contains("# loss: ce"));
}

#[test]
fn pretrain_errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mdib");
    let cfg = toy_config(dir.path(), &missing);
    let o = supcon(&["pretrain", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "[optimizer]\nlearning_rate = 0.1\n").unwrap();
    let o = supcon(&["pretrain", "--config", s(&bad), "--out", s(&dir.path().join("y"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `learning_rate`"));

    fs::write(&bad, "[optimizer]\nlr = -1\n").unwrap();
    let o = supcon(&["pretrain", "--config", s(&bad), "--bank", s(&missing), "--out", s(&dir.path().join("z"))]);
    assert_eq!(o.status.code(), Some(1));

    let garbage = dir.path().join("garbage.mdib");
    fs::write(&garbage, b"MDIB\x01\x00").unwrap();
    let o = supcon(&["pretrain", "--config", s(&cfg), "--bank", s(&garbage), "--out", s(&dir.path().join("w"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn pretrained(dir: &Path) -> (PathBuf, PathBuf) {
    let src = gen(dir, "src.mdib", "2", "12", "1");
    let cfg = toy_config(dir, &src);
    let run = dir.join("run");
    let o = supcon(&["pretrain", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(0));
    (run.join("checkpoint.sckp"), cfg)
}

#[test]
fn linear_eval_reports_and_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = pretrained(dir.path());
    let down = gen(dir.path(), "down.mdib", "3", "10", "7");

    let out = dir.path().join("fixed");
    let o = supcon(&["linear-eval", "--checkpoint", s(&ckpt), "--bank", s(&down), "--config", s(&cfg), "--runs", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(out.join("report.csv")).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!((row.dataset.as_str(), row.model.as_str(), row.runs), ("down", "supcon", 5));
    assert!(row.std.is_some());
    assert_eq!((row.lr, row.batch), (Some(0.1), Some(4)));
    assert!(!out.join("sweep.csv").exists());

    let out = dir.path().join("sweep");
    let o = supcon(&["linear-eval", "--checkpoint", s(&ckpt), "--bank", s(&down), "--config", s(&cfg), "--sweep", "--runs", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("lr,batch,val_accuracy"));
    assert_eq!(trace.lines().count(), 10);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[4], "");
    assert_eq!(fields[5], "1");
}

#[test]
fn linear_eval_rejects_mismatched_bank() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = pretrained(dir.path());
    let odd = dir.path().join("odd.mdib");
    let mut bank = read_bank(gen(dir.path(), "tmp.mdib", "2", "4", "2")).unwrap();
    bank.channels = 1;
    for r in &mut bank.records {
        r.pixels.truncate(32 * 32);
    }
    supcon_core::data::write_bank(&bank, &odd).unwrap();
    let o = supcon(&["linear-eval", "--checkpoint", s(&ckpt), "--bank", s(&odd), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("encoder expects"));
}

#[test]
fn ablate_encoder_gives_two_rows_and_rejects_unknown_knob() {
    let dir = tempfile::tempdir().unwrap();
    let src = gen(dir.path(), "src.mdib", "2", "12", "1");
    let down = gen(dir.path(), "down.mdib", "2", "10", "7");
    let cfg = toy_config(dir.path(), &src);
    let small_grid = dir.path().join("small.conf");
    fs::write(
        &small_grid,
        fs::read_to_string(&cfg).unwrap().replace("learning_rates = 0.1,0.01,0.001", "learning_rates = 0.1").replace("batch_sizes = 4,8,16", "batch_sizes = 8"),
    )
    .unwrap();
    let out = dir.path().join("abl");
    let o = supcon(&["ablate", "--knob", "encoder", "--values", "small,deep", "--config", s(&small_grid), "--eval-bank", s(&down), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(out.join("report.csv")).unwrap();
    let models: Vec<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(models, ["encoder=small", "encoder=deep"]);
    assert!(out.join("encoder=deep").join("checkpoint.sckp").is_file());

    let o = supcon(&["ablate", "--knob", "width", "--config", s(&cfg), "--eval-bank", s(&down), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown knob"));
}

#[test]
fn verify_all_filter_and_mutant() {
    let o = supcon(&["verify"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for suite in ["oracle", "gradients", "closed-form", "schedule", "formats", "metrics"] {
        assert!(text.lines().any(|l| l.starts_with(suite) && l.contains("PASS")), "{suite}\n{text}");
    }

    let o = supcon(&["verify", "--suite", "schedule"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| !l.starts_with(' ')).count(), 1);
    assert!(text.starts_with("schedule"));

    let o = supcon(&["verify", "--suite", "oracle", "--mutant", "inside-log"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    assert_eq!(supcon(&["verify", "--suite", "speed"]).status.code(), Some(1));
}
