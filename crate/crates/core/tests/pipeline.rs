use supcon_core::data::{combine_domains, gen_synthetic_multidomain, ImageBank};
use supcon_core::evalsuite::{evaluate, read_report, write_report, EvalConfig, ReportRow, RunReport, SweepGrid};
use supcon_core::models::{Arch, EncoderConfig, ParamGroup};
use supcon_core::trainer::{load_checkpoint, pretrain, read_history, ScheduleSpec, TrainConfig};

fn encoder() -> EncoderConfig {
    EncoderConfig {
        arch: Arch::Small,
        width: 4,
        feature_dim: 8,
        input_size: 32,
        in_channels: 3,
    }
}

fn quick(mut cfg: TrainConfig, dir: &std::path::Path) -> TrainConfig {
    cfg.batch_size = 8;
    cfg.schedule = ScheduleSpec::constant(0.05, 2);
    cfg.seed = 11;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

fn downstream() -> ImageBank {
    let mut bank = gen_synthetic_multidomain(3, 2, 8, 21).unwrap();
    bank.assign_test_split(0.25, 21).unwrap();
    bank
}

#[test]
fn supcon_and_ce_pretrain_then_transfer_into_one_report() {
    let dir = tempfile::tempdir().unwrap();
    let source = combine_domains(&[
        gen_synthetic_multidomain(2, 1, 8, 1).unwrap(),
        gen_synthetic_multidomain(2, 1, 8, 2).unwrap(),
    ])
    .unwrap();
    // Same-named domains merge.
    assert_eq!((source.n_domains(), source.len()), (1, 32));

    let eval = EvalConfig {
        grid: SweepGrid::single(0.1, 8),
        epochs: 3,
        runs: 3,
        seed: 4,
        ..EvalConfig::default()
    };
    let mut second = gen_synthetic_multidomain(2, 2, 6, 30).unwrap();
    second.assign_test_split(0.3, 30).unwrap();
    let banks = [("shapes_a", downstream()), ("shapes_b", second)];

    let mut rows = Vec::new();
    for (name, cfg) in [("supcon", TrainConfig::supcon(encoder())), ("ce", TrainConfig::cross_entropy(encoder()))] {
        let run_dir = dir.path().join(name);
        let out = pretrain(&source, &quick(cfg, &run_dir)).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|h| h.mean_loss.is_finite()));
        assert_eq!(read_history(run_dir.join("history.csv")).unwrap(), out.history);

        let restored = load_checkpoint(run_dir.join("checkpoint.sckp")).unwrap();
        assert_eq!(restored.metadata.get("loss").map(String::as_str), Some(out.bundle.config.head_dim.map_or("ce", |_| "supcon")));
        assert_eq!(restored.num_params(ParamGroup::Encoder), out.bundle.num_params(ParamGroup::Encoder));

        for (dataset, bank) in &banks {
            let outcome = evaluate(&restored, bank, &eval).unwrap();
            assert_eq!(outcome.accuracies.len(), 3);
            assert!(outcome.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
            rows.push(ReportRow::from_runs(*dataset, name, "top1", outcome.accuracies, outcome.best.lr, outcome.best.batch_size).unwrap());
        }
    }

    let report = RunReport { rows };
    let path = dir.path().join("report.csv");
    write_report(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    // Two datasets per model, so each model gets a mean row.
    assert_eq!(text.lines().count(), 1 + 4 + 2);
    assert_eq!(read_report(&path).unwrap().to_csv(), report.to_csv());
}

#[test]
fn probe_seed_and_resplit_protocols_differ_only_in_training_count() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen_synthetic_multidomain(2, 1, 8, 5).unwrap();
    let out = pretrain(&source, &quick(TrainConfig::supcon(encoder()), dir.path())).unwrap();
    let bank = downstream();
    let base = EvalConfig {
        grid: SweepGrid {
            learning_rates: vec![0.1, 0.01],
            batch_sizes: vec![4],
        },
        epochs: 2,
        runs: 2,
        ..EvalConfig::default()
    };
    let fixed = evaluate(&out.bundle, &bank, &base).unwrap();
    assert_eq!(fixed.trainings, 2 + 2);
    let resplit = evaluate(
        &out.bundle,
        &bank,
        &EvalConfig {
            protocol: supcon_core::evalsuite::RunProtocol::Resplit,
            ..base.clone()
        },
    )
    .unwrap();
    assert_eq!(resplit.trainings, 2 * (2 + 1));
    assert_eq!(fixed.table, resplit.table);
    assert_eq!(fixed.accuracies[0], resplit.accuracies[0]);
}
