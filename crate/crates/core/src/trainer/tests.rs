use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::augment::Strategy;
use crate::data::{gen_synthetic_multidomain, Record, SplitTag};
use crate::losses::{cross_entropy_value, CEBatch};
use crate::models::Arch;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        arch: Arch::Small,
        width: 4,
        feature_dim: 16,
        input_size: 32,
        in_channels: 3,
    }
}

fn toy_supcon(epochs: usize, batch: usize) -> TrainConfig {
    let mut cfg = TrainConfig::supcon(tiny_encoder());
    cfg.objective = Objective::SupCon {
        temperature: 0.13,
        head_dim: 16,
    };
    cfg.batch_size = batch;
    cfg.schedule = ScheduleSpec {
        base_lr: 0.05,
        warmup_epochs: 0,
        decay_epochs: vec![],
        decay_rate: 0.1,
        total_epochs: epochs,
    };
    cfg.seed = 42;
    cfg
}

fn recipe_schedule() -> ScheduleSpec {
    ScheduleSpec {
        base_lr: 0.1,
        warmup_epochs: 10,
        decay_epochs: vec![250, 350],
        decay_rate: 0.1,
        total_epochs: 400,
    }
}

#[test]
fn schedule_examples_are_exact() {
    let s = recipe_schedule();
    for (epoch, lr) in [(5, 0.05), (10, 0.1), (11, 0.1), (249, 0.1), (250, 0.01), (251, 0.01), (300, 0.01), (351, 0.001), (400, 0.001)] {
        assert_eq!(lr_at_epoch(&s, epoch).unwrap(), lr, "epoch {epoch}");
    }
    assert_eq!(lr_at_epoch(&s, 1).unwrap(), 0.01);
    let flat = ScheduleSpec::constant(0.3, 50);
    assert!((1..=50).all(|e| lr_at_epoch(&flat, e).unwrap() == 0.3));
    let warm = ScheduleSpec {
        decay_epochs: vec![],
        ..recipe_schedule()
    };
    assert!((10..=400).all(|e| lr_at_epoch(&warm, e).unwrap() == 0.1));
}

#[test]
fn schedule_rejects_bad_input() {
    let s = recipe_schedule();
    assert!(lr_at_epoch(&s, 0).is_err());
    assert!(lr_at_epoch(&s, 401).is_err());
    for decays in [vec![350, 250], vec![10, 20], vec![250, 250]] {
        let bad = ScheduleSpec {
            decay_epochs: decays,
            ..recipe_schedule()
        };
        assert!(bad.validate().is_err());
    }
}

fn one_param_bundle(value: Vec<f32>) -> ModelBundle {
    let mut b = init_params(&ModelConfig::cross_entropy(tiny_encoder(), 2), 0).unwrap();
    let idx = b.params().iter().position(|p| p.name == "classifier.bias").unwrap();
    b.params_mut()[idx].value = Tensor::new(vec![value.len()], value).unwrap();
    b
}

fn bias_index(b: &ModelBundle) -> usize {
    b.params().iter().position(|p| p.name == "classifier.bias").unwrap()
}

#[test]
fn vanilla_sgd_step() {
    let mut b = one_param_bundle(vec![1.0, -2.0]);
    let i = bias_index(&b);
    let mut state = OptimState::new(0.5, 0.0, 0.0).unwrap();
    let g = Tensor::new(vec![2], vec![0.25, 4.0]).unwrap();
    sgd_step(&mut b, &[(i, g)], &mut state).unwrap();
    assert_eq!(b.params()[i].value.data(), &[1.0 - 0.5 * 0.25, -2.0 - 0.5 * 4.0]);

    let before = b.clone();
    sgd_step(&mut b, &[(i, Tensor::zeros([2]))], &mut state).unwrap();
    assert_eq!(b, before);
}

#[test]
fn momentum_recurrence() {
    let mut b = one_param_bundle(vec![0.0]);
    let i = bias_index(&b);
    let (lr, g) = (0.1f32, 2.0f32);
    let mut state = OptimState::new(lr as f64, 0.9, 0.0).unwrap();
    for _ in 0..2 {
        sgd_step(&mut b, &[(i, Tensor::new(vec![1], vec![g]).unwrap())], &mut state).unwrap();
    }
    let displacement = -b.params()[i].value.data()[0];
    assert!((displacement - lr * g * (1.0 + 1.9)).abs() < 1e-6);
}

#[test]
fn weight_decay_enters_velocity() {
    let mut b = one_param_bundle(vec![2.0]);
    let i = bias_index(&b);
    let mut state = OptimState::new(0.1, 0.0, 0.5).unwrap();
    sgd_step(&mut b, &[(i, Tensor::zeros([1]))], &mut state).unwrap();
    assert!((b.params()[i].value.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-7);
}

#[test]
fn frozen_and_nan_gradients() {
    let mut b = one_param_bundle(vec![1.0, 1.0]);
    let i = bias_index(&b);
    let mut state = OptimState::new(0.1, 0.9, 0.0).unwrap();
    b.freeze(ParamGroup::Classifier);
    let before = b.clone();
    for _ in 0..3 {
        sgd_step(&mut b, &[(i, Tensor::full([2], 1.0))], &mut state).unwrap();
    }
    assert_eq!(b.params(), before.params());

    b.unfreeze(ParamGroup::Classifier);
    let err = sgd_step(&mut b, &[(i, Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap())], &mut state).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { ref param } if param == "classifier.bias"));
    assert_eq!(b.params(), before.params());
}

#[test]
fn pretrain_smoke() {
    let bank = gen_synthetic_multidomain(2, 1, 4, 0).unwrap();
    let out = pretrain(&bank, &toy_supcon(1, 8)).unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.history[0].mean_loss.is_finite());
    assert!(out.bundle.has_group(ParamGroup::Head));
    assert!(!out.bundle.has_group(ParamGroup::Classifier));
    assert_eq!(out.bundle.metadata["temperature"], "0.13");
}

#[test]
fn pretrain_is_bit_deterministic_and_writes_artifacts() {
    let bank = gen_synthetic_multidomain(2, 2, 4, 1).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let mut cfg = toy_supcon(2, 8);
        cfg.out_dir = Some(dir.path().to_path_buf());
        cfg.checkpoint_every = 1;
        pretrain(&bank, &cfg).unwrap();
    }
    for file in [CHECKPOINT_FILE, HISTORY_FILE, "checkpoint_epoch0001.sckp"] {
        let a = fs::read(dirs[0].path().join(file)).unwrap();
        let b = fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let history = read_history(dirs[0].path().join(HISTORY_FILE)).unwrap();
    assert_eq!(history.len(), 2);
}

#[test]
fn supcon_loss_decreases_on_separable_toy() {
    let bank = gen_synthetic_multidomain(2, 1, 16, 42).unwrap();
    let mut cfg = toy_supcon(5, 16);
    cfg.policy = AugPolicy::None;
    let out = pretrain(&bank, &cfg).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.mean_loss).collect();
    assert!(losses[4] < losses[0], "{losses:?}");
    // pinned from the first run
    assert!((losses[0] - 3.431473).abs() < 1e-4 && (losses[4] - 3.425634).abs() < 1e-4, "{losses:?}");
}

#[test]
fn cross_entropy_pretrain_has_no_head() {
    let bank = gen_synthetic_multidomain(3, 1, 4, 2).unwrap();
    let mut cfg = TrainConfig::cross_entropy(tiny_encoder());
    cfg.batch_size = 6;
    cfg.schedule = ScheduleSpec::constant(0.05, 2);
    cfg.policy = AugPolicy::None;
    let out = pretrain(&bank, &cfg).unwrap();
    assert!(!out.bundle.has_group(ParamGroup::Head));
    assert_eq!(out.bundle.config.n_classes, Some(3));
    assert!(!out.bundle.metadata.contains_key("temperature"));
    assert_eq!(out.bundle.metadata["loss"], "ce");
}

#[test]
fn pretrain_rejects_oversized_batches_and_bad_banks() {
    let bank = gen_synthetic_multidomain(2, 1, 2, 0).unwrap();
    assert!(matches!(pretrain(&bank, &toy_supcon(1, 8)), Err(Error::Validation(_))));
    let mut cfg = toy_supcon(1, 2);
    cfg.encoder.input_size = 16;
    assert!(pretrain(&bank, &cfg).is_err());
}

fn brightness_bank(n_per: usize, seed: u64) -> ImageBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..2 * n_per)
        .map(|i| {
            let class = i % 2;
            let base = if class == 0 { 40.0 } else { 200.0 };
            let pixels = (0..32 * 32 * 3).map(|_| (base + rng.random_range(-30.0..30.0f64)) as u8).collect();
            Record {
                pixels,
                class,
                domain: 0,
                split: SplitTag::Unassigned,
            }
        })
        .collect();
    ImageBank::new(32, 32, 3, vec!["dark".into(), "bright".into()], vec!["d".into()], records).unwrap()
}

#[test]
fn linear_eval_freezes_encoder_and_separates_toy_classes() {
    let bank = brightness_bank(20, 3);
    let pretrained = init_params(&ModelConfig::supcon(tiny_encoder()), 7).unwrap();
    let all: Vec<usize> = (0..bank.len()).collect();
    let cfg = ProbeConfig {
        lr: 0.1,
        batch_size: 8,
        epochs: 50,
        momentum: 0.9,
        seed: 1,
    };
    let out = linear_eval(&pretrained, &bank, &all, &all, MetricKind::Top1, &cfg).unwrap();
    assert_eq!(out.train_accuracy, 1.0);
    assert_eq!(out.test_metric, 1.0);
    for p in pretrained.group_params(ParamGroup::Encoder) {
        assert_eq!(out.bundle.param(&p.name).unwrap().value.data(), p.value.data());
    }
    assert!(!out.bundle.has_group(ParamGroup::Head));
    assert!(out.bundle.is_frozen(ParamGroup::Encoder));
}

#[test]
fn probe_features_ignore_augmentation() {
    let bank = gen_synthetic_multidomain(2, 1, 3, 4).unwrap();
    let bundle = init_params(&ModelConfig::supcon(tiny_encoder()), 3).unwrap();
    let idx = [0, 2, 4];
    let feats = extract_features(&bundle, &bank, &idx).unwrap();

    let mut tape = Tape::<f32>::new();
    let bound = bundle.bind(&mut tape, &[ParamGroup::Encoder]).unwrap();
    let raw: Vec<f32> = idx.iter().flat_map(|&i| bank.image(i).into_data()).collect();
    let x = tape.leaf(Tensor::new(vec![3, 3, 32, 32], raw).unwrap()).unwrap();
    let f = encoder_forward(&mut tape, &bundle.config.encoder, &bound, x).unwrap();
    assert_eq!(tape.value(f).data(), feats.data());
}

#[test]
fn probe_rejects_feature_dim_mismatch() {
    let bundle = init_params(&ModelConfig::supcon(tiny_encoder()), 3).unwrap();
    let feats = Tensor::zeros([4, 8]);
    assert!(train_probe(&bundle, &feats, &[0, 1, 0, 1], 2, &ProbeConfig::default()).is_err());
}

#[test]
fn single_small_step_reduces_probe_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fd = tiny_encoder().feature_dim;
    let feats = Tensor::from_fn(vec![12, fd], |_| rng.random_range(-1.0..1.0f32));
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let mut bundle = init_params(&ModelConfig::cross_entropy(tiny_encoder(), 3), 1).unwrap();
    bundle.freeze(ParamGroup::Encoder);

    let loss_of = |b: &ModelBundle| -> (f32, Vec<(usize, Tensor<f32>)>) {
        let mut tape = Tape::<f32>::new();
        let bound = b.bind(&mut tape, &[ParamGroup::Classifier]).unwrap();
        let x = tape.leaf(feats.clone()).unwrap();
        let logits = classifier_forward(&mut tape, &bound, x).unwrap();
        let loss = cross_entropy(&mut tape, logits, &labels, Reduction::Mean).unwrap();
        let grads = tape.backward(loss).unwrap();
        (tape.value(loss).item().unwrap(), bound.gradients(&tape, &grads))
    };
    let (before, grads) = loss_of(&bundle);
    let mut state = OptimState::new(1e-3, 0.9, 0.0).unwrap();
    sgd_step(&mut bundle, &grads, &mut state).unwrap();
    let (after, _) = loss_of(&bundle);
    assert!(after < before, "{after} ≥ {before}");

    let logits = {
        let mut tape = Tape::<f64>::new();
        let bound = bundle.bind(&mut tape, &[ParamGroup::Classifier]).unwrap();
        let x = tape.leaf(feats.cast()).unwrap();
        let l = classifier_forward(&mut tape, &bound, x).unwrap();
        tape.value(l).clone()
    };
    let f64_loss = cross_entropy_value(&CEBatch::new(logits, labels.clone()).unwrap(), Reduction::Mean).unwrap();
    assert!((f64_loss - after as f64).abs() < 1e-5);
}

#[test]
fn checkpoint_round_trip() {
    let mut bundle = init_params(&ModelConfig::supcon(tiny_encoder()), 9).unwrap();
    bundle.metadata.insert("temperature".into(), "0.13".into());
    bundle.metadata.insert("stage".into(), "pretrain_supcon".into());
    bundle.freeze(ParamGroup::Encoder);
    let bytes = checkpoint_bytes(&bundle).unwrap();
    assert_eq!(&bytes[..4], b"SCKP");
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    assert_eq!(back.metadata["temperature"], "0.13");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sckp");
    save_checkpoint(&bundle, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), bundle);

    let mut probe = bundle.clone();
    probe.discard_head();
    probe.attach_classifier(5, 1).unwrap();
    assert_eq!(checkpoint_from_bytes(&checkpoint_bytes(&probe).unwrap()).unwrap(), probe);
}

#[test]
fn corrupted_checkpoints_give_structured_errors() {
    let bundle = init_params(&ModelConfig::supcon(tiny_encoder()), 9).unwrap();
    let bytes = checkpoint_bytes(&bundle).unwrap();

    // metadata count lives at bytes 5..7
    let mut inflated = bytes.clone();
    inflated[5..7].copy_from_slice(&u16::MAX.to_le_bytes());
    assert!(matches!(checkpoint_from_bytes(&inflated), Err(Error::Truncated { .. } | Error::Format { .. })));

    assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
    let mut magic = bytes.clone();
    magic[1] = b'X';
    assert!(matches!(checkpoint_from_bytes(&magic), Err(Error::Format { .. })));

    let mut wrong = bundle.clone();
    wrong.config.encoder.feature_dim = 32;
    let bytes = checkpoint_bytes(&wrong).unwrap();
    assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::ShapeMismatch { .. })));

    let mut reserved = bundle.clone();
    reserved.metadata.insert("model.width".into(), "3".into());
    assert!(checkpoint_bytes(&reserved).is_err());
}

#[test]
fn history_round_trip() {
    let h = vec![
        EpochRecord {
            epoch: 1,
            lr: 0.01,
            mean_loss: 4.25,
        },
        EpochRecord {
            epoch: 2,
            lr: 0.1,
            mean_loss: 3.0000001,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    write_history(&h, &path).unwrap();
    assert!(fs::read_to_string(&path).unwrap().starts_with("epoch,lr,mean_loss\n1,0.01,4.25\n"));
    assert_eq!(read_history(&path).unwrap(), h);
}

#[test]
fn recipe_defaults() {
    let s = TrainConfig::supcon(EncoderConfig::default());
    assert_eq!((s.batch_size, s.epochs(), s.momentum, s.weight_decay), (1024, 400, 0.9, 1e-4));
    assert_eq!(s.schedule.decay_epochs, vec![250, 350]);
    assert_eq!(s.policy.strategy(), Strategy::SimAugment);
    assert!(matches!(s.objective, Objective::SupCon { temperature, .. } if temperature == 0.13));
    let c = TrainConfig::cross_entropy(EncoderConfig::default());
    assert_eq!((c.batch_size, c.schedule.decay_epochs.clone()), (512, vec![150, 250, 350]));
    let p = ProbeConfig::default();
    assert_eq!((p.epochs, p.momentum), (50, 0.9));
}
