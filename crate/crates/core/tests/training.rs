use bss_vision::autograd::Tensor;
use bss_vision::data::{generate_samples, DatasetConfig, Sample, Split};
use bss_vision::models::{Model, ResNetConfig, SegNetConfig};
use bss_vision::nn::Param;
use bss_vision::train::{
    init_resnet, init_segnet, sgd_step, train_classifier, train_segmentation, Checkpoint, LrSchedule, SgdMomentum,
    TrainConfig,
};
use bss_vision::Error;
use proptest::prelude::*;

fn tiny_seg() -> SegNetConfig {
    SegNetConfig {
        stages: 2,
        base_channels: 4,
        input_size: (16, 16),
        convs_per_stage: 1,
    }
}

fn tiny_res() -> ResNetConfig {
    ResNetConfig {
        stages: 2,
        blocks_per_stage: 1,
        base_channels: 4,
        num_classes: 3,
        input_size: (16, 16),
    }
}

fn samples(n: usize) -> (Vec<Sample>, Vec<Sample>) {
    let cfg = DatasetConfig {
        n,
        image_size: (16, 16),
        seed: 5,
        ..Default::default()
    };
    generate_samples(&cfg).unwrap().into_iter().partition(|s| s.split == Split::Train)
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::segmentation()
    }
}

fn snapshot(net: &dyn Model) -> Vec<u8> {
    Checkpoint::from_model(net).to_bytes().unwrap()
}

#[test]
fn zero_epochs_returns_initialization() {
    let (train, test) = samples(10);
    let (net, h) = train_segmentation(&train, &test, &short(0), tiny_seg()).unwrap();
    assert!(h.epochs.is_empty());
    assert_eq!(snapshot(&net), snapshot(&init_segnet(tiny_seg(), 9).unwrap()));
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::classification() };
    let (net, _) = train_classifier(&train, &test, &cfg, tiny_res()).unwrap();
    assert_eq!(snapshot(&net), snapshot(&init_resnet(tiny_res(), 0).unwrap()));
}

#[test]
fn same_seed_same_bits() {
    let (train, test) = samples(12);
    let mut cfg = short(2);
    cfg.augment = true;
    let (a, ha) = train_segmentation(&train, &test, &cfg, tiny_seg()).unwrap();
    let (b, hb) = train_segmentation(&train, &test, &cfg, tiny_seg()).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(snapshot(&a), snapshot(&b));
    cfg.seed += 1;
    let (c, _) = train_segmentation(&train, &test, &cfg, tiny_seg()).unwrap();
    assert_ne!(snapshot(&a), snapshot(&c));
}

#[test]
fn training_moves_weights_and_records_history() {
    let (train, test) = samples(12);
    let (net, h) = train_segmentation(&train, &test, &short(3), tiny_seg()).unwrap();
    assert_eq!(h.epochs.len(), 3);
    assert!(h.epochs.iter().all(|r| r.train_loss.is_finite() && r.test_loss.is_some()));
    assert_ne!(snapshot(&net), snapshot(&init_segnet(tiny_seg(), 9).unwrap()));
    let csv = h.to_csv();
    assert!(csv.starts_with("epoch,train_loss,test_loss,lr\n0,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn frozen_parameters_stay_bit_identical() {
    let (train, test) = samples(12);
    let mut cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::classification()
    };
    cfg.schedule.initial_lr = 0.05;
    cfg.freeze_prefix = Some("features".into());
    let init = init_resnet(tiny_res(), cfg.seed).unwrap();
    let (net, _) = train_classifier(&train, &test, &cfg, tiny_res()).unwrap();
    let before: Vec<&Param> = init.params();
    let mut moved = 0;
    for (p, q) in before.iter().zip(net.params()) {
        let same = p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if p.name.starts_with("features") {
            assert!(same, "{} changed while frozen", p.name);
        } else if !same {
            moved += 1;
        }
    }
    assert!(moved > 0, "the classifier head never moved");
}

#[test]
fn missing_targets_are_data_errors() {
    let (mut train, test) = samples(8);
    train[1].mask = None;
    let err = train_segmentation(&train, &test, &short(1), tiny_seg()).unwrap_err();
    assert!(matches!(err, Error::Data(ref m) if m.contains("sample 1")), "{err}");
    train[1].class = None;
    let err = train_classifier(&train, &test, &short(1), tiny_res()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = samples(8);
    let (mut net, _) = train_segmentation(&train, &test, &short(1), tiny_seg()).unwrap();
    let p1 = dir.path().join("a.ssnn");
    let p2 = dir.path().join("b.ssnn");
    bss_vision::train::save_checkpoint(&net, &p1).unwrap();
    let mut fresh = init_segnet(tiny_seg(), 1234).unwrap();
    bss_vision::train::load_checkpoint(&mut fresh, &p1).unwrap();
    bss_vision::train::save_checkpoint(&fresh, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let x = bss_vision::data::images_to_tensor(&[&test[0].image]).unwrap();
    let y1 = net.predict(&x).unwrap();
    let y2 = fresh.predict(&x).unwrap();
    assert!(y1.data().iter().zip(y2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let wider = SegNetConfig {
        base_channels: 5,
        ..tiny_seg()
    };
    let mut other = init_segnet(wider, 0).unwrap();
    match bss_vision::train::load_checkpoint(&mut other, &p1) {
        Err(Error::ShapeMismatch { name, .. }) => assert!(name.contains("conv"), "{name}"),
        other => panic!("expected a shape mismatch, got {other:?}"),
    }

    let mut ck = Checkpoint::load(&p1).unwrap();
    let (name, t) = ck.tensors[0].clone();
    let mut shape = t.shape().to_vec();
    shape[0] += 1;
    ck.tensors[0].1 = Tensor::zeros(shape);
    match ck.apply_to(&mut fresh) {
        Err(Error::ShapeMismatch { name: n, .. }) => assert_eq!(n, name),
        other => panic!("expected a shape mismatch, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_never_increases(lr in 1e-4f64..1.0, gamma in 0.01f64..1.0, step in 1usize..20, e in 0usize..200) {
        let s = LrSchedule::new(lr, gamma, step).unwrap();
        prop_assert!(s.lr_at_epoch(e + 1) <= s.lr_at_epoch(e));
        prop_assert_eq!(s.lr_at_epoch(e), lr * gamma.powi((e / step) as i32));
    }

    #[test]
    fn velocity_stays_finite(
        grads in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, 4), 1..20),
        momentum in 0.0f64..0.99,
    ) {
        let mut p = Param::trainable("w".into(), Tensor::zeros(vec![4]));
        let mut opt = SgdMomentum::new(0.01, momentum, [&p]).unwrap();
        for g in &grads {
            p.value.zero_grad();
            p.value.accumulate_grad(g).unwrap();
            sgd_step(&mut opt, [&mut p], 0.01).unwrap();
            prop_assert!(opt.velocity("w").unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn hand_rule_matches(w in -10f32..10.0, g in -10f32..10.0, lr in 0.001f64..1.0, m in 0.0f64..0.99) {
        let mut p = Param::trainable("w".into(), Tensor::new(vec![1], vec![w]).unwrap());
        let mut opt = SgdMomentum::new(lr, m, [&p]).unwrap();
        for k in 1..=2 {
            p.value.zero_grad();
            p.value.accumulate_grad(&[g]).unwrap();
            sgd_step(&mut opt, [&mut p], lr).unwrap();
            // After k identical steps from zero velocity: v_k = g * (1 + m + ... + m^(k-1)).
            let vk: f64 = (0..k).map(|i| m.powi(i)).sum::<f64>() * g as f64;
            prop_assert!((opt.velocity("w").unwrap()[0] as f64 - vk).abs() <= 1e-4 * (1.0 + vk.abs()));
        }
    }
}
