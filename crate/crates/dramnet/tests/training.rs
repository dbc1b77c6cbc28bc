//! Training-loop integration: determinism, augmentation accounting, and an
//! overfit capacity check whose trained model then feeds the evaluation and
//! authentication paths.

use dramnet::eval;
use dramnet::imaging::FingerprintImage;
use dramnet::nn::{build_model, Model};
use dramnet::pipeline::prepare_images;
use dramnet::sim::{generate_dataset, Condition, ConditionKind, SimParams};
use dramnet::train::{presets, split_dataset, train, OptimizerKind, TrainConfig};

fn tiny_dataset(devices: usize, per_condition: usize, rows: usize) -> dramnet::sim::Dataset {
    generate_dataset(
        devices,
        &[Condition::new(ConditionKind::Nominal), Condition::new(ConditionKind::HighTemp)],
        per_condition,
        rows,
        rows,
        99,
        &SimParams::default(),
    )
    .unwrap()
}

fn tiny_config(epochs: usize, batch: usize, input: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        input_size: input,
        augment: false,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_model_unchanged() {
    let ds = tiny_dataset(2, 2, 16);
    let images = prepare_images(&ds, 16).unwrap();
    let arch = presets::dramnet_at("t", 16, 2);
    let mut model = build_model::<f32>(&arch, 3).unwrap();
    let before = model.clone();
    let history = train(&mut model, &images, &[], &tiny_config(0, 4, 16)).unwrap();
    assert_eq!(model, before);
    assert!(history.steps.is_empty());
    assert!(history.epochs.is_empty());
}

#[test]
fn loss_sequence_is_deterministic() {
    let ds = tiny_dataset(2, 3, 16);
    let images = prepare_images(&ds, 16).unwrap();
    let arch = presets::dramnet_at("t", 16, 2);
    let config = tiny_config(2, 4, 16);

    let run = || {
        let mut model = build_model::<f64>(&arch, 3).unwrap();
        train(&mut model, &images, &[], &config).unwrap()
    };
    let a = run();
    let b = run();
    let losses_a: Vec<f64> = a.steps.iter().map(|s| s.loss).collect();
    let losses_b: Vec<f64> = b.steps.iter().map(|s| s.loss).collect();
    assert_eq!(losses_a, losses_b);
    assert!(!losses_a.is_empty());
}

#[test]
fn augmentation_multiplies_steps_not_test_set() {
    let ds = tiny_dataset(2, 4, 16); // 16 measurements
    let images = prepare_images(&ds, 16).unwrap();
    let (train_idx, test_idx) = split_dataset(&ds, 0.5, 1).unwrap();
    let train_images: Vec<FingerprintImage> = train_idx.iter().map(|&i| images[i].clone()).collect();
    let test_images: Vec<FingerprintImage> = test_idx.iter().map(|&i| images[i].clone()).collect();
    assert_eq!(train_images.len(), 8);

    let arch = presets::dramnet_at("t", 16, 2);
    let plain = tiny_config(1, 4, 16);
    let augmented = TrainConfig { augment: true, ..plain.clone() };

    let mut m1 = build_model::<f32>(&arch, 3).unwrap();
    let h1 = train(&mut m1, &train_images, &test_images, &plain).unwrap();
    let mut m2 = build_model::<f32>(&arch, 3).unwrap();
    let h2 = train(&mut m2, &train_images, &test_images, &augmented).unwrap();

    assert_eq!(h1.steps.len(), 2); // 8 images / batch 4
    assert_eq!(h2.steps.len(), 12); // 48 images / batch 4 — 6x the steps
}

#[test]
fn history_csv_layout() {
    let ds = tiny_dataset(2, 2, 16);
    let images = prepare_images(&ds, 16).unwrap();
    let arch = presets::dramnet_at("t", 16, 2);
    let mut model = build_model::<f32>(&arch, 3).unwrap();
    let history = train(&mut model, &images, &images, &tiny_config(2, 4, 16)).unwrap();
    let csv = history.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,lr,loss,epoch,train_acc,test_acc");
    assert_eq!(csv.lines().count(), 1 + history.steps.len());
    // wall time is reported in the struct but never in the csv
    assert!(history.wall_time_secs > 0.0);
}

#[test]
fn overfits_tiny_set_then_evaluates_and_authenticates() {
    // 12-image 3-class set at desk scale; 200 epochs of Adam must memorize it.
    let ds = generate_dataset(
        3,
        &[Condition::new(ConditionKind::Nominal), Condition::new(ConditionKind::HighTemp)],
        2,
        64,
        64,
        7,
        &SimParams::default(),
    )
    .unwrap();
    assert_eq!(ds.len(), 12);
    let images = prepare_images(&ds, 64).unwrap();
    let arch = presets::dramnet_desk();
    let mut model: Model<f32> = build_model(&arch, 1).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 4,
        input_size: 64,
        optimizer: OptimizerKind::Adam,
        seed: 1,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &images, &images, &config).unwrap();
    let final_train = eval::accuracy_on(&model, &images, 8).unwrap();
    assert_eq!(final_train, 1.0, "capacity check: train accuracy {final_train}");
    assert!(history.epochs.last().unwrap().train_accuracy > 0.9);

    // memorization check: evaluating on the training set is perfect
    let evaluation = eval::evaluate(&model, &images, 8).unwrap();
    assert_eq!(evaluation.report.accuracy, 1.0);
    assert_eq!(evaluation.rocs.len(), 3);
    assert_eq!(evaluation.confusion.total(), 12);
    for roc in &evaluation.rocs {
        assert_eq!(roc.auc, 1.0, "class {} separable", roc.class_id);
    }

    // an enrolled measurement authenticates as its device at a harsh threshold
    let decision = eval::authenticate(&model, &ds.measurements[0], 0.9).unwrap();
    assert!(decision.accepted);
    assert_eq!(decision.device_id, Some(ds.measurements[0].device_id));

    // threshold 0 always accepts the argmax class
    let decision = eval::authenticate(&model, &ds.measurements[5], 0.0).unwrap();
    assert!(decision.accepted);
}

#[test]
fn train_rejects_oversized_batch_and_empty_set() {
    let ds = tiny_dataset(2, 2, 16);
    let images = prepare_images(&ds, 16).unwrap();
    let arch = presets::dramnet_at("t", 16, 2);
    let mut model = build_model::<f32>(&arch, 3).unwrap();

    let config = tiny_config(1, 64, 16); // batch 64 > 8 images
    assert!(train(&mut model, &images, &[], &config).is_err());

    let config = tiny_config(1, 4, 16);
    assert!(train(&mut model, &[], &[], &config).is_err());
}
