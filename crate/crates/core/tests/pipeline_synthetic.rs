//! Pipeline behavior on synthetic feature data: chance-level output for
//! untrained heads, label-orientation symmetry, loss descent during
//! fine-tuning, determinism, and the feature cache with a real model.

use qcnn_core::data::{BinaryTask, Dataset};
use qcnn_core::models::build_source_cnn;
use qcnn_core::nn::Tensor;
use qcnn_core::pipeline::{
    encode_feature_rows, features_cached, finetune_classical, finetune_quantum, model_digest,
    quantum_eval, ExperimentConfig, FinetuneOptions, HeadKind, TaskData,
};
use qcnn_core::zoo::{ConvAnsatzId, PoolingKind, QcnnModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Nonnegative 256-dim rows resembling post-ReLU activations; class 1
/// rows carry extra mass on a disjoint coordinate block.
fn synthetic_features(rng: &mut ChaCha8Rng, n: usize, separated: bool) -> (Tensor, Vec<usize>) {
    let mut data = Vec::with_capacity(n * 256);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        for j in 0..256 {
            let base: f64 = rng.random::<f64>().max(0.0);
            let boost = if separated && (j / 32) % 2 == label { 2.0 } else { 0.0 };
            data.push(base + boost);
        }
        labels.push(label);
    }
    (Tensor::new(vec![n, 256], data).unwrap(), labels)
}

fn synthetic_task(seed: u64, n_train: usize, n_test: usize) -> TaskData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_x, train_y) = synthetic_features(&mut rng, n_train, true);
    let (test_x, test_y) = synthetic_features(&mut rng, n_test, true);
    TaskData {
        task: BinaryTask::ZeroVsOne,
        train_x,
        train_y,
        test_x,
        test_y,
        pool_seed: seed,
    }
}

#[test]
fn untrained_qcnn_sits_near_chance_and_label_flip_mirrors_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, y) = synthetic_features(&mut rng, 200, false);
    let states = encode_feature_rows(&x).unwrap();
    let model = QcnnModel::new(ConvAnsatzId::new(10).unwrap(), PoolingKind::Generalized);
    let params: Vec<f64> = (0..model.num_params())
        .map(|_| rng.random_range(0.0..TAU))
        .collect();
    let acc = quantum_eval(model.program(), &params, &states, &y).unwrap();
    assert!(
        (acc - 0.5).abs() < 0.15,
        "untrained accuracy {acc} should be near chance"
    );
    let flipped: Vec<usize> = y.iter().map(|&l| 1 - l).collect();
    let acc_flipped = quantum_eval(model.program(), &params, &states, &flipped).unwrap();
    assert!(
        (acc + acc_flipped - 1.0).abs() < 1e-12,
        "accuracies {acc} and {acc_flipped} should mirror"
    );
}

#[test]
fn quantum_finetune_descends_and_is_deterministic() {
    let data = synthetic_task(11, 64, 32);
    let cfg = ExperimentConfig {
        task: BinaryTask::ZeroVsOne,
        head: HeadKind::Qcnn,
        conv_id: Some(ConvAnsatzId::new(10).unwrap()),
        pooling: Some(PoolingKind::Generalized),
    };
    let opts = FinetuneOptions {
        train_cap: 64,
        iterations: 40,
        batch_size: 16,
        lr: 0.05,
        trials: 1,
        seed: 5,
    };
    let a = finetune_quantum(&cfg, &opts, &data, 0).unwrap();
    let b = finetune_quantum(&cfg, &opts, &data, 0).unwrap();
    assert_eq!(a.losses, b.losses, "same trial must reproduce exactly");
    assert_eq!(a.test_accuracy, b.test_accuracy);
    assert!(
        a.final_loss < a.losses[0],
        "loss should descend: first {} last {}",
        a.losses[0],
        a.final_loss
    );
    assert!(a.train_accuracy > 0.6, "train accuracy {}", a.train_accuracy);
    let other = finetune_quantum(&cfg, &opts, &data, 1).unwrap();
    assert_ne!(a.losses, other.losses, "trials must differ by seed");
}

#[test]
fn classical_finetune_descends_and_is_deterministic() {
    let data = synthetic_task(13, 64, 32);
    for head in [HeadKind::C2c1d, HeadKind::C2c2d] {
        let cfg = ExperimentConfig {
            task: BinaryTask::ZeroVsOne,
            head,
            conv_id: None,
            pooling: None,
        };
        let opts = FinetuneOptions {
            train_cap: 64,
            iterations: 60,
            batch_size: 16,
            lr: 0.01,
            trials: 1,
            seed: 5,
        };
        let a = finetune_classical(&cfg, &opts, &data, 0).unwrap();
        let b = finetune_classical(&cfg, &opts, &data, 0).unwrap();
        assert_eq!(a.losses, b.losses, "{head:?} must reproduce exactly");
        assert!(
            a.final_loss < a.losses[0],
            "{head:?} loss should descend: first {} last {}",
            a.losses[0],
            a.final_loss
        );
    }
}

#[test]
fn feature_cache_returns_identical_bytes_for_frozen_model() {
    let dir = std::env::temp_dir().join(format!("qtl-cache-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let images: Vec<f64> = (0..n * 28 * 28).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<u8> = (0..n as u8).collect();
    let data = Dataset {
        images,
        labels,
        rows: 28,
        cols: 28,
    };
    let model = build_source_cnn(1);
    let dig = model_digest(&model).unwrap();
    let first = features_cached(&dir, &model, &dig, &data).unwrap();
    let files: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
    assert_eq!(files.len(), 1, "one cache entry expected");
    let path = files[0].as_ref().unwrap().path();
    let bytes_before = std::fs::read(&path).unwrap();
    let second = features_cached(&dir, &model, &dig, &data).unwrap();
    assert_eq!(first.data, second.data, "cache hit must return same features");
    assert_eq!(
        bytes_before,
        std::fs::read(&path).unwrap(),
        "cache file must not be rewritten"
    );
    assert_eq!(first.shape, vec![n, 256]);
    std::fs::remove_dir_all(&dir).ok();
}
