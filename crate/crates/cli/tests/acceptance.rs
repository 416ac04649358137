//! Release acceptance suite. Each test enforces one criterion at its
//! stated tolerance and prints as a single pass/fail line. The heavy
//! end-to-end tests share a pretrained source model via a OnceLock
//! fixture; data directories resolve to ../../data (override with
//! QTL_DATA_DIR) and artifacts land in the cargo tmp dir so repeated
//! runs reuse the checkpoint and feature cache.

use qcnn_core::circuit::{
    density_pooling_oracle, finite_difference_gradient, output_distribution, probability_gradient,
};
use qcnn_core::data::{
    load_dataset, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels,
    BinaryTask, Dataset, IdxImages, Split,
};
use qcnn_core::gates::{GateMatrix, C};
use qcnn_core::models::{
    build_c2c_1d, build_c2c_2d, load_checkpoint, save_checkpoint, CheckpointMeta,
};
use qcnn_core::nn::{cross_entropy, glorot_uniform, Layer, NetworkModel, Tensor};
use qcnn_core::pipeline::{
    finetune_quantum, model_digest, pretrain_source, task_data, ExperimentConfig, FinetuneOptions,
    PretrainOptions, TaskData,
};
use qcnn_core::stats::{regularized_incomplete_beta, welch_from_values};
use qcnn_core::zoo::{
    conv_block_matrix, conv_param_count, pool_block_matrix, pool_param_count, zx_as_generalized,
    ConvAnsatzId, PoolingKind, QcnnModel,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

fn data_root() -> PathBuf {
    let root = match std::env::var_os("QTL_DATA_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    };
    for sub in ["fashion", "mnist"] {
        assert!(
            root.join(sub).is_dir(),
            "expected IDX data under {}/{sub}; run scripts/fetch_data.py first \
             or point QTL_DATA_DIR at a directory with fashion/ and mnist/",
            root.display()
        );
    }
    root
}

fn tmp_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

struct Fixture {
    model: NetworkModel,
    digest: String,
    source_accuracy: f64,
    pretrain_secs: f64,
    checkpoint: PathBuf,
    mnist_train: Dataset,
    mnist_test: Dataset,
    cache_dir: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let data = data_root();
        let tmp = tmp_dir();
        let opts = PretrainOptions::default();
        let checkpoint = tmp.join(format!(
            "source-s{}-n{}-e{}-t{:02.0}.json",
            opts.seed,
            opts.train_subset,
            opts.max_epochs,
            opts.target_accuracy * 100.0
        ));
        let cache_dir = tmp.join("cache");
        std::fs::create_dir_all(&cache_dir).unwrap();

        let (model, source_accuracy, pretrain_secs) = match load_checkpoint(&checkpoint) {
            Ok(ck) if ck.meta.seed == opts.seed && ck.meta.achieved_accuracy >= 0.80 => {
                println!(
                    "reusing cached checkpoint ({}, accuracy {:.4})",
                    checkpoint.display(),
                    ck.meta.achieved_accuracy
                );
                (ck.model, ck.meta.achieved_accuracy, 0.0)
            }
            _ => {
                let start = Instant::now();
                let (model, report) = pretrain_source(&data.join("fashion"), &opts)
                    .expect("pretraining the source model failed");
                let secs = start.elapsed().as_secs_f64();
                save_checkpoint(
                    &checkpoint,
                    &model,
                    CheckpointMeta {
                        seed: opts.seed,
                        achieved_accuracy: report.test_accuracy,
                        epochs: report.epochs,
                        train_samples: report.train_samples,
                    },
                )
                .unwrap();
                println!(
                    "pretrained source model: accuracy {:.4} in {} epochs, {secs:.1}s",
                    report.test_accuracy, report.epochs
                );
                (model, report.test_accuracy, secs)
            }
        };
        let digest = model_digest(&model).unwrap();
        let mnist_train = load_dataset(&data.join("mnist"), Split::Train).unwrap();
        let mnist_test = load_dataset(&data.join("mnist"), Split::Test).unwrap();
        Fixture {
            model,
            digest,
            source_accuracy,
            pretrain_secs,
            checkpoint,
            mnist_train,
            mnist_test,
            cache_dir,
        }
    })
}

fn desk_task(task: BinaryTask) -> TaskData {
    let fx = fixture();
    task_data(
        &fx.model,
        &fx.digest,
        &fx.cache_dir,
        &fx.mnist_train,
        &fx.mnist_test,
        task,
        2000,
        7,
    )
    .unwrap()
}

fn random_angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..TAU)).collect()
}

fn random_state(rng: &mut ChaCha8Rng, num_qubits: usize) -> qcnn_core::sim::StateVector {
    let dim = 1usize << num_qubits;
    let amps: Vec<C> = (0..dim)
        .map(|_| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    qcnn_core::sim::StateVector::from_amplitudes(
        num_qubits,
        amps.iter().map(|a| a / norm).collect(),
    )
    .unwrap()
}

#[test]
fn acceptance_01_gradients_match_finite_differences_for_all_ansatzes() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0usize;
    for conv in ConvAnsatzId::all() {
        for pooling in PoolingKind::all() {
            let model = QcnnModel::new(conv, pooling);
            let program = model.program();
            for _ in 0..5 {
                let params = random_angles(&mut rng, model.num_params());
                let input = random_state(&mut rng, 8);
                let analytic = probability_gradient(program, &params, &input).unwrap();
                let fd = finite_difference_gradient(program, &params, &input, 1e-5).unwrap();
                for (k, (a, f)) in analytic.iter().zip(&fd).enumerate() {
                    let diff = (a - f).abs();
                    assert!(
                        diff < 1e-8 || diff / f.abs() < 1e-5,
                        "conv {conv:?} {pooling:?} slot {k}: analytic {a} vs fd {f}"
                    );
                    checked += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    println!("gradient suite: {checked} slots across 33 models in {secs:.1}s");
    assert!(secs < 60.0, "gradient suite took {secs:.1}s, budget is 60s");
}

#[test]
fn acceptance_02_unitarity_and_norm_stability() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for conv in ConvAnsatzId::all() {
        for _ in 0..3 {
            let params = random_angles(&mut rng, conv_param_count(conv));
            let m = conv_block_matrix(conv, &params).unwrap();
            let err = GateMatrix::Two(m).unitarity_error();
            assert!(err < 1e-10, "conv {conv:?} unitarity error {err:e}");
        }
    }
    for pooling in PoolingKind::all() {
        for _ in 0..3 {
            let params = random_angles(&mut rng, pool_param_count(pooling));
            let m = pool_block_matrix(pooling, &params).unwrap();
            let err = GateMatrix::Two(m).unitarity_error();
            assert!(err < 1e-10, "pool {pooling:?} unitarity error {err:e}");
        }
    }

    let mut state = random_state(&mut rng, 8);
    let ids: Vec<ConvAnsatzId> = ConvAnsatzId::all().collect();
    for step in 0..1000 {
        let id = ids[rng.random_range(0..ids.len())];
        let params = random_angles(&mut rng, conv_param_count(id));
        let m = conv_block_matrix(id, &params).unwrap();
        let a = rng.random_range(0..8usize);
        let b = (a + rng.random_range(1..8usize)) % 8;
        state.apply_gate(&GateMatrix::Two(m), &[a, b]).unwrap();
        let drift = (state.norm() - 1.0).abs();
        assert!(drift < 1e-9, "norm drift {drift:e} after {} gates", step + 1);
    }
}

#[test]
fn acceptance_03_deferred_trace_matches_density_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for conv in [1u8, 2, 10] {
        let conv = ConvAnsatzId::new(conv).unwrap();
        for pooling in PoolingKind::all() {
            let model = QcnnModel::new_sized(conv, pooling, 4).unwrap();
            let program = model.program();
            let traced = model.traced_qubits();
            for _ in 0..3 {
                let params = random_angles(&mut rng, model.num_params());
                let input = random_state(&mut rng, 4);
                let (p0, p1) = output_distribution(program, &params, &input).unwrap();
                let (q0, q1) = density_pooling_oracle(program, &params, &input, &traced).unwrap();
                assert!(
                    (p0 - q0).abs() < 1e-10 && (p1 - q1).abs() < 1e-10,
                    "conv {conv:?} {pooling:?}: ({p0}, {p1}) vs oracle ({q0}, {q1})"
                );
            }
        }
    }
}

#[test]
fn acceptance_04_generalized_pooling_subsumes_zx() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..20 {
        let t1 = rng.random_range(0.0..TAU);
        let t2 = rng.random_range(0.0..TAU);
        let zx = pool_block_matrix(PoolingKind::Zx, &[t1, t2]).unwrap();
        let gen =
            pool_block_matrix(PoolingKind::Generalized, &zx_as_generalized(t1, t2)).unwrap();
        // Both operators are block-diagonal in the control qubit; compare
        // each 2x2 control subspace up to its own global phase.
        for (r0, c0) in [(0usize, 0usize), (2, 2)] {
            let mut phase = C::new(1.0, 0.0);
            let mut anchor = 0.0f64;
            for r in 0..2 {
                for c in 0..2 {
                    let z = zx[r0 + r][c0 + c];
                    if z.norm() > anchor {
                        anchor = z.norm();
                        phase = gen[r0 + r][c0 + c] / z;
                    }
                }
            }
            for r in 0..2 {
                for c in 0..2 {
                    let diff = (gen[r0 + r][c0 + c] - phase * zx[r0 + r][c0 + c]).norm();
                    assert!(
                        diff < 1e-9,
                        "subspace at ({r0},{c0}), angles ({t1}, {t2}): entry diff {diff:e}"
                    );
                }
            }
        }
    }
}

#[test]
fn acceptance_05_structural_parameter_counts() {
    let ten = ConvAnsatzId::new(10).unwrap();
    assert_eq!(QcnnModel::new(ten, PoolingKind::Zx).num_params(), 51);
    assert_eq!(QcnnModel::new(ten, PoolingKind::Generalized).num_params(), 63);
    assert_eq!(
        QcnnModel::new(ConvAnsatzId::new(1).unwrap(), PoolingKind::Trivial).num_params(),
        0
    );
    // The head builders assert these totals at construction.
    assert_eq!(build_c2c_1d(0).total_param_count(), 64);
    assert_eq!(build_c2c_2d(0).total_param_count(), 76);
    let q = ExperimentConfig::quantum(BinaryTask::ZeroVsOne, ten, PoolingKind::Zx);
    assert_eq!(q.trainable_params(), 51);
}

fn fd_check_model(model: &mut NetworkModel, x: &Tensor, labels: &[usize], what: &str) {
    let (probs, caches) = model.forward_train(x).unwrap();
    let grads = model.backward(&caches, &probs, labels).unwrap();
    let h = 1e-5;
    for li in 0..model.layers.len() {
        let layer_grads = grads[li].clone();
        for (pi, g) in layer_grads.iter().enumerate() {
            for (k, &ga) in g.iter().enumerate() {
                let orig = model.layers[li].params_mut()[pi][k];
                model.layers[li].params_mut()[pi][k] = orig + h;
                let hi = cross_entropy(&model.forward_train(x).unwrap().0, labels);
                model.layers[li].params_mut()[pi][k] = orig - h;
                let lo = cross_entropy(&model.forward_train(x).unwrap().0, labels);
                model.layers[li].params_mut()[pi][k] = orig;
                let fd = (hi - lo) / (2.0 * h);
                let diff = (ga - fd).abs();
                assert!(
                    diff < 1e-7 || diff / fd.abs() < 1e-4,
                    "{what} layer {li} param[{pi}][{k}]: analytic {ga} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn acceptance_06_classical_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let batch = 4;
    let x256 = Tensor::new(
        vec![batch, 256],
        (0..batch * 256).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();

    fd_check_model(&mut build_c2c_1d(3), &x256, &labels, "c2c-1d");
    fd_check_model(&mut build_c2c_2d(4), &x256, &labels, "c2c-2d");

    // Small stack exercising the layer kinds the heads do not use
    // (BatchNorm in particular), so every kind gets a finite-difference
    // pass: Conv2d, ReLU, MaxPool2d, Flatten, Dense, BatchNorm, Softmax.
    let mut bn_model = NetworkModel::new(vec![
        Layer::Conv2d {
            kh: 3,
            kw: 3,
            in_c: 1,
            out_c: 2,
            w: glorot_uniform(&mut rng, 9, 18, 18),
            b: vec![0.0; 2],
        },
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        Layer::Flatten,
        Layer::Dense {
            in_dim: 8,
            out_dim: 4,
            w: glorot_uniform(&mut rng, 8, 4, 32),
            b: vec![0.0; 4],
        },
        Layer::BatchNorm {
            dim: 4,
            gamma: vec![1.0; 4],
            beta: vec![0.0; 4],
            running_mean: vec![0.0; 4],
            running_var: vec![1.0; 4],
            momentum: 0.9,
            eps: 1e-5,
        },
        Layer::Relu,
        Layer::Dense {
            in_dim: 4,
            out_dim: 2,
            w: glorot_uniform(&mut rng, 4, 2, 8),
            b: vec![0.0; 2],
        },
        Layer::Softmax,
    ]);
    let img = Tensor::new(
        vec![batch, 6, 6, 1],
        (0..batch * 36).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    fd_check_model(&mut bn_model, &img, &labels, "batchnorm stack");
}

#[test]
fn acceptance_07_end_to_end_desk_reproduction() {
    let start = Instant::now();
    let fx = fixture();
    assert!(
        fx.source_accuracy >= 0.80,
        "source model accuracy {:.4} below the 0.80 gate",
        fx.source_accuracy
    );
    let data = desk_task(BinaryTask::ZeroVsOne);
    let cfg = ExperimentConfig::quantum(
        BinaryTask::ZeroVsOne,
        ConvAnsatzId::new(10).unwrap(),
        PoolingKind::Generalized,
    );
    let opts = FinetuneOptions {
        train_cap: 2000,
        iterations: 200,
        batch_size: 50,
        lr: 0.01,
        trials: 3,
        seed: 7,
    };
    let mut accs = Vec::new();
    for trial in 0..opts.trials {
        let res = finetune_quantum(&cfg, &opts, &data, trial).unwrap();
        println!(
            "trial {trial}: test accuracy {:.4} ({:.1}s, final loss {:.4})",
            res.test_accuracy, res.wall_secs, res.final_loss
        );
        assert!(
            res.final_loss < res.losses[0],
            "trial {trial} did not descend: first {} last {}",
            res.losses[0],
            res.final_loss
        );
        accs.push(res.test_accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!(
        "desk reproduction: source accuracy {:.4}, mean 0v1 accuracy {mean:.4}, \
         pretrain {:.0}s + finetune {:.0}s",
        fx.source_accuracy,
        fx.pretrain_secs,
        start.elapsed().as_secs_f64() - fx.pretrain_secs
    );
    assert!(mean >= 0.95, "mean test accuracy {mean:.4} below 0.95");
}

#[test]
fn acceptance_08_generalized_pooling_mostly_beats_zx() {
    let data = desk_task(BinaryTask::TwoVsThree);
    let opts = FinetuneOptions {
        train_cap: 2000,
        iterations: 200,
        batch_size: 50,
        lr: 0.01,
        trials: 5,
        seed: 7,
    };
    let mut wins = 0;
    for conv in [4u8, 9, 10] {
        let conv = ConvAnsatzId::new(conv).unwrap();
        let mut means = [0.0f64; 2];
        for (slot, pooling) in [PoolingKind::Generalized, PoolingKind::Zx].iter().enumerate() {
            let cfg = ExperimentConfig::quantum(BinaryTask::TwoVsThree, conv, *pooling);
            let mut acc = 0.0;
            for trial in 0..opts.trials {
                acc += finetune_quantum(&cfg, &opts, &data, trial).unwrap().test_accuracy;
            }
            means[slot] = acc / opts.trials as f64;
        }
        println!(
            "conv {}: generalized {:.4} vs zx {:.4}",
            conv.get(),
            means[0],
            means[1]
        );
        if means[0] >= means[1] {
            wins += 1;
        }
    }
    assert!(
        wins >= 2,
        "generalized pooling won only {wins} of 3 conv ansatzes"
    );
}

#[test]
fn acceptance_09_welch_t_test_and_incomplete_beta() {
    let same = [0.91, 0.87, 0.95, 0.9];
    let r = welch_from_values(&same, &same).unwrap();
    assert!((r.p - 1.0).abs() < 1e-12, "identical samples gave p = {}", r.p);
    assert_eq!(r.t, 0.0);

    let a = [2.1, 2.5, 2.3, 2.9];
    let b = [1.1, 1.4, 1.2, 1.5];
    let r = welch_from_values(&a, &b).unwrap();
    assert!((r.t - 5.938574464185).abs() < 1e-6, "t = {}", r.t);
    assert!((r.df - 4.584905660377357).abs() < 1e-6, "df = {}", r.df);
    assert!((r.p - 2.589109195664e-3).abs() < 1e-6, "p = {}", r.p);

    for x in [0.05, 0.1, 0.25, 0.5, 0.75, 0.99] {
        let v = regularized_incomplete_beta(1.0, 1.0, x).unwrap();
        assert!((v - x).abs() < 1e-10, "I_{x}(1,1) = {v}");
    }
    let mid = regularized_incomplete_beta(2.0, 2.0, 0.5).unwrap();
    assert!((mid - 0.5).abs() < 1e-10, "I_0.5(2,2) = {mid}");
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..25 {
        let a = rng.random_range(0.2..8.0);
        let b = rng.random_range(0.2..8.0);
        let x = rng.random_range(0.01..0.99);
        let lhs = regularized_incomplete_beta(a, b, x).unwrap();
        let rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "symmetry broke at ({a}, {b}, {x})");
    }
}

#[test]
fn acceptance_10_idx_round_trip_gzip_and_magic() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let img = IdxImages {
        count: 7,
        rows: 5,
        cols: 4,
        pixels: (0..7 * 5 * 4).map(|_| rng.random::<u8>()).collect(),
    };
    let labels: Vec<u8> = (0..7).map(|_| rng.random_range(0..10)).collect();

    let img_bytes = write_idx_images(&img);
    let lab_bytes = write_idx_labels(&labels);
    let img2 = parse_idx_images(&img_bytes).unwrap();
    assert_eq!(img2.pixels, img.pixels);
    assert_eq!((img2.count, img2.rows, img2.cols), (7, 5, 4));
    assert_eq!(parse_idx_labels(&lab_bytes).unwrap(), labels);
    assert_eq!(write_idx_images(&img2), img_bytes, "round trip must be bit-exact");

    // Same payload as raw files and as gzip members must load identically.
    let base = tmp_dir().join("idx");
    let raw_dir = base.join("raw");
    let gz_dir = base.join("gz");
    std::fs::create_dir_all(&raw_dir).unwrap();
    std::fs::create_dir_all(&gz_dir).unwrap();
    std::fs::write(raw_dir.join("train-images-idx3-ubyte"), &img_bytes).unwrap();
    std::fs::write(raw_dir.join("train-labels-idx1-ubyte"), &lab_bytes).unwrap();
    for (name, bytes) in [
        ("train-images-idx3-ubyte.gz", &img_bytes),
        ("train-labels-idx1-ubyte.gz", &lab_bytes),
    ] {
        let f = std::fs::File::create(gz_dir.join(name)).unwrap();
        let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap();
    }
    let raw = load_dataset(&raw_dir, Split::Train).unwrap();
    let gz = load_dataset(&gz_dir, Split::Train).unwrap();
    assert_eq!(raw.images, gz.images);
    assert_eq!(raw.labels, gz.labels);

    let mut bad = img_bytes.clone();
    bad[2] = 0xff;
    assert!(parse_idx_images(&bad).is_err(), "wrong magic must be rejected");
    assert!(parse_idx_labels(&img_bytes).is_err(), "image magic is not a label magic");
}

#[test]
fn acceptance_11_finetune_cli_is_byte_deterministic() {
    let fx = fixture();
    let data = data_root();
    let bin = env!("CARGO_BIN_EXE_qcnn-tl");
    let base = tmp_dir().join("determinism");
    let mut trial_sets = Vec::new();
    for run in ["a", "b"] {
        let out_dir = base.join(run);
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir).unwrap();
        }
        let status = Command::new(bin)
            .args(["finetune", "--checkpoint"])
            .arg(&fx.checkpoint)
            .arg("--mnist-dir")
            .arg(data.join("mnist"))
            .arg("--out-dir")
            .arg(&out_dir)
            .args([
                "--task", "01", "--head", "qcnn", "--conv", "10", "--pooling", "gen",
                "--trials", "2", "--iters", "20", "--train-cap", "200", "--seed", "3",
            ])
            .status()
            .expect("failed to launch the CLI binary");
        assert!(status.success(), "finetune run {run} exited with {status}");

        let trial_dir = out_dir.join("trials");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&trial_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("trial-") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        assert_eq!(files.len(), 2, "expected 2 trial files in run {run}");
        let bytes: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_str().unwrap().to_string(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        let aggregate = std::fs::read(out_dir.join("aggregate.csv")).unwrap();
        trial_sets.push((bytes, aggregate));
    }
    assert_eq!(
        trial_sets[0].0, trial_sets[1].0,
        "trial JSON differs between identical runs"
    );
    assert_eq!(
        trial_sets[0].1, trial_sets[1].1,
        "aggregate.csv differs between identical runs"
    );
}
