//! Experiment orchestration: source-CNN pre-training, frozen feature
//! extraction with on-disk caching, quantum and classical head fine-tuning,
//! and the resumable benchmark grid with reports.
//!
//! All randomness flows from one global seed through [`split_seed`], so any
//! trial is reproducible in isolation and trial JSON is byte-stable across
//! reruns. Wall-clock timings therefore live in the run manifest, never in
//! trial files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{bind, CircuitProgram};
use crate::data::{batches, filter_binary, load_dataset, BinaryTask, Dataset, Split};
use crate::encoding::{amplitude_encode, prepare_features, FEATURE_DIM};
use crate::models::{build_c2c_1d, build_c2c_2d, build_source_cnn, C2C_1D_PARAMS, C2C_2D_PARAMS};
use crate::nn::{cross_entropy, AdamVec, NetworkModel, Tensor};
use crate::sim::StateVector;
use crate::stats::{aggregate, render_summary, write_aggregate_csv, write_pvalue_csv, TrialRecord};
use crate::zoo::{ConvAnsatzId, PoolingKind, QcnnModel};
use crate::{map_collect, map_collect_seq, sha256_hex, Error, Result};

/// Derive a child seed from the global seed, a purpose tag, and an index.
pub fn split_seed(global: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub seed: u64,
    /// Images taken from the head of the (class-interleaved) train split.
    pub train_subset: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop once quick-check test accuracy reaches this.
    pub target_accuracy: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            seed: 7,
            train_subset: 10_000,
            batch_size: 50,
            lr: 1e-3,
            max_epochs: 15,
            target_accuracy: 0.92,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub test_accuracy: f64,
    pub train_samples: usize,
    pub wall_secs: f64,
}

/// Multinomial accuracy over a dataset, evaluated in inference mode in
/// parallel chunks.
pub fn evaluate_classifier(model: &NetworkModel, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<usize>> = idx.chunks(250).map(<[usize]>::to_vec).collect();
    let hits = map_collect(&chunks, |c| -> Result<usize> {
        let (x, labels) = data.gather(c);
        let probs = model.infer(&x)?;
        let k = probs.shape[1];
        let mut correct = 0;
        for (bi, &lab) in labels.iter().enumerate() {
            let row = &probs.data[bi * k..(bi + 1) * k];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            correct += usize::from(pred == lab);
        }
        Ok(correct)
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / data.len() as f64)
}

/// Train the 10-class source CNN on Fashion-MNIST with Adam and
/// cross-entropy, stopping early once the quick-check accuracy target is
/// met. Returns the trained model and the full-test-split accuracy.
pub fn pretrain_source(
    fashion_dir: &Path,
    opts: &PretrainOptions,
) -> Result<(NetworkModel, PretrainReport)> {
    let start = Instant::now();
    let train = load_dataset(fashion_dir, Split::Train)?.take(opts.train_subset);
    let test = load_dataset(fashion_dir, Split::Test)?;
    let quick = test.take(2000);
    let mut model = build_source_cnn(opts.seed);
    let mut epochs = 0;
    for epoch in 0..opts.max_epochs {
        let plan = batches(
            train.len(),
            opts.batch_size,
            split_seed(opts.seed, "pretrain-epoch", epoch as u64),
        );
        for batch in &plan {
            let (x, labels) = train.gather(batch);
            let (probs, caches) = model.forward_train(&x)?;
            let loss = cross_entropy(&probs, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pre-training diverged at epoch {epoch} (loss = {loss})"
                )));
            }
            let grads = model.backward(&caches, &probs, &labels)?;
            model.adam_step(&grads, opts.lr);
        }
        epochs = epoch + 1;
        if evaluate_classifier(&model, &quick)? >= opts.target_accuracy {
            break;
        }
    }
    let test_accuracy = evaluate_classifier(&model, &test)?;
    Ok((
        model,
        PretrainReport {
            epochs,
            test_accuracy,
            train_samples: train.len(),
            wall_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Inference-mode forward to the 256-feature tap, in parallel chunks.
pub fn extract_features(model: &NetworkModel, data: &Dataset) -> Result<Tensor> {
    let tap = model
        .feature_tap
        .ok_or_else(|| Error::Domain("model exposes no feature tap".into()))?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<usize>> = idx.chunks(250).map(<[usize]>::to_vec).collect();
    let parts = map_collect(&chunks, |c| -> Result<Tensor> {
        let (x, _) = data.gather(c);
        model.infer_to(&x, tap)
    });
    let mut out = Vec::with_capacity(data.len() * FEATURE_DIM);
    for p in parts {
        let p = p?;
        if p.shape[1] != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "feature tap produced width {}, expected {FEATURE_DIM}",
                p.shape[1]
            )));
        }
        out.extend_from_slice(&p.data);
    }
    Tensor::new(vec![data.len(), FEATURE_DIM], out)
}

const FEATURE_CACHE_MAGIC: &[u8; 8] = b"QTLFEAT1";

pub fn write_feature_cache(path: &Path, features: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::with_capacity(24 + features.data.len() * 8);
    buf.extend_from_slice(FEATURE_CACHE_MAGIC);
    buf.write_u64::<LittleEndian>(features.shape[0] as u64)?;
    buf.write_u64::<LittleEndian>(features.shape[1] as u64)?;
    for &v in &features.data {
        buf.write_f64::<LittleEndian>(v)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut cur = &bytes[..];
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Idx("feature cache shorter than header".into()))?;
    if &magic != FEATURE_CACHE_MAGIC {
        return Err(Error::Idx("bad feature cache magic".into()));
    }
    let n = cur.read_u64::<LittleEndian>()? as usize;
    let d = cur.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; n * d];
    for v in &mut data {
        *v = cur.read_f64::<LittleEndian>()?;
    }
    Tensor::new(vec![n, d], data)
}

/// Content digest of an in-memory dataset, for cache keys.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.rows as u64).to_le_bytes());
    h.update((data.cols as u64).to_le_bytes());
    h.update(&data.labels);
    for &v in &data.images {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a serialized model, for cache keys.
pub fn model_digest(model: &NetworkModel) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(model)?))
}

/// Extract features through a cache directory; the key folds in the model
/// and dataset digests so stale entries can never be returned.
pub fn features_cached(
    cache_dir: &Path,
    model: &NetworkModel,
    model_dig: &str,
    data: &Dataset,
) -> Result<Tensor> {
    let key = sha256_hex(format!("{model_dig}:{}", dataset_digest(data)).as_bytes());
    let path = cache_dir.join(format!("features-{}.bin", &key[..24]));
    if path.exists() {
        if let Ok(t) = read_feature_cache(&path) {
            if t.shape[0] == data.len() {
                return Ok(t);
            }
        }
    }
    let t = extract_features(model, data)?;
    write_feature_cache(&path, &t)?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "qcnn")]
    Qcnn,
    #[serde(rename = "c2c-1d")]
    C2c1d,
    #[serde(rename = "c2c-2d")]
    C2c2d,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Qcnn => "qcnn",
            HeadKind::C2c1d => "c2c-1d",
            HeadKind::C2c2d => "c2c-2d",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<HeadKind> {
        match s {
            "qcnn" => Ok(HeadKind::Qcnn),
            "c2c1d" | "c2c-1d" => Ok(HeadKind::C2c1d),
            "c2c2d" | "c2c-2d" => Ok(HeadKind::C2c2d),
            other => Err(Error::Domain(format!(
                "unknown head {other:?}, expected qcnn, c2c1d, or c2c2d"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: BinaryTask,
    pub head: HeadKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conv_id: Option<ConvAnsatzId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pooling: Option<PoolingKind>,
}

impl ExperimentConfig {
    pub fn quantum(task: BinaryTask, conv: ConvAnsatzId, pooling: PoolingKind) -> Self {
        ExperimentConfig {
            task,
            head: HeadKind::Qcnn,
            conv_id: Some(conv),
            pooling: Some(pooling),
        }
    }

    pub fn classical(task: BinaryTask, head: HeadKind) -> Self {
        ExperimentConfig {
            task,
            head,
            conv_id: None,
            pooling: None,
        }
    }

    /// `strict` additionally enforces the benchmark pairing rule (trivial
    /// pooling only with conv ids 10 and 11).
    pub fn validate(&self, strict: bool) -> Result<()> {
        match self.head {
            HeadKind::Qcnn => {
                let (conv, pooling) = match (self.conv_id, self.pooling) {
                    (Some(c), Some(p)) => (c, p),
                    _ => {
                        return Err(Error::Domain(
                            "qcnn head needs both a conv id and a pooling kind".into(),
                        ))
                    }
                };
                if strict && !pooling.valid_benchmark_pairing(conv) {
                    return Err(Error::Domain(format!(
                        "trivial pooling is only benchmarked with conv ids 10 and 11, got {conv}"
                    )));
                }
                Ok(())
            }
            _ => {
                if self.conv_id.is_some() || self.pooling.is_some() {
                    Err(Error::Domain(
                        "classical heads take no conv id or pooling".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Stable identifier, e.g. `01-qcnn-c10-gen` or `23-c2c-1d`.
    pub fn config_id(&self) -> String {
        match (self.conv_id, self.pooling) {
            (Some(c), Some(p)) => format!("{}-{}-c{c}-{p}", self.task, self.head),
            _ => format!("{}-{}", self.task, self.head),
        }
    }

    pub fn trainable_params(&self) -> usize {
        match self.head {
            HeadKind::Qcnn => {
                let model = QcnnModel::new(
                    self.conv_id.expect("validated"),
                    self.pooling.expect("validated"),
                );
                model.num_params()
            }
            HeadKind::C2c1d => C2C_1D_PARAMS,
            HeadKind::C2c2d => C2C_2D_PARAMS,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FinetuneOptions {
    /// Fine-tuning pool size per task (train-cap).
    pub train_cap: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            train_cap: 2000,
            iterations: 200,
            batch_size: 50,
            lr: 0.01,
            trials: 10,
            seed: 7,
        }
    }
}

/// Task-filtered features: a seeded-shuffle pool of training examples plus
/// the full task test split.
pub struct TaskData {
    pub task: BinaryTask,
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub pool_seed: u64,
}

/// Build the per-task feature view: filter both splits to the task digits,
/// shuffle the training pool with a task-specific seed, cap it, and extract
/// features through the cache.
pub fn task_data(
    model: &NetworkModel,
    model_dig: &str,
    cache_dir: &Path,
    mnist_train: &Dataset,
    mnist_test: &Dataset,
    task: BinaryTask,
    train_cap: usize,
    global_seed: u64,
) -> Result<TaskData> {
    let train_bin = filter_binary(mnist_train, task);
    let test_bin = filter_binary(mnist_test, task);
    if train_bin.is_empty() || test_bin.is_empty() {
        return Err(Error::Domain(format!("task {task} has no data")));
    }
    let pool_seed = split_seed(global_seed, "pool", task.digits().0 as u64);
    let mut order: Vec<usize> = (0..train_bin.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(pool_seed);
    order.shuffle(&mut rng);
    order.truncate(train_cap.min(train_bin.len()));
    let pool = train_bin.subset(&order);

    let train_x = features_cached(cache_dir, model, model_dig, &pool)?;
    let test_x = features_cached(cache_dir, model, model_dig, &test_bin)?;
    Ok(TaskData {
        task,
        train_x,
        train_y: pool.labels.iter().map(|&l| l as usize).collect(),
        test_x,
        test_y: test_bin.labels.iter().map(|&l| l as usize).collect(),
        pool_seed,
    })
}

/// One fine-tuning trial, serialized as `trial-<config>-<k>.json`.
/// Byte-deterministic given (config, options, seed); wall-clock time is
/// carried in memory only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub build: String,
    pub config_id: String,
    pub task: String,
    pub head: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conv_id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pooling: Option<String>,
    pub params: usize,
    pub trial: usize,
    pub seed: u64,
    pub pool_seed: u64,
    pub train_samples: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(skip)]
    pub wall_secs: f64,
}

impl TrialResult {
    pub fn record(&self) -> TrialRecord {
        TrialRecord {
            task: self.task.clone(),
            head: self.head.clone(),
            conv_id: self.conv_id,
            pooling: self.pooling.clone(),
            params: self.params,
            trial: self.trial,
            accuracy: self.test_accuracy,
        }
    }
}

fn result_shell(
    cfg: &ExperimentConfig,
    opts: &FinetuneOptions,
    data: &TaskData,
    trial: usize,
    seed: u64,
    params: usize,
) -> TrialResult {
    TrialResult {
        build: env!("CARGO_PKG_VERSION").to_string(),
        config_id: cfg.config_id(),
        task: cfg.task.to_string(),
        head: cfg.head.to_string(),
        conv_id: cfg.conv_id.map(ConvAnsatzId::get),
        pooling: cfg.pooling.map(|p| p.to_string()),
        params,
        trial,
        seed,
        pool_seed: data.pool_seed,
        train_samples: data.train_y.len(),
        iterations: opts.iterations,
        batch_size: opts.batch_size,
        lr: opts.lr,
        losses: Vec::new(),
        final_loss: f64::NAN,
        train_accuracy: 0.0,
        test_accuracy: 0.0,
        wall_secs: 0.0,
    }
}

/// Amplitude-encode each 256-dim feature row into an 8-qubit state.
pub fn encode_feature_rows(features: &Tensor) -> Result<Vec<StateVector>> {
    let d = features.shape[1];
    let rows: Vec<&[f64]> = features.data.chunks(d).collect();
    map_collect(&rows, |row| -> Result<StateVector> {
        amplitude_encode(&prepare_features(row)?)
    })
    .into_iter()
    .collect()
}

fn binary_ce_terms(p0: f64, label: usize) -> (f64, f64) {
    // returns (loss, dLoss/dp0) for -ln p(correct class), p0 <-> class 0
    let p = p0.clamp(1e-10, 1.0 - 1e-10);
    if label == 0 {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

/// Mean batch loss and its gradient w.r.t. the circuit parameters.
pub fn quantum_batch_gradient(
    program: &CircuitProgram,
    params: &[f64],
    states: &[StateVector],
    labels: &[usize],
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let bound = bind(program, params)?;
    let per_sample = map_collect(batch, |&i| -> Result<(f64, Vec<f64>)> {
        let (p0, dp0) = bound.gradient(&states[i])?;
        let (loss, dl) = binary_ce_terms(p0, labels[i]);
        Ok((loss, dp0.iter().map(|g| g * dl).collect()))
    });
    reduce_batch(per_sample, params.len(), batch.len())
}

/// Sequential twin of [`quantum_batch_gradient`] for benchmarking.
pub fn quantum_batch_gradient_seq(
    program: &CircuitProgram,
    params: &[f64],
    states: &[StateVector],
    labels: &[usize],
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let bound = bind(program, params)?;
    let per_sample = map_collect_seq(batch, |&i| -> Result<(f64, Vec<f64>)> {
        let (p0, dp0) = bound.gradient(&states[i])?;
        let (loss, dl) = binary_ce_terms(p0, labels[i]);
        Ok((loss, dp0.iter().map(|g| g * dl).collect()))
    });
    reduce_batch(per_sample, params.len(), batch.len())
}

fn reduce_batch(
    per_sample: Vec<Result<(f64, Vec<f64>)>>,
    dim: usize,
    batch_len: usize,
) -> Result<(f64, Vec<f64>)> {
    let nb = batch_len as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim];
    for r in per_sample {
        let (l, g) = r?;
        loss += l / nb;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v / nb;
        }
    }
    Ok((loss, grad))
}

/// Accuracy of `p0 >= 0.5 -> class 0` over encoded states.
pub fn quantum_eval(
    program: &CircuitProgram,
    params: &[f64],
    states: &[StateVector],
    labels: &[usize],
) -> Result<f64> {
    let bound = bind(program, params)?;
    let hits = map_collect(states, |s| -> Result<(f64, f64)> { bound.output_distribution(s) });
    let mut correct = 0usize;
    for (r, &lab) in hits.into_iter().zip(labels) {
        let (p0, _) = r?;
        let pred = usize::from(p0 < 0.5);
        correct += usize::from(pred == lab);
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Epoch-reshuffled mini-batch schedule delivering exactly `iterations`
/// batches.
fn batch_schedule(n: usize, batch_size: usize, iterations: usize, trial_seed: u64) -> Vec<Vec<usize>> {
    let mut plan = Vec::with_capacity(iterations);
    let mut epoch = 0u64;
    while plan.len() < iterations {
        let seed = split_seed(trial_seed, "epoch", epoch);
        for b in batches(n, batch_size, seed) {
            if plan.len() == iterations {
                break;
            }
            plan.push(b);
        }
        epoch += 1;
    }
    plan
}

pub fn finetune_quantum(
    cfg: &ExperimentConfig,
    opts: &FinetuneOptions,
    data: &TaskData,
    trial: usize,
) -> Result<TrialResult> {
    let start = Instant::now();
    cfg.validate(false)?;
    let conv = cfg.conv_id.expect("validated");
    let pooling = cfg.pooling.expect("validated");
    let qcnn = QcnnModel::new(conv, pooling);
    let program = qcnn.program();
    let trial_seed = split_seed(opts.seed, &cfg.config_id(), trial as u64);

    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut params: Vec<f64> = (0..qcnn.num_params())
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let train_states = encode_feature_rows(&data.train_x)?;
    let test_states = encode_feature_rows(&data.test_x)?;

    let mut out = result_shell(cfg, opts, data, trial, trial_seed, params.len());
    let mut opt = AdamVec::new(params.len());
    for batch in batch_schedule(train_states.len(), opts.batch_size, opts.iterations, trial_seed) {
        let (loss, grad) =
            quantum_batch_gradient(program, &params, &train_states, &data.train_y, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "quantum fine-tuning diverged on {} trial {trial} (loss = {loss})",
                cfg.config_id()
            )));
        }
        out.losses.push(loss);
        opt.step(&mut params, &grad, opts.lr);
    }
    out.final_loss = out.losses.last().copied().unwrap_or(f64::NAN);
    out.train_accuracy = quantum_eval(program, &params, &train_states, &data.train_y)?;
    out.test_accuracy = quantum_eval(program, &params, &test_states, &data.test_y)?;
    out.wall_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

pub fn finetune_classical(
    cfg: &ExperimentConfig,
    opts: &FinetuneOptions,
    data: &TaskData,
    trial: usize,
) -> Result<TrialResult> {
    let start = Instant::now();
    cfg.validate(false)?;
    let trial_seed = split_seed(opts.seed, &cfg.config_id(), trial as u64);
    let mut model = match cfg.head {
        HeadKind::C2c1d => build_c2c_1d(trial_seed),
        HeadKind::C2c2d => build_c2c_2d(trial_seed),
        HeadKind::Qcnn => return Err(Error::Domain("quantum config in classical path".into())),
    };

    let mut out = result_shell(cfg, opts, data, trial, trial_seed, model.total_param_count());
    let n = data.train_y.len();
    let d = data.train_x.shape[1];
    for batch in batch_schedule(n, opts.batch_size, opts.iterations, trial_seed) {
        let mut xb = Vec::with_capacity(batch.len() * d);
        let mut yb = Vec::with_capacity(batch.len());
        for &i in &batch {
            xb.extend_from_slice(&data.train_x.data[i * d..(i + 1) * d]);
            yb.push(data.train_y[i]);
        }
        let x = Tensor::new(vec![batch.len(), d], xb)?;
        let (probs, caches) = model.forward_train(&x)?;
        let loss = cross_entropy(&probs, &yb);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "classical fine-tuning diverged on {} trial {trial} (loss = {loss})",
                cfg.config_id()
            )));
        }
        out.losses.push(loss);
        let grads = model.backward(&caches, &probs, &yb)?;
        model.adam_step(&grads, opts.lr);
    }
    out.final_loss = out.losses.last().copied().unwrap_or(f64::NAN);
    out.train_accuracy = classical_eval(&model, &data.train_x, &data.train_y)?;
    out.test_accuracy = classical_eval(&model, &data.test_x, &data.test_y)?;
    out.wall_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

pub fn classical_eval(model: &NetworkModel, x: &Tensor, y: &[usize]) -> Result<f64> {
    let probs = model.infer(x)?;
    Ok(crate::nn::accuracy(&probs, y))
}

/// Run one trial, dispatching on head kind.
pub fn run_trial(
    cfg: &ExperimentConfig,
    opts: &FinetuneOptions,
    data: &TaskData,
    trial: usize,
) -> Result<TrialResult> {
    match cfg.head {
        HeadKind::Qcnn => finetune_quantum(cfg, opts, data, trial),
        _ => finetune_classical(cfg, opts, data, trial),
    }
}

/// The full benchmark grid for one task: conv ids 1..=10 with ZX and
/// generalized pooling, conv ids 10 and 11 with trivial pooling, and the
/// two classical heads (24 configurations).
pub fn task_grid(task: BinaryTask) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for id in 1..=10u8 {
        let conv = ConvAnsatzId::new(id).unwrap();
        out.push(ExperimentConfig::quantum(task, conv, PoolingKind::Zx));
        out.push(ExperimentConfig::quantum(task, conv, PoolingKind::Generalized));
    }
    for id in [10u8, 11] {
        let conv = ConvAnsatzId::new(id).unwrap();
        out.push(ExperimentConfig::quantum(task, conv, PoolingKind::Trivial));
    }
    out.push(ExperimentConfig::classical(task, HeadKind::C2c1d));
    out.push(ExperimentConfig::classical(task, HeadKind::C2c2d));
    out
}

/// 24 configurations x 3 tasks; with 10 trials each this is the 720-trial
/// benchmark.
pub fn paper_grid() -> Vec<ExperimentConfig> {
    BinaryTask::all().iter().flat_map(|&t| task_grid(t)).collect()
}

/// Two configurations on 0 vs 1 for fast plumbing checks.
pub fn smoke_grid() -> Vec<ExperimentConfig> {
    vec![
        ExperimentConfig::quantum(
            BinaryTask::ZeroVsOne,
            ConvAnsatzId::new(10).unwrap(),
            PoolingKind::Generalized,
        ),
        ExperimentConfig::classical(BinaryTask::ZeroVsOne, HeadKind::C2c1d),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub build: String,
    pub created_unix: u64,
    pub command: String,
    pub global_seed: u64,
    pub options: FinetuneOptions,
    pub checkpoint_digest: String,
    pub dataset_digests: BTreeMap<String, String>,
    pub configs: Vec<String>,
    pub trials_total: usize,
    pub trials_completed: usize,
    pub trials_skipped: usize,
    pub failures: Vec<String>,
    pub wall_secs: f64,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn trial_path(out_dir: &Path, config_id: &str, trial: usize) -> PathBuf {
    out_dir.join("trials").join(format!("trial-{config_id}-{trial:02}.json"))
}

pub fn write_trial(out_dir: &Path, result: &TrialResult) -> Result<PathBuf> {
    let path = trial_path(out_dir, &result.config_id, result.trial);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, serde_json::to_vec_pretty(result)?)?;
    Ok(path)
}

/// Read every `trial-*.json` under `<dir>/trials`, sorted by file name.
pub fn load_trial_results(out_dir: &Path) -> Result<Vec<TrialResult>> {
    let dir = out_dir.join("trials");
    let mut paths: Vec<PathBuf> = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("trial-") && name.ends_with(".json") {
                paths.push(p);
            }
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let r: TrialResult = serde_json::from_slice(&fs::read(&p)?)
            .map_err(|e| Error::Domain(format!("{}: {e}", p.display())))?;
        out.push(r);
    }
    Ok(out)
}

/// Write `aggregate.csv`, one `pvalues-<task>.csv` per task, and
/// `summary.txt`; returns the rendered summary.
pub fn write_reports(out_dir: &Path, results: &[TrialResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Domain("no trial results to report on".into()));
    }
    let records: Vec<TrialRecord> = results.iter().map(TrialResult::record).collect();
    fs::create_dir_all(out_dir)?;
    write_aggregate_csv(&out_dir.join("aggregate.csv"), &records)?;
    let stats = aggregate(&records);
    let mut tasks: Vec<&str> = stats.iter().map(|s| s.task.as_str()).collect();
    tasks.dedup();
    for task in tasks {
        let task_stats: Vec<_> = stats.iter().filter(|s| s.task == task).cloned().collect();
        write_pvalue_csv(&out_dir.join(format!("pvalues-{task}.csv")), &task_stats)?;
    }
    let summary = render_summary(&stats);
    fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

pub struct BenchmarkRequest<'a> {
    pub model: &'a NetworkModel,
    pub checkpoint_digest: String,
    pub mnist_dir: &'a Path,
    pub out_dir: &'a Path,
    pub configs: Vec<ExperimentConfig>,
    pub opts: FinetuneOptions,
    /// Progress lines to stderr.
    pub verbose: bool,
}

pub struct BenchmarkOutcome {
    pub trials_total: usize,
    pub trials_completed: usize,
    pub trials_skipped: usize,
    pub failures: Vec<String>,
    pub summary: String,
    pub manifest: RunManifest,
}

impl BenchmarkOutcome {
    /// Fraction of planned trials with a result on disk.
    pub fn completion(&self) -> f64 {
        if self.trials_total == 0 {
            return 1.0;
        }
        (self.trials_completed + self.trials_skipped) as f64 / self.trials_total as f64
    }
}

/// Execute a grid of configurations, skipping trials whose JSON already
/// exists, recording per-trial failures without stopping, and regenerating
/// the reports from everything on disk at the end.
pub fn run_benchmark(req: &BenchmarkRequest) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    for cfg in &req.configs {
        cfg.validate(true)?;
    }
    let mnist_train = load_dataset(req.mnist_dir, Split::Train)?;
    let mnist_test = load_dataset(req.mnist_dir, Split::Test)?;
    let model_dig = model_digest(req.model)?;
    let cache_dir = req.out_dir.join("cache");

    let mut views: BTreeMap<BinaryTask, TaskData> = BTreeMap::new();
    for cfg in &req.configs {
        if !views.contains_key(&cfg.task) {
            let view = task_data(
                req.model,
                &model_dig,
                &cache_dir,
                &mnist_train,
                &mnist_test,
                cfg.task,
                req.opts.train_cap,
                req.opts.seed,
            )?;
            views.insert(cfg.task, view);
        }
    }

    let mut completed = 0;
    let mut skipped = 0;
    let mut failures = Vec::new();
    let total = req.configs.len() * req.opts.trials;
    for cfg in &req.configs {
        let data = &views[&cfg.task];
        for trial in 0..req.opts.trials {
            let id = cfg.config_id();
            let path = trial_path(req.out_dir, &id, trial);
            if path.exists() {
                skipped += 1;
                continue;
            }
            match run_trial(cfg, &req.opts, data, trial) {
                Ok(result) => {
                    write_trial(req.out_dir, &result)?;
                    completed += 1;
                    if req.verbose {
                        eprintln!(
                            "[{}/{}] {id} trial {trial}: acc {:.4} ({:.1}s)",
                            completed + skipped,
                            total,
                            result.test_accuracy,
                            result.wall_secs
                        );
                    }
                }
                Err(e) => {
                    let msg = format!("{id} trial {trial}: {e}");
                    if req.verbose {
                        eprintln!("FAILED {msg}");
                    }
                    failures.push(msg);
                }
            }
        }
    }

    let results = load_trial_results(req.out_dir)?;
    let summary = if results.is_empty() {
        String::from("no trials completed\n")
    } else {
        write_reports(req.out_dir, &results)?
    };

    let mut dataset_digests = BTreeMap::new();
    dataset_digests.insert("mnist-train".to_string(), dataset_digest(&mnist_train));
    dataset_digests.insert("mnist-test".to_string(), dataset_digest(&mnist_test));
    let manifest = RunManifest {
        build: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        command: "benchmark".into(),
        global_seed: req.opts.seed,
        options: req.opts,
        checkpoint_digest: req.checkpoint_digest.clone(),
        dataset_digests,
        configs: req.configs.iter().map(ExperimentConfig::config_id).collect(),
        trials_total: total,
        trials_completed: completed,
        trials_skipped: skipped,
        failures: failures.clone(),
        wall_secs: start.elapsed().as_secs_f64(),
    };
    write_manifest(&req.out_dir.join("manifest.json"), &manifest)?;

    Ok(BenchmarkOutcome {
        trials_total: total,
        trials_completed: completed,
        trials_skipped: skipped,
        failures,
        summary,
        manifest,
    })
}
