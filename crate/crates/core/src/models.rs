//! Model builders and checkpoint serialization.
//!
//! Three fixed architectures: the 10-class source CNN used for feature
//! pre-training, and the two classical transfer heads (1D and 2D) that
//! consume its 256-dimensional feature vector. Head parameter counts are
//! load-bearing (64 and 76) and asserted at construction.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{glorot_uniform, Layer, NetworkModel};
use crate::{Error, Result};

pub use crate::encoding::FEATURE_DIM;

pub const C2C_1D_PARAMS: usize = 64;
pub const C2C_2D_PARAMS: usize = 76;

fn conv2d(rng: &mut ChaCha8Rng, kh: usize, kw: usize, in_c: usize, out_c: usize) -> Layer {
    let fan_in = kh * kw * in_c;
    let fan_out = kh * kw * out_c;
    Layer::Conv2d {
        kh,
        kw,
        in_c,
        out_c,
        w: glorot_uniform(rng, fan_in, fan_out, kh * kw * in_c * out_c),
        b: vec![0.0; out_c],
    }
}

fn conv1d(rng: &mut ChaCha8Rng, k: usize, in_c: usize, out_c: usize) -> Layer {
    Layer::Conv1d {
        k,
        in_c,
        out_c,
        w: glorot_uniform(rng, k * in_c, k * out_c, k * in_c * out_c),
        b: vec![0.0; out_c],
    }
}

fn dense(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Layer {
    Layer::Dense {
        in_dim,
        out_dim,
        w: glorot_uniform(rng, in_dim, out_dim, in_dim * out_dim),
        b: vec![0.0; out_dim],
    }
}

fn batchnorm(dim: usize) -> Layer {
    Layer::BatchNorm {
        dim,
        gamma: vec![1.0; dim],
        beta: vec![0.0; dim],
        running_mean: vec![0.0; dim],
        running_var: vec![1.0; dim],
        momentum: 0.9,
        eps: 1e-5,
    }
}

/// 10-class source CNN on 28x28x1 images. The normalized 256-wide hidden
/// activation (Dense -> BatchNorm -> ReLU) is the transfer feature vector;
/// `feature_tap` marks it.
pub fn build_source_cnn(seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        conv2d(&mut rng, 3, 3, 1, 8),
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        conv2d(&mut rng, 3, 3, 8, 16),
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        Layer::Flatten,
        dense(&mut rng, 400, FEATURE_DIM),
        batchnorm(FEATURE_DIM),
        Layer::Relu,
        dense(&mut rng, FEATURE_DIM, 10),
        Layer::Softmax,
    ];
    let mut model = NetworkModel::new(layers);
    model.feature_tap = Some(10);
    model
}

/// 1D classical head: 256 -> Conv1D(k=5) -> ReLU -> MaxPool(9) -> Dense(28->2).
pub fn build_c2c_1d(seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        Layer::Reshape { shape: vec![FEATURE_DIM, 1] },
        conv1d(&mut rng, 5, 1, 1),
        Layer::Relu,
        Layer::MaxPool1d { size: 9 },
        Layer::Flatten,
        dense(&mut rng, 28, 2),
        Layer::Softmax,
    ];
    let model = NetworkModel::new(layers);
    assert_eq!(model.total_param_count(), C2C_1D_PARAMS);
    model
}

/// 2D classical head: 256 -> 16x16 image -> two Conv2D/pool stages -> Dense(8->2).
pub fn build_c2c_2d(seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        Layer::Reshape { shape: vec![16, 16, 1] },
        conv2d(&mut rng, 3, 3, 1, 2),
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        conv2d(&mut rng, 3, 3, 2, 2),
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        Layer::Flatten,
        dense(&mut rng, 8, 2),
        Layer::Softmax,
    ];
    let model = NetworkModel::new(layers);
    assert_eq!(model.total_param_count(), C2C_2D_PARAMS);
    model
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub achieved_accuracy: f64,
    pub epochs: usize,
    pub train_samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    pub model: NetworkModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, model: &NetworkModel, meta: CheckpointMeta) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        meta,
        model: model.clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Domain(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

/// Hex digest of a file's bytes, used to key derived caches.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(crate::sha256_hex(&fs::read(path)?))
}
