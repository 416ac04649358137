//! IDX image/label files (raw or gzipped), dataset containers, binary-task
//! filtering, and seeded batch iteration.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn idx_err(msg: impl Into<String>) -> Error {
    Error::Idx(msg.into())
}

/// Transparently gunzip when the payload starts with the gzip magic.
fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| idx_err(format!("gzip decode failed: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = bytes;
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| idx_err("image file shorter than header"))?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(idx_err(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| idx_err("missing count"))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(|_| idx_err("missing rows"))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(|_| idx_err("missing cols"))? as usize;
    let want = count * rows * cols;
    if cur.len() != want {
        return Err(idx_err(format!(
            "image payload is {} bytes, header promises {want}",
            cur.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: cur.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = bytes;
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| idx_err("label file shorter than header"))?;
    if magic != IDX_LABEL_MAGIC {
        return Err(idx_err(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| idx_err("missing count"))? as usize;
    if cur.len() != count {
        return Err(idx_err(format!(
            "label payload is {} bytes, header promises {count}"
        , cur.len())));
    }
    Ok(cur.to_vec())
}

pub fn write_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    out.write_u32::<BigEndian>(IDX_IMAGE_MAGIC).unwrap();
    out.write_u32::<BigEndian>(img.count as u32).unwrap();
    out.write_u32::<BigEndian>(img.rows as u32).unwrap();
    out.write_u32::<BigEndian>(img.cols as u32).unwrap();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABEL_MAGIC).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Images normalized to [0, 1] with their labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.rows * self.cols
    }

    /// NHWC tensor (channel 1) plus usize labels for the given indices.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let dim = self.image_dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images[i * dim..(i + 1) * dim]);
            labels.push(self.labels[i] as usize);
        }
        let t = Tensor {
            shape: vec![indices.len(), self.rows, self.cols, 1],
            data,
        };
        (t, labels)
    }

    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let dim = self.image_dim();
        Dataset {
            images: self.images[..n * dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let dim = self.image_dim();
        let mut images = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(&self.images[i * dim..(i + 1) * dim]);
            labels.push(self.labels[i]);
        }
        Dataset {
            images,
            labels,
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn read_first_existing(candidates: &[PathBuf]) -> Result<Vec<u8>> {
    for p in candidates {
        if p.exists() {
            return Ok(fs::read(p)?);
        }
    }
    Err(idx_err(format!(
        "none of the dataset files exist: {}",
        candidates
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

/// Path of the (possibly gzipped) image file for a split, for digesting.
pub fn image_file_path(dir: &Path, split: Split) -> Result<PathBuf> {
    let stem = split.stem();
    let gz = dir.join(format!("{stem}-images-idx3-ubyte.gz"));
    let raw = dir.join(format!("{stem}-images-idx3-ubyte"));
    if gz.exists() {
        Ok(gz)
    } else if raw.exists() {
        Ok(raw)
    } else {
        Err(idx_err(format!("no image file for split {stem} in {}", dir.display())))
    }
}

/// Load `<dir>/<split>-{images,labels}-idx?-ubyte[.gz]`.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let stem = split.stem();
    let images_bytes = maybe_gunzip(read_first_existing(&[
        dir.join(format!("{stem}-images-idx3-ubyte.gz")),
        dir.join(format!("{stem}-images-idx3-ubyte")),
    ])?)?;
    let labels_bytes = maybe_gunzip(read_first_existing(&[
        dir.join(format!("{stem}-labels-idx1-ubyte.gz")),
        dir.join(format!("{stem}-labels-idx1-ubyte")),
    ])?)?;
    let img = parse_idx_images(&images_bytes)?;
    let labels = parse_idx_labels(&labels_bytes)?;
    if img.count != labels.len() {
        return Err(idx_err(format!(
            "{} images but {} labels",
            img.count,
            labels.len()
        )));
    }
    Ok(Dataset {
        images: img.pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        labels,
        rows: img.rows,
        cols: img.cols,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryTask {
    #[serde(rename = "01")]
    ZeroVsOne,
    #[serde(rename = "23")]
    TwoVsThree,
    #[serde(rename = "89")]
    EightVsNine,
}

impl BinaryTask {
    pub fn digits(self) -> (u8, u8) {
        match self {
            BinaryTask::ZeroVsOne => (0, 1),
            BinaryTask::TwoVsThree => (2, 3),
            BinaryTask::EightVsNine => (8, 9),
        }
    }

    pub fn all() -> [BinaryTask; 3] {
        [
            BinaryTask::ZeroVsOne,
            BinaryTask::TwoVsThree,
            BinaryTask::EightVsNine,
        ]
    }
}

impl fmt::Display for BinaryTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.digits();
        write!(f, "{a}{b}")
    }
}

impl FromStr for BinaryTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<BinaryTask> {
        match s {
            "01" => Ok(BinaryTask::ZeroVsOne),
            "23" => Ok(BinaryTask::TwoVsThree),
            "89" => Ok(BinaryTask::EightVsNine),
            other => Err(Error::Domain(format!(
                "unknown task {other:?}, expected 01, 23, or 89"
            ))),
        }
    }
}

/// Keep only the task's two digits, in original order, relabelled so the
/// lower digit is class 0 and the higher is class 1.
pub fn filter_binary(d: &Dataset, task: BinaryTask) -> Dataset {
    let (lo, hi) = task.digits();
    let dim = d.image_dim();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..d.len() {
        let l = d.labels[i];
        if l == lo || l == hi {
            images.extend_from_slice(&d.images[i * dim..(i + 1) * dim]);
            labels.push(u8::from(l == hi));
        }
    }
    Dataset {
        images,
        labels,
        rows: d.rows,
        cols: d.cols,
    }
}

/// Seeded random permutation of 0..n chunked into batches; the final batch
/// may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
