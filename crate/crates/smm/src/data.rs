//! Training data: synthetic 2D distributions and an MNIST-style IDX reader.
//!
//! Everything handed to the trainer lives in `(-1, 1)^d`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmmError};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    Gauss8 { radius: f64, std: f64 },
    TwoMoons { noise: f64 },
    SwissRoll2D { noise: f64 },
    Mnist { path: PathBuf, digit_filter: Option<u8> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub normalize: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            DatasetKind::Gauss8 { radius, std } => {
                if *radius <= 0.0 || *std < 0.0 {
                    return Err(SmmError::Dataset(
                        "gauss8 needs radius > 0 and std >= 0".into(),
                    ));
                }
            }
            DatasetKind::TwoMoons { noise } | DatasetKind::SwissRoll2D { noise } => {
                if *noise < 0.0 {
                    return Err(SmmError::Dataset("noise must be >= 0".into()));
                }
            }
            DatasetKind::Mnist { path, .. } => {
                if !path.exists() {
                    return Err(SmmError::Dataset(format!(
                        "mnist path does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self.kind {
            DatasetKind::Mnist { .. } => vec![1, 28, 28],
            _ => vec![2],
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self.kind, DatasetKind::Mnist { .. })
    }
}

/// A loaded/generated pool of training samples, `[N, ...sample_shape]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Tensor,
    pub sample_shape: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gather a batch by index, shape `[indices.len(), ...sample_shape]`.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let row: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.samples.data[i * row..(i + 1) * row]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor { shape, data }
    }
}

/// Materialize a dataset pool. Synthetic specs draw `pool_size` i.i.d.
/// samples from `seed`; MNIST loads the IDX files under the spec's path.
pub fn load_dataset(spec: &DatasetSpec, pool_size: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    match &spec.kind {
        DatasetKind::Mnist { path, digit_filter } => {
            let (images, labels) = load_mnist_idx(path)?;
            let keep: Vec<usize> = (0..labels.len())
                .filter(|&i| digit_filter.map_or(true, |d| labels[i] == d))
                .collect();
            if keep.is_empty() {
                return Err(SmmError::Dataset("digit filter matched no images".into()));
            }
            let row = 28 * 28;
            let mut data = Vec::with_capacity(keep.len() * row);
            for &i in &keep {
                data.extend_from_slice(&images.data[i * row..(i + 1) * row]);
            }
            let raw = Tensor {
                shape: vec![keep.len(), 1, 28, 28],
                data,
            };
            let samples = if spec.normalize {
                normalize_to_unit_range(&raw)?
            } else {
                raw
            };
            Ok(Dataset {
                samples,
                sample_shape: vec![1, 28, 28],
            })
        }
        _ => {
            let samples = sample_synthetic(&spec.kind, pool_size, seed)?;
            Ok(Dataset {
                samples,
                sample_shape: vec![2],
            })
        }
    }
}

/// `n` i.i.d. draws from a synthetic 2D distribution, shape `[n, 2]`,
/// values in `(-1, 1)`.
pub fn sample_synthetic(kind: &DatasetKind, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(SmmError::Dataset("need n >= 1 samples".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "synthetic"));
    let mut data = Vec::with_capacity(n * 2);
    match kind {
        DatasetKind::Gauss8 { radius, std } => {
            // Equal-weight mixture on a circle, rescaled so 6-sigma tails fit.
            let scale = 1.0 / (radius + 6.0 * std + 1e-12);
            for _ in 0..n {
                let mode = rng.gen_range(0..8usize);
                let angle = mode as f64 * std::f64::consts::FRAC_PI_4;
                let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                data.push(clamp_open(scale * (cx + std * nx)));
                data.push(clamp_open(scale * (cy + std * ny)));
            }
        }
        DatasetKind::TwoMoons { noise } => {
            for _ in 0..n {
                let upper = rng.gen_bool(0.5);
                let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (mut x, mut y) = if upper {
                    (t.cos(), t.sin() - 0.25)
                } else {
                    (1.0 - t.cos(), 0.25 - t.sin())
                };
                x += noise * rng.sample::<f64, _>(StandardNormal);
                y += noise * rng.sample::<f64, _>(StandardNormal);
                data.push(clamp_open(x / (2.0 + 6.0 * noise)));
                data.push(clamp_open(y / (1.5 + 6.0 * noise)));
            }
        }
        DatasetKind::SwissRoll2D { noise } => {
            let t_max = 4.5 * std::f64::consts::PI;
            for _ in 0..n {
                let t: f64 = rng.gen_range(1.5 * std::f64::consts::PI..t_max);
                let mut x = t * t.cos();
                let mut y = t * t.sin();
                x += noise * rng.sample::<f64, _>(StandardNormal);
                y += noise * rng.sample::<f64, _>(StandardNormal);
                let scale = 1.0 / (t_max + 6.0 * noise);
                data.push(clamp_open(x * scale));
                data.push(clamp_open(y * scale));
            }
        }
        DatasetKind::Mnist { .. } => {
            return Err(SmmError::Dataset(
                "sample_synthetic does not cover mnist".into(),
            ));
        }
    }
    Tensor::new(vec![n, 2], data)
}

fn clamp_open(v: f64) -> f64 {
    v.clamp(-1.0 + 1e-9, 1.0 - 1e-9)
}

/// Parse IDX image bytes: big-endian magic, dims, then raw pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(SmmError::Dataset(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    if rows == 0 || cols == 0 || count == 0 {
        return Err(SmmError::Dataset("idx header has zero extent".into()));
    }
    let want = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| SmmError::Dataset("idx header extents overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != want {
        return Err(SmmError::Dataset(format!(
            "idx image payload truncated: header wants {want} bytes, file has {}",
            payload.len()
        )));
    }
    Ok(Tensor {
        shape: vec![count, rows, cols],
        data: payload.iter().map(|&b| f64::from(b)).collect(),
    })
}

/// Parse IDX label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(SmmError::Dataset(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(SmmError::Dataset(format!(
            "idx label payload truncated: header wants {count} bytes, file has {}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SmmError::Dataset("idx file truncated before header end".into()))
}

/// Load `images-idx3-ubyte` / `labels-idx1-ubyte` from a directory (or a
/// direct path to the image file, with the label file alongside).
pub fn load_mnist_idx(path: &Path) -> Result<(Tensor, Vec<u8>)> {
    let (img_path, lbl_path) = if path.is_dir() {
        (
            path.join("images-idx3-ubyte"),
            path.join("labels-idx1-ubyte"),
        )
    } else {
        let lbl = path
            .to_string_lossy()
            .replace("images-idx3", "labels-idx1");
        (path.to_path_buf(), PathBuf::from(lbl))
    };
    let images = parse_idx_images(&std::fs::read(&img_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(&lbl_path)?)?;
    if images.shape[0] != labels.len() {
        return Err(SmmError::Dataset(format!(
            "image count {} does not match label count {}",
            images.shape[0],
            labels.len()
        )));
    }
    Ok((images, labels))
}

/// Map byte-valued pixels `[0, 255]` to `v / 127.5 - 1`.
pub fn normalize_to_unit_range(x: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.numel());
    for &v in &x.data {
        if !(0.0..=255.0).contains(&v) {
            return Err(SmmError::Dataset(format!(
                "pixel value {v} outside [0, 255]"
            )));
        }
        data.push(v / 127.5 - 1.0);
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Mirror the selected samples of an image batch along the width axis.
pub fn hflip(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if x.shape.len() != 4 {
        return Err(SmmError::Dataset(format!(
            "hflip needs [B, C, H, W] input, got {:?}",
            x.shape
        )));
    }
    if mask.len() != x.shape[0] {
        return Err(SmmError::Dataset("hflip mask length != batch".into()));
    }
    let (c, h, w) = (x.shape[1], x.shape[2], x.shape[3]);
    let mut out = x.data.clone();
    let row = c * h * w;
    for (b, &flip) in mask.iter().enumerate() {
        if !flip {
            continue;
        }
        let sample = &mut out[b * row..(b + 1) * row];
        for ch in 0..c {
            for y in 0..h {
                let base = ch * h * w + y * w;
                sample[base..base + w].reverse();
            }
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}
