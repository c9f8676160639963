//! Datasets: MNIST IDX files, seeded splits and synthetic fixtures.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::Matrix;
use crate::network::one_hot;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const MNIST_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// n × d, one example per row.
    pub inputs: Matrix,
    /// Class indices, absent for autoencoding data.
    pub labels: Option<Vec<usize>>,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::shape("Dataset::new", inputs.shape(), (l.len(), 1)));
            }
        }
        Ok(Dataset { inputs, labels, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config(format!("dataset `{}` has no labels", self.name)))
    }

    /// Rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            name: self.name.clone(),
        }
    }

    /// The first `n` rows (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs.row_range(0, n),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            name: self.name.clone(),
        }
    }

    /// Training targets: one-hot rows for labelled data with `classes` set,
    /// otherwise the inputs themselves (autoencoding).
    pub fn targets(&self, classes: Option<usize>) -> Result<Matrix> {
        match classes {
            Some(k) => one_hot(self.labels()?, k),
            None => Ok(self.inputs.clone()),
        }
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated { path: path.into(), needed: at + 4, found: bytes.len() })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Images as rows of pixels scaled by 1/255.
pub fn read_idx_images(path: &Path) -> Result<Matrix> {
    let bytes = read_file(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Magic { path: path.into(), expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    let d = rows * cols;
    let needed = 16 + n * d;
    if bytes.len() < needed {
        return Err(Error::Truncated { path: path.into(), needed, found: bytes.len() });
    }
    let data = bytes[16..needed].iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::new(n, d, data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Magic { path: path.into(), expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(Error::Truncated { path: path.into(), needed, found: bytes.len() });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let inputs = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if labels.len() != inputs.rows() {
        return Err(Error::Format {
            path: images.into(),
            reason: format!("{} images but {} labels", inputs.rows(), labels.len()),
        });
    }
    let name = images.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(inputs, Some(labels), name)
}

/// The four standard MNIST files inside one directory.
#[derive(Clone, Debug)]
pub struct MnistDir(pub PathBuf);

impl MnistDir {
    pub fn train(&self) -> Result<Dataset> {
        load_mnist_idx(&self.0.join(MNIST_TRAIN_IMAGES), &self.0.join(MNIST_TRAIN_LABELS))
    }

    pub fn test(&self) -> Result<Dataset> {
        load_mnist_idx(&self.0.join(MNIST_TEST_IMAGES), &self.0.join(MNIST_TEST_LABELS))
    }

    pub fn exists(&self) -> bool {
        [MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS, MNIST_TEST_IMAGES, MNIST_TEST_LABELS]
            .iter()
            .all(|f| self.0.join(f).is_file())
    }
}

/// Writes images (values in [0, 1], rounded to bytes) as IDX. `side` gives
/// the image height and width; their product must match the row length.
pub fn write_idx_images(path: &Path, inputs: &Matrix, side: (usize, usize)) -> Result<()> {
    if side.0 * side.1 != inputs.cols() {
        return Err(Error::shape("write_idx_images", inputs.shape(), side));
    }
    let mut out = Vec::with_capacity(16 + inputs.rows() * inputs.cols());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [inputs.rows(), side.0, side.1] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for &p in inputs.as_slice() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    write_atomic(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Config(format!("label {l} does not fit a byte")))?);
    }
    write_atomic(path, &out)
}

/// Seeded split into (train, validation). Membership is drawn by a seeded
/// shuffle; both parts keep the original relative row order.
pub fn split(data: &Dataset, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {validation_fraction}"
        )));
    }
    let n = data.len();
    let n_val = (n as f64 * validation_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let mut t = data.select(&train);
    let mut v = data.select(&val);
    t.name = format!("{}[train]", data.name);
    v.name = format!("{}[validation]", data.name);
    Ok((t, v))
}

/// Two classes centred at ±separation/2 · e₁ with unit-variance isotropic
/// noise, alternating labels 0, 1, 0, 1, ...
pub fn synthetic_two_gaussians(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n % 2 != 0 || d == 0 {
        return Err(Error::Config(format!("need even n and d > 0, got n={n}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(noise + if j == 0 { sign * separation / 2.0 } else { 0.0 });
        }
        labels.push(label);
    }
    Dataset::new(Matrix::new(n, d, data)?, Some(labels), "two-gaussians")
}
