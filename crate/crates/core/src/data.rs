//! Datasets: MNIST IDX files, seeded splits and a synthetic many-class task.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::ProbVector;

/// Features (one row per example) and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                what: "one label per feature row",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::domain("dataset must not be empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dimension {
                what: "labels must be below the number of classes",
                expected: num_classes,
                got: bad,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], tag: &str) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: format!("{}[{tag}]", self.provenance),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.input_dim() != other.input_dim() || self.num_classes != other.num_classes {
            return Err(Error::config("cannot concatenate datasets of different shapes"));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("column counts agree");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            features,
            labels,
            num_classes: self.num_classes,
            provenance: format!("{}+{}", self.provenance, other.provenance),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn class_frequencies(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.class_counts().into_iter().map(|c| c as f64 / n).collect()
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_error(path, bytes.len(), "file ends inside the header"))
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(parse_error(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} (images)"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(parse_error(
            path,
            bytes.len(),
            format!("truncated: header announces {expected} bytes"),
        ));
    }
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(parse_error(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x} (labels)"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(parse_error(
            path,
            bytes.len(),
            format!("truncated: header announces {} labels", n),
        ));
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Loads an image/label IDX pair with pixels scaled to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(parse_error(
            labels_path,
            4,
            format!("{} labels for {n} images in {}", labels.len(), images_path.display()),
        ));
    }
    let features = Array2::from_shape_vec((n, rows * cols), pixels.into_iter().map(|p| p as f64 / 255.0).collect())
        .expect("pixel count matches header");
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(features, labels, num_classes, images_path.display().to_string())
}

/// The four standard file names inside an MNIST directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.is_file())
    }

    /// `(official train, official test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            load_mnist(&self.train_images, &self.train_labels)?,
            load_mnist(&self.test_images, &self.test_labels)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_n: usize,
    pub valid_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

/// Seeded disjoint index sets `(train, valid, test)` drawn from `0..n`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let total = spec.train_n + spec.valid_n + spec.test_n;
    if total > n {
        return Err(Error::config(format!("split sizes sum to {total} but only {n} examples")));
    }
    if spec.train_n == 0 || spec.valid_n == 0 || spec.test_n == 0 {
        return Err(Error::config("every split must be non-empty"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = idx[spec.train_n + spec.valid_n..total].to_vec();
    let valid = idx[spec.train_n..spec.train_n + spec.valid_n].to_vec();
    idx.truncate(spec.train_n);
    Ok((idx, valid, test))
}

pub fn random_split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = split_indices(data.len(), spec)?;
    Ok((data.subset(&tr, "train"), data.subset(&va, "valid"), data.subset(&te, "test")))
}

/// `p_k ∝ (k+1)^(−exponent)` over `num_classes` classes.
pub fn zipf_probs(num_classes: usize, exponent: f64) -> ProbVector {
    ProbVector::from_weights((1..=num_classes).map(|k| (k as f64).powf(-exponent)).collect())
        .expect("zipf weights are positive")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub n: usize,
    pub zipf_exponent: f64,
    /// Scale of the class means. 0 makes features independent of the label.
    pub separation: f64,
    pub seed: u64,
}

/// Zipf-distributed labels with Gaussian features `x = separation·μ_y + ε`,
/// where `μ_k, ε ~ N(0, I)`.
pub fn synthetic_categorical(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::config("synthetic task needs at least 2 classes"));
    }
    if !(spec.zipf_exponent >= 0.0) || spec.n == 0 || spec.input_dim == 0 {
        return Err(Error::config("invalid synthetic task parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let probs = zipf_probs(spec.num_classes, spec.zipf_exponent);
    let sampler = WeightedIndex::new(probs.probs()).expect("valid weights");
    let means = Array2::from_shape_simple_fn((spec.num_classes, spec.input_dim), || {
        spec.separation * rng.sample::<f64, _>(StandardNormal)
    });
    let labels: Vec<usize> = (0..spec.n).map(|_| sampler.sample(&mut rng)).collect();
    let mut features = Array2::zeros((spec.n, spec.input_dim));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (x, m) in row.iter_mut().zip(means.row(y)) {
            *x = m + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(
        features,
        labels,
        spec.num_classes,
        format!(
            "synthetic(D={},zipf={},sep={},seed={})",
            spec.num_classes, spec.zipf_exponent, spec.separation, spec.seed
        ),
    )
}
