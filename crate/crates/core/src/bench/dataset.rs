//! Dataset ingestion: IDX files and synthetic desk-scale generators.

use super::config::DatasetSpec;
use crate::curvature::{Dataset, Targets};
use crate::numerics::{DenseMatrix, RngStream};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file (needed {needed} bytes, have {have})")]
    TruncatedFile {
        path: String,
        needed: usize,
        have: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Train/test pair plus the output dimension the model head needs.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub output_dim: usize,
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteReader<'a> {
    path: &'a str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(DatasetError::TruncatedFile {
                path: self.path.to_string(),
                needed: self.pos + n,
                have: self.data.len(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

/// Parses one IDX image/label file pair: big-endian magic 0x00000803 for
/// images (count, rows, cols, unsigned bytes scaled to [0, 1]) and
/// 0x00000801 for labels. The two counts must agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images_name = images_path.display().to_string();
    let labels_name = labels_path.display().to_string();
    let image_bytes = std::fs::read(images_path).map_err(|source| DatasetError::Io {
        path: images_name.clone(),
        source,
    })?;
    let label_bytes = std::fs::read(labels_path).map_err(|source| DatasetError::Io {
        path: labels_name.clone(),
        source,
    })?;

    let mut r = ByteReader {
        path: &images_name,
        data: &image_bytes,
        pos: 0,
    };
    let magic = r.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(DatasetError::BadMagic {
            path: images_name,
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = r.read_u32()? as usize;
    let rows = r.read_u32()? as usize;
    let cols = r.read_u32()? as usize;
    let pixels = r.take(count * rows * cols)?;

    let mut lr = ByteReader {
        path: &labels_name,
        data: &label_bytes,
        pos: 0,
    };
    let lmagic = lr.read_u32()?;
    if lmagic != LABELS_MAGIC {
        return Err(DatasetError::BadMagic {
            path: labels_name,
            found: lmagic,
            expected: LABELS_MAGIC,
        });
    }
    let label_count = lr.read_u32()? as usize;
    if label_count != count {
        return Err(DatasetError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels = lr.take(label_count)?;

    let dim = rows * cols;
    let inputs = DenseMatrix::from_fn(count, dim, |i, j| pixels[i * dim + j] as f64 / 255.0);
    let classes = labels.iter().map(|&l| l as usize).collect();
    Ok(Dataset::new(inputs, Targets::Classes(classes)).expect("counts checked"))
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

// Substreams of the dataset seed; independent of any run seed so that
// paired sweeps see identical data.
const STREAM_TRAIN: u64 = 10;
const STREAM_TEST: u64 = 11;
const STREAM_WEIGHTS: u64 = 12;

/// Gaussian clusters on a circle of radius 3: class k is centered at angle
/// 2*pi*k/K in the first two features, labels are balanced round-robin.
/// With `noise = 0` the classes are linearly separable.
pub fn blobs(
    n: usize,
    classes: usize,
    features: usize,
    noise: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if n < 2 || classes < 2 || features < 2 {
        return Err(DatasetError::Invalid(
            "blobs needs n >= 2, classes >= 2, features >= 2".into(),
        ));
    }
    let mut inputs = DenseMatrix::zeros(n, features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        for j in 0..features {
            let center = match j {
                0 => 3.0 * angle.cos(),
                1 => 3.0 * angle.sin(),
                _ => 0.0,
            };
            inputs.set(i, j, center + noise * rng.standard_normal());
        }
        labels.push(class);
    }
    Ok(Dataset::new(inputs, Targets::Classes(labels)).expect("counts match"))
}

/// The interleaved half-circles two-class problem.
pub fn two_moons(n: usize, noise: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n < 2 {
        return Err(DatasetError::Invalid("two-moons needs n >= 2".into()));
    }
    let mut inputs = DenseMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = std::f64::consts::PI * rng.uniform();
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        inputs.set(i, 0, x + noise * rng.standard_normal());
        inputs.set(i, 1, y + noise * rng.standard_normal());
        labels.push(class);
    }
    Ok(Dataset::new(inputs, Targets::Classes(labels)).expect("counts match"))
}

/// Linear-Gaussian regression `y = x W* + noise`; the loss floor under MSE
/// is the normal-equations optimum.
pub fn least_squares(
    n: usize,
    features: usize,
    targets: usize,
    noise: f64,
    rng: &mut RngStream,
    weights_rng: &mut RngStream,
) -> Result<Dataset> {
    if n < 2 || features == 0 || targets == 0 {
        return Err(DatasetError::Invalid(
            "least-squares needs n >= 2 and nonzero dims".into(),
        ));
    }
    let w = DenseMatrix::from_fn(features, targets, |_, _| weights_rng.standard_normal());
    let inputs = DenseMatrix::from_fn(n, features, |_, _| rng.standard_normal());
    let mut y = DenseMatrix::zeros(n, targets);
    for i in 0..n {
        for t in 0..targets {
            let mut acc = 0.0;
            for f in 0..features {
                acc += inputs.get(i, f) * w.get(f, t);
            }
            y.set(i, t, acc + noise * rng.standard_normal());
        }
    }
    Ok(Dataset::new(inputs, Targets::Values(y)).expect("counts match"))
}

/// Materializes the configured dataset (deterministic per dataset seed).
pub fn load(spec: &DatasetSpec) -> Result<LoadedData> {
    match spec {
        DatasetSpec::Blobs {
            train_size,
            test_size,
            classes,
            features,
            noise,
            seed,
        } => {
            let train = blobs(
                *train_size,
                *classes,
                *features,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TRAIN),
            )?;
            let test = blobs(
                *test_size,
                *classes,
                *features,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TEST),
            )?;
            Ok(LoadedData {
                train,
                test,
                output_dim: *classes,
            })
        }
        DatasetSpec::TwoMoons {
            train_size,
            test_size,
            noise,
            seed,
        } => {
            let train = two_moons(
                *train_size,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TRAIN),
            )?;
            let test = two_moons(
                *test_size,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TEST),
            )?;
            Ok(LoadedData {
                train,
                test,
                output_dim: 2,
            })
        }
        DatasetSpec::LeastSquares {
            train_size,
            test_size,
            features,
            targets,
            noise,
            seed,
        } => {
            // One weight matrix shared by train and test.
            let train = least_squares(
                *train_size,
                *features,
                *targets,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TRAIN),
                &mut RngStream::substream(*seed, STREAM_WEIGHTS),
            )?;
            let test = least_squares(
                *test_size,
                *features,
                *targets,
                *noise,
                &mut RngStream::substream(*seed, STREAM_TEST),
                &mut RngStream::substream(*seed, STREAM_WEIGHTS),
            )?;
            Ok(LoadedData {
                train,
                test,
                output_dim: *targets,
            })
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let max_class = |d: &Dataset| match &d.targets {
                Targets::Classes(c) => c.iter().copied().max().unwrap_or(0),
                Targets::Values(_) => 0,
            };
            let output_dim = max_class(&train).max(max_class(&test)) + 1;
            Ok(LoadedData {
                train,
                test,
                output_dim,
            })
        }
    }
}
