//! Dataset parsers, synthetic data, k-fold splitting and mini-batching.
//!
//! Images are stored as `[N, H, W, C]` `f32` tensors scaled to `[0, 1]`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("CIFAR batch of {0} bytes is not a whole number of 3073-byte records")]
    RecordLength(usize),
    #[error("{0}")]
    Invalid(String),
}

/// An image classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[N, H, W, C]`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        if images.rank() != 4 {
            return Err(DataError::Invalid(format!("images must be [N, H, W, C], got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[H, W, C]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn row_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    /// The first `n` samples.
    pub fn subset(&self, n: usize) -> Result<Dataset, DataError> {
        if n == 0 || n > self.len() {
            return Err(DataError::Invalid(format!(
                "subset of {n} samples requested from {} available",
                self.len()
            )));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        let images = Tensor::new(shape, self.images.data()[..n * self.row_len()].to_vec())
            .expect("prefix of a valid tensor");
        Dataset::new(self.name.clone(), images, self.labels[..n].to_vec(), self.classes)
    }

    /// Images and labels at `indices`, in that order.
    pub fn select<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let row = self.row_len();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend(src[i * row..(i + 1) * row].iter().map(|&v| T::from_f64(v as f64)));
        }
        let [h, w, c] = self.image_shape();
        let images = Tensor::new(vec![indices.len(), h, w, c], data).expect("rows of a valid tensor");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    let slice = bytes.get(at..at + 4).ok_or(DataError::Truncated {
        expected: at + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

fn exact_len(bytes: &[u8], expected: usize) -> Result<(), DataError> {
    match bytes.len() {
        n if n < expected => Err(DataError::Truncated {
            expected,
            actual: n,
        }),
        n if n > expected => Err(DataError::Invalid(format!(
            "{} trailing bytes after {expected}-byte payload",
            n - expected
        ))),
        _ => Ok(()),
    }
}

/// Raw IDX image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    exact_len(bytes, 16 + n * rows * cols)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    exact_len(bytes, 8 + n)?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len() % (rows * cols), 0, "pixels must be whole images");
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, inflating it if it is gzip-compressed. A missing path is
/// retried with a `.gz` suffix.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    let path = if path.exists() {
        path.to_path_buf()
    } else {
        let mut gz = path.as_os_str().to_owned();
        gz.push(".gz");
        let gz = PathBuf::from(gz);
        if gz.exists() {
            gz
        } else {
            path.to_path_buf()
        }
    };
    let raw = fs::read(&path).map_err(io(&path))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io(&path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn scale_pixels(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Builds a dataset from IDX image and label byte buffers.
pub fn idx_from_bytes(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let images = Tensor::new(vec![n, rows, cols, 1], scale_pixels(&pixels))
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(name, images, labels.into_iter().map(usize::from).collect(), classes)
}

/// Loads an IDX image/label pair (plain or gzip). The class count is one
/// more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let name = images_path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    idx_from_bytes(&name, &read_maybe_gz(images_path)?, &read_maybe_gz(labels_path)?)
}

/// One CIFAR-10 record: label byte then R, G and B planes of 32x32.
pub fn encode_cifar_record(label: u8, hwc_pixels: &[u8]) -> Vec<u8> {
    assert_eq!(hwc_pixels.len(), 3 * 32 * 32, "a CIFAR image is 32x32x3");
    let mut out = Vec::with_capacity(CIFAR_RECORD_LEN);
    out.push(label);
    for c in 0..3 {
        out.extend(hwc_pixels.iter().skip(c).step_by(3));
    }
    out
}

/// Parses concatenated CIFAR-10 records into `(labels, HWC pixels)`.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DataError::RecordLength(bytes.len()));
    }
    let plane = 32 * 32;
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN * 3 * plane);
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(record[0]);
        let planes = &record[1..];
        for p in 0..plane {
            pixels.extend([planes[p], planes[plane + p], planes[2 * plane + p]]);
        }
    }
    Ok((labels, pixels))
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset, DataError> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for path in batch_paths {
        let (l, p) = parse_cifar_batch(&read_maybe_gz(path.as_ref())?)?;
        labels.extend(l);
        pixels.extend(p);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(DataError::Invalid(format!("CIFAR-10 label {bad} out of range")));
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 32, 32, 3], scale_pixels(&pixels))
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new("cifar10", images, labels.into_iter().map(usize::from).collect(), 10)
}

/// Each class is a Gaussian blob with its own centre, width and colour,
/// plus pixel noise (standard deviation 0.05). Labels cycle through the
/// classes and are then shuffled.
pub fn synthetic_blobs(n: usize, classes: usize, image_shape: [usize; 3], seed: u64) -> Result<Dataset, DataError> {
    if classes == 0 || n < classes {
        return Err(DataError::Invalid(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    let [h, w, c] = image_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            let cy = rng.random_range(0.2..0.8) * h as f64;
            let cx = rng.random_range(0.2..0.8) * w as f64;
            let sigma = rng.random_range(0.15..0.3) * h.max(w) as f64;
            let colour: Vec<f64> = (0..c).map(|_| rng.random_range(0.3..1.0)).collect();
            let mut img = Vec::with_capacity(h * w * c);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let bump = (-d2 / (2.0 * sigma * sigma)).exp();
                    img.extend(colour.iter().map(|&k| (k * bump) as f32));
                }
            }
            img
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0f32, 0.05).expect("valid deviation");
    let mut data = Vec::with_capacity(n * h * w * c);
    for &label in &labels {
        data.extend(
            prototypes[label]
                .iter()
                .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)),
        );
    }
    let images = Tensor::new(vec![n, h, w, c], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new("blobs", images, labels, classes)
}

/// One fold of a k-fold split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` once and cuts it into `k` contiguous chunks whose sizes
/// differ by at most one. Fold `i` validates on chunk `i`.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    if k < 2 || n < k {
        return Err(DataError::Invalid(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for i in 0..k {
        bounds.push(bounds[i] + n / k + usize::from(i < n % k));
    }
    Ok((0..k)
        .map(|fold| {
            let (lo, hi) = (bounds[fold], bounds[fold + 1]);
            let mut train = order[..lo].to_vec();
            train.extend_from_slice(&order[hi..]);
            FoldSplit {
                fold,
                train,
                validation: order[lo..hi].to_vec(),
            }
        })
        .collect())
}

pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        data[row * classes + l] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one row per label")
}

/// A mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub one_hot: Tensor<T>,
}

/// Yields every index once, in batches of `batch_size` with a short final
/// batch. `shuffle_seed` permutes the order first.
pub struct BatchIter<'a, T> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    position: usize,
    _marker: std::marker::PhantomData<T>,
}

pub fn batch_iter<'a, T: Real>(
    dataset: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> BatchIter<'a, T> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = indices.to_vec();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    BatchIter {
        dataset,
        order,
        batch_size,
        position: 0,
        _marker: std::marker::PhantomData,
    }
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.position >= self.order.len() {
            return None;
        }
        let end = (self.position + self.batch_size).min(self.order.len());
        let (images, labels) = self.dataset.select(&self.order[self.position..end]);
        self.position = end;
        let one_hot = one_hot(&labels, self.dataset.classes);
        Some(Batch {
            images,
            labels,
            one_hot,
        })
    }
}
