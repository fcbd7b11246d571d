//! Dataset layout under the data root:
//!
//! ```text
//! mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! fashion-mnist/{images-idx3,labels-idx1}-ubyte[.gz]
//! cifar10/{data_batch_1..5,test_batch}.bin[.gz]
//! ```
//!
//! MNIST's train and test files are concatenated; cross-validation runs over
//! all samples.

use std::path::{Path, PathBuf};

use pltanh_core::data::{load_cifar10, load_idx, synthetic_blobs};
use pltanh_core::{DataError, Dataset, Tensor};

use crate::config::{DatasetName, ExperimentConfig};
use crate::error::CliError;

pub fn load(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let root = cfg.data_root();
    let full = match cfg.dataset {
        DatasetName::Mnist => load_mnist(&root.join("mnist"))?,
        DatasetName::FashionMnist => {
            let dir = root.join("fashion-mnist");
            load_idx(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte"))?
        }
        DatasetName::Cifar10 => load_cifar10(&cifar_batches(&root.join("cifar10")))?,
        DatasetName::Blobs => synthetic_blobs(cfg.blob_samples, cfg.blob_classes, cfg.blob_shape, cfg.seed)?,
    };
    match cfg.subset {
        Some(n) if n > full.len() => Err(CliError::Config(format!(
            "subset {n} exceeds the {} samples of {}",
            full.len(),
            cfg.dataset.as_str()
        ))),
        Some(n) => Ok(full.subset(n)?),
        None => Ok(full),
    }
}

pub fn load_mnist(dir: &Path) -> Result<Dataset, DataError> {
    let split = |name: &str| {
        load_idx(
            &dir.join(format!("{name}-images-idx3-ubyte")),
            &dir.join(format!("{name}-labels-idx1-ubyte")),
        )
    };
    concat(&split("train")?, &split("t10k")?)
}

fn cifar_batches(dir: &Path) -> Vec<PathBuf> {
    (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(["test_batch.bin".to_string()])
        .map(|name| dir.join(name))
        .collect()
}

/// `a` followed by `b`; both must share image shape and class count.
pub fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset, DataError> {
    if a.image_shape() != b.image_shape() || a.classes != b.classes {
        return Err(DataError::Invalid(format!(
            "cannot join {:?}/{} with {:?}/{}",
            a.image_shape(),
            a.classes,
            b.image_shape(),
            b.classes
        )));
    }
    let mut shape = a.images.shape().to_vec();
    shape[0] += b.len();
    let data = [a.images.data(), b.images.data()].concat();
    let images = Tensor::new(shape, data).map_err(|e| DataError::Invalid(e.to_string()))?;
    let labels = [a.labels.as_slice(), &b.labels].concat();
    Dataset::new(a.name.clone(), images, labels, a.classes)
}
