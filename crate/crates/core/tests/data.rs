mod support {
    pub mod fixtures;
}

use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use pltanh_core::data::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fixtures::{cifar_image, cifar_record, IDX_IMAGES, IDX_LABELS};

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

#[test]
fn hand_written_idx_fixture() {
    let (n, rows, cols, pixels) = parse_idx_images(&IDX_IMAGES).unwrap();
    assert_eq!((n, rows, cols), (2, 2, 3));
    assert_eq!(pixels, &IDX_IMAGES[16..]);
    assert_eq!(parse_idx_labels(&IDX_LABELS).unwrap(), [7, 3]);
    assert_eq!(encode_idx_images(2, 3, &IDX_IMAGES[16..]), IDX_IMAGES);
    assert_eq!(encode_idx_labels(&[7, 3]), IDX_LABELS);

    let ds = idx_from_bytes("fixture", &IDX_IMAGES, &IDX_LABELS).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.image_shape(), [2, 3, 1]);
    assert_eq!(ds.labels, [7, 3]);
    assert_eq!(ds.classes, 8);
    assert_eq!(ds.images.data()[1], 51.0 / 255.0);
    assert_eq!(ds.images.data()[5], 1.0);
    assert_eq!(ds.images.data()[7], 0.0);
}

#[test]
fn idx_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, rows, cols) in [(1, 1, 1), (3, 28, 28), (5, 4, 7), (2, 9, 1), (10, 3, 3), (4, 1, 16)] {
        let pixels: Vec<u8> = (0..n * rows * cols).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let img = encode_idx_images(rows, cols, &pixels);
        let lab = encode_idx_labels(&labels);
        assert_eq!(parse_idx_images(&img).unwrap(), (n, rows, cols, pixels.clone()));
        assert_eq!(parse_idx_labels(&lab).unwrap(), labels);
        let ds = idx_from_bytes("rt", &img, &lab).unwrap();
        let back: Vec<u8> = ds.images.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
    }
}

#[test]
fn idx_errors() {
    let mut bad = IDX_IMAGES;
    bad[3] = 0x01;
    assert!(matches!(
        parse_idx_images(&bad),
        Err(DataError::BadMagic { expected: IDX_IMAGES_MAGIC, found: 0x0801 })
    ));
    assert!(matches!(
        parse_idx_labels(&IDX_IMAGES),
        Err(DataError::BadMagic { expected: IDX_LABELS_MAGIC, .. })
    ));
    assert!(matches!(
        parse_idx_images(&IDX_IMAGES[..27]),
        Err(DataError::Truncated { expected: 28, actual: 27 })
    ));
    assert!(matches!(parse_idx_images(&IDX_IMAGES[..10]), Err(DataError::Truncated { .. })));
    assert!(matches!(parse_idx_labels(&IDX_LABELS[..9]), Err(DataError::Truncated { .. })));
    assert!(matches!(parse_idx_images(&[]), Err(DataError::Truncated { .. })));
    let one_label = encode_idx_labels(&[1]);
    assert!(matches!(
        idx_from_bytes("x", &IDX_IMAGES, &one_label),
        Err(DataError::CountMismatch { images: 2, labels: 1 })
    ));
}

#[test]
fn hand_written_cifar_record() {
    let record = cifar_record();
    let (labels, pixels) = parse_cifar_batch(&record).unwrap();
    assert_eq!(labels, [6]);
    assert_eq!(&pixels[..6], [10, 20, 30, 10, 20, 30]);
    assert_eq!(encode_cifar_record(6, &pixels), record);
}

#[test]
fn cifar_round_trips() {
    for count in 1..=6u8 {
        let mut batch = Vec::new();
        let mut images = Vec::new();
        for i in 0..count {
            let img = cifar_image(i * 17);
            batch.extend(encode_cifar_record(i % 10, &img));
            images.extend(img);
        }
        let (labels, pixels) = parse_cifar_batch(&batch).unwrap();
        assert_eq!(labels, (0..count).map(|i| i % 10).collect::<Vec<_>>());
        assert_eq!(pixels, images);
    }
}

#[test]
fn cifar_errors() {
    let record = encode_cifar_record(1, &cifar_image(0));
    assert!(matches!(
        parse_cifar_batch(&record[..3072]),
        Err(DataError::RecordLength(3072))
    ));
    let mut two = record.clone();
    two.extend(&record[..100]);
    assert!(matches!(parse_cifar_batch(&two), Err(DataError::RecordLength(3173))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let mut bad = record.clone();
    bad[0] = 12;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_cifar10(&[&path]), Err(DataError::Invalid(_))));
}

#[test]
fn files_plain_and_gzipped() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("digits");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("images-idx3-ubyte.gz"), gzip(&IDX_IMAGES)).unwrap();
    std::fs::write(sub.join("labels-idx1-ubyte"), IDX_LABELS).unwrap();
    // The image path is given without its .gz suffix.
    let ds = load_idx(&sub.join("images-idx3-ubyte"), &sub.join("labels-idx1-ubyte")).unwrap();
    assert_eq!(ds.name, "digits");
    assert_eq!(ds.labels, [7, 3]);

    let batch = [encode_cifar_record(2, &cifar_image(1)), encode_cifar_record(9, &cifar_image(2))].concat();
    std::fs::write(sub.join("b1.bin"), gzip(&batch)).unwrap();
    std::fs::write(sub.join("b2.bin"), &batch).unwrap();
    let ds = load_cifar10(&[sub.join("b1.bin"), sub.join("b2.bin")]).unwrap();
    assert_eq!(ds.labels, [2, 9, 2, 9]);
    assert_eq!(ds.image_shape(), [32, 32, 3]);

    let missing = load_idx(&sub.join("nope"), &sub.join("labels-idx1-ubyte")).unwrap_err();
    assert!(matches!(missing, DataError::Io { .. }));
}

#[test]
fn blobs_are_balanced_and_deterministic() {
    let a = synthetic_blobs(60, 3, [8, 8, 3], 1).unwrap();
    let b = synthetic_blobs(60, 3, [8, 8, 3], 1).unwrap();
    assert_eq!(a, b);
    for c in 0..3 {
        assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 20);
    }
    assert_ne!(a, synthetic_blobs(60, 3, [8, 8, 3], 2).unwrap());
    assert!(synthetic_blobs(2, 3, [8, 8, 3], 1).is_err());
}

#[test]
fn batches_cover_indices_once() {
    let ds = synthetic_blobs(50, 5, [4, 4, 1], 3).unwrap();
    let idx: Vec<usize> = (0..50).step_by(2).collect();
    let mut seen = Vec::new();
    let mut sizes = Vec::new();
    for batch in batch_iter::<f64>(&ds, &idx, 8, Some(9)) {
        sizes.push(batch.labels.len());
        assert_eq!(batch.images.shape()[0], batch.labels.len());
        assert_eq!(batch.one_hot.shape(), [batch.labels.len(), 5]);
        seen.extend(batch.labels);
    }
    assert_eq!(sizes, [8, 8, 8, 1]);
    let mut expected: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
    expected.sort();
    seen.sort();
    assert_eq!(seen, expected);
}

proptest! {
    #[test]
    fn idx_parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
        let _ = parse_cifar_batch(&bytes);
    }

    #[test]
    fn truncated_idx_is_rejected(n in 1usize..6, rows in 1usize..6, cols in 1usize..6, cut in 1usize..20) {
        let img = encode_idx_images(rows, cols, &vec![1u8; n * rows * cols]);
        let cut = cut.min(img.len());
        prop_assert!(parse_idx_images(&img[..img.len() - cut]).is_err());
    }
}
