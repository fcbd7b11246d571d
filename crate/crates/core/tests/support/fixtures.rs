//! Hand-written parser fixtures.
#![allow(dead_code)]

/// Two 2x3 images written out byte by byte.
pub const IDX_IMAGES: [u8; 28] = [
    0x00, 0x00, 0x08, 0x03, // magic
    0x00, 0x00, 0x00, 0x02, // count
    0x00, 0x00, 0x00, 0x02, // rows
    0x00, 0x00, 0x00, 0x03, // cols
    0, 51, 102, 153, 204, 255, // image 0
    255, 0, 255, 0, 255, 0, // image 1
];
pub const IDX_LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];

/// Label 6, then constant R, G and B planes of 10, 20 and 30.
pub fn cifar_record() -> Vec<u8> {
    let mut record = vec![6u8];
    record.extend(std::iter::repeat_n(10, 1024));
    record.extend(std::iter::repeat_n(20, 1024));
    record.extend(std::iter::repeat_n(30, 1024));
    record
}

/// A 32x32x3 interleaved image with a per-seed byte pattern.
pub fn cifar_image(seed: u8) -> Vec<u8> {
    (0..3 * 32 * 32).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
}
