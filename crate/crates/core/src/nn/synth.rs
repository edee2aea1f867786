//! Deterministic synthetic blob dataset used to train and probe the fixture.
//!
//! Class 0 places a bright 8×8 blob in the top-left quadrant, class 1 in the
//! bottom-right quadrant. Blobs sit within [`JITTER`] pixels of the image
//! corner so that the fixture's border-aware filters can tell them apart
//! after global average pooling.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::preprocess::standardize;
use crate::tensor::Tensor4;

pub const IMAGE_SIZE: usize = 32;
pub const BLOB_SIZE: usize = 8;
/// Maximum offset of the blob from its image corner.
pub const JITTER: usize = 3;
pub const BACKGROUND_MAX: f64 = 0.2;
pub const BLOB_MIN: f64 = 0.8;
pub const FIXTURE_MEAN: f64 = 0.5;
pub const FIXTURE_STD: f64 = 0.5;

/// Half-open integer rectangle `[top, top+height) × [left, left+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BlobBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `1×1×32×32`, values in `[0, 1]`.
    pub image: Tensor4,
    pub label: usize,
    pub blob_box: BlobBox,
}

impl SynthSample {
    /// The image standardized with the fixture's mean/std, ready for the model.
    pub fn model_input(&self) -> Tensor4 {
        standardize(&self.image, &[FIXTURE_MEAN], &[FIXTURE_STD])
    }

    /// Ground-truth saliency: 1 inside the blob, decaying with distance outside.
    pub fn oracle_saliency(&self) -> crate::tensor::Map2 {
        oracle_saliency(&self.blob_box, IMAGE_SIZE, IMAGE_SIZE)
    }
}

pub fn oracle_saliency(blob: &BlobBox, height: usize, width: usize) -> crate::tensor::Map2 {
    let mut map = crate::tensor::Map2::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            let dy = if y < blob.top { blob.top - y } else { (y + 1).saturating_sub(blob.bottom()) };
            let dx = if x < blob.left { blob.left - x } else { (x + 1).saturating_sub(blob.right()) };
            let d = libm::sqrt((dy * dy + dx * dx) as f64);
            map.data[y * width + x] = 1.0 / (1.0 + d);
        }
    }
    map
}

fn blob_for_class(rng: &mut ChaCha8Rng, label: usize) -> BlobBox {
    let dy = rng.gen_range(0..=JITTER);
    let dx = rng.gen_range(0..=JITTER);
    let (top, left) = if label == 0 {
        (dy, dx)
    } else {
        (IMAGE_SIZE - BLOB_SIZE - dy, IMAGE_SIZE - BLOB_SIZE - dx)
    };
    BlobBox { top, left, height: BLOB_SIZE, width: BLOB_SIZE }
}

fn paint(rng: &mut ChaCha8Rng, blobs: &[BlobBox]) -> Tensor4 {
    let mut image = Tensor4::zeros([1, 1, IMAGE_SIZE, IMAGE_SIZE]);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let v = if blobs.iter().any(|b| b.contains(y, x)) {
                rng.gen_range(BLOB_MIN..=1.0)
            } else {
                rng.gen_range(0.0..=BACKGROUND_MAX)
            };
            image.set(0, 0, y, x, v);
        }
    }
    image
}

/// `n` samples alternating between class 0 and class 1.
pub fn make_synthetic_dataset(seed: u64, n: usize) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let blob_box = blob_for_class(&mut rng, label);
            let image = paint(&mut rng, &[blob_box]);
            SynthSample { image, label, blob_box }
        })
        .collect()
}

/// An image carrying both a class-0 and a class-1 blob. Returns the image and
/// the two boxes in class order.
pub fn make_two_blob_image(seed: u64) -> (Tensor4, [BlobBox; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = blob_for_class(&mut rng, 0);
    let b = blob_for_class(&mut rng, 1);
    (paint(&mut rng, &[a, b]), [a, b])
}
