//! Datasets: CIFAR-10 binary and MNIST IDX readers, deterministic
//! train/validation/test splits, normalization, and synthetic generators.

mod cifar;
mod mnist;
mod synth;

pub use cifar::{
    decode_cifar_records, encode_cifar_records, load_cifar10, CifarRecord, CIFAR_RECORD_LEN,
};
pub use mnist::{
    decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, load_mnist_idx,
    IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synth::{
    random_rotation, synth_gaussian, synth_mixture, synthetic_gaussian_split,
    synthetic_image_split, CovarianceSpec, SyntheticGaussian, SyntheticImages,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images of one partition stored contiguously, `[C, H, W]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub shape: [usize; 3],
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(shape: [usize; 3], images: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::dim(format!(
                "{} pixel values for {} images of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(LabeledSet {
            shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image_tensor(&self, i: usize) -> Tensor {
        Tensor::from_parts(self.shape.to_vec(), self.image(i).to_vec())
    }

    /// Contiguous `[len, C, H, W]` batch of the given indices.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend(self.shape);
        Tensor::from_parts(shape, data)
    }

    fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.images.truncate(n * self.image_len());
    }
}

/// Per-channel affine normalization `(x − mean[c]) / std[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and standard deviation per channel. A channel with
    /// (numerically) zero spread gets std 1.
    pub fn fit(set: &LabeledSet) -> Self {
        let [c, h, w] = set.shape;
        let plane = h * w;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        let count = (set.len() * plane) as f64;
        for img in set.images.chunks_exact(c * plane) {
            for ch in 0..c {
                mean[ch] += img[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for img in set.images.chunks_exact(c * plane) {
            for ch in 0..c {
                std[ch] += img[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
        }
        std.iter_mut().for_each(|s| {
            *s = (*s / count).sqrt();
            // constant channels leave rounding residue, not an exact zero
            if *s < 1e-12 {
                *s = 1.0;
            }
        });
        Normalization { mean, std }
    }

    pub fn apply(&self, set: &mut LabeledSet) {
        let plane = set.shape[1] * set.shape[2];
        for img in set.images.chunks_exact_mut(set.shape[0] * plane) {
            for (ch, px) in img.chunks_exact_mut(plane).enumerate() {
                px.iter_mut()
                    .for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
            }
        }
    }
}

/// Per-partition size caps; each partition is truncated from the front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitLimits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Train/validation/test partitions of one labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
    pub normalization: Normalization,
    /// FNV-1a hash of the source bytes (or generator parameters).
    pub checksum: u64,
    /// Preprocessing applied to the raw pixels, for reports.
    pub preprocessing: String,
}

impl DatasetSplit {
    pub fn input_shape(&self) -> [usize; 3] {
        self.train.shape
    }

    pub(crate) fn apply_limits(&mut self, limits: Option<SplitLimits>) {
        if let Some(l) = limits {
            self.train.truncate(l.train);
            self.val.truncate(l.val);
            self.test.truncate(l.test);
        }
    }
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// FNV-1a 64 of a byte string, as used for dataset and checkpoint checksums.
pub fn checksum(bytes: &[u8]) -> u64 {
    fnv1a(FNV_OFFSET, bytes)
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
