//! MNIST in IDX format (big-endian headers).

use std::path::Path;

use super::{fnv1a, read_file, DatasetSplit, LabeledSet, Normalization, SplitLimits, FNV_OFFSET};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw IDX image file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated IDX header"))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            format!("bad IDX magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

pub fn decode_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(Error::format(
            path,
            format!(
                "header declares {count} images of {rows}x{cols} but payload has {} bytes",
                body.len()
            ),
        ));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn decode_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            path,
            format!(
                "header declares {count} labels but payload has {} bytes",
                body.len()
            ),
        ));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_pair(dir: &Path, images: &str, labels: &str, checksum: &mut u64) -> Result<LabeledSet> {
    let (ip, lp) = (dir.join(images), dir.join(labels));
    let (ib, lb) = (read_file(&ip)?, read_file(&lp)?);
    *checksum = fnv1a(fnv1a(*checksum, &ib), &lb);
    let imgs = decode_idx_images(&ib, &ip)?;
    let labels = decode_idx_labels(&lb, &lp)?;
    if imgs.count() != labels.len() {
        return Err(Error::format(
            &lp,
            format!("{} labels for {} images", labels.len(), imgs.count()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(&lp, format!("label {bad} out of range")));
    }
    LabeledSet::new(
        [1, imgs.rows, imgs.cols],
        imgs.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels.iter().map(|&l| l as usize).collect(),
    )
}

/// Loads MNIST from the four standard IDX files. Pixels are scaled to
/// `[0, 1]`. The last sixth of the training file (10000 of 60000) is held
/// out for validation.
pub fn load_mnist_idx(dir: &Path, limits: Option<SplitLimits>) -> Result<DatasetSplit> {
    let mut checksum = FNV_OFFSET;
    let full = read_pair(
        dir,
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        &mut checksum,
    )?;
    let test = read_pair(
        dir,
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        &mut checksum,
    )?;
    let n_val = full.len() / 6;
    let n_train = full.len() - n_val;
    let per = full.image_len();
    let train = LabeledSet::new(
        full.shape,
        full.images[..n_train * per].to_vec(),
        full.labels[..n_train].to_vec(),
    )?;
    let val = LabeledSet::new(
        full.shape,
        full.images[n_train * per..].to_vec(),
        full.labels[n_train..].to_vec(),
    )?;
    let mut split = DatasetSplit {
        name: "mnist".into(),
        train,
        val,
        test,
        num_classes: 10,
        normalization: Normalization::identity(1),
        checksum,
        preprocessing: "scale to [0,1]".into(),
    };
    split.apply_limits(limits);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_is_checked() {
        let imgs = IdxImages {
            rows: 28,
            cols: 28,
            pixels: vec![0; 2 * 784],
        };
        let mut bytes = encode_idx_images(&imgs);
        assert_eq!(decode_idx_images(&bytes, Path::new("x")).unwrap(), imgs);
        bytes[3] = 0x01;
        assert!(decode_idx_images(&bytes, Path::new("x")).is_err());
        assert!(decode_idx_labels(&encode_idx_images(&imgs), Path::new("x")).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut bytes = encode_idx_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(decode_idx_labels(&bytes, Path::new("x")).is_err());
    }
}
