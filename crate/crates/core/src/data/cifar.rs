//! CIFAR-10 binary version: `data_batch_{1..5}.bin` and `test_batch.bin`,
//! each 10000 records of one label byte followed by 3072 pixel bytes (the
//! red plane, then green, then blue, each 32×32 row-major).

use std::path::Path;

use super::{fnv1a, read_file, DatasetSplit, LabeledSet, Normalization, SplitLimits, FNV_OFFSET};
use crate::error::{Error, Result};

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const RECORDS_PER_FILE: usize = 10_000;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";
const VAL_COUNT: usize = 10_000;

/// One undecoded CIFAR-10 record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

/// Splits a byte buffer into records. The buffer length must be a multiple
/// of 3073 and every label must be in `0..=9`.
pub fn decode_cifar_records(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::format(
            path,
            format!(
                "size {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record length",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                return Err(Error::format(
                    path,
                    format!("record {i} has label byte {}", rec[0]),
                ));
            }
            Ok(CifarRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn encode_cifar_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_LEN);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

fn read_batch(dir: &Path, name: &str, checksum: &mut u64) -> Result<Vec<CifarRecord>> {
    let path = dir.join(name);
    let bytes = read_file(&path)?;
    if bytes.len() != RECORDS_PER_FILE * CIFAR_RECORD_LEN {
        return Err(Error::format(
            &path,
            format!(
                "expected {} bytes ({RECORDS_PER_FILE} records), found {}",
                RECORDS_PER_FILE * CIFAR_RECORD_LEN,
                bytes.len()
            ),
        ));
    }
    *checksum = fnv1a(*checksum, &bytes);
    decode_cifar_records(&bytes, &path)
}

fn to_set(records: &[CifarRecord]) -> LabeledSet {
    let mut images = Vec::with_capacity(records.len() * 3072);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        images.extend(r.pixels.iter().map(|&p| p as f64 / 255.0));
        labels.push(r.label as usize);
    }
    LabeledSet {
        shape: [3, 32, 32],
        images,
        labels,
    }
}

/// Loads CIFAR-10 with the 40000/10000/10000 partition: the first 40000
/// training records are the train split, the last 10000 the validation
/// split. Pixels are scaled to `[0, 1]` and then standardized per channel
/// with statistics of the (possibly limited) train split.
pub fn load_cifar10(dir: &Path, limits: Option<SplitLimits>) -> Result<DatasetSplit> {
    let mut checksum = FNV_OFFSET;
    let mut train_records = Vec::with_capacity(TRAIN_FILES.len() * RECORDS_PER_FILE);
    for name in TRAIN_FILES {
        train_records.extend(read_batch(dir, name, &mut checksum)?);
    }
    let mut test_records = read_batch(dir, TEST_FILE, &mut checksum)?;
    let mut val_records = train_records.split_off(train_records.len() - VAL_COUNT);
    // truncate before widening to f64
    if let Some(l) = limits {
        train_records.truncate(l.train);
        val_records.truncate(l.val);
        test_records.truncate(l.test);
    }

    let mut split = DatasetSplit {
        name: "cifar10".into(),
        train: to_set(&train_records),
        val: to_set(&val_records),
        test: to_set(&test_records),
        num_classes: 10,
        normalization: Normalization::identity(3),
        checksum,
        preprocessing: "scale to [0,1]; per-channel standardization with train-split statistics"
            .into(),
    };
    let norm = Normalization::fit(&split.train);
    norm.apply(&mut split.train);
    norm.apply(&mut split.val);
    norm.apply(&mut split.test);
    split.normalization = norm;
    Ok(split)
}
