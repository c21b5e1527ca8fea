//! CIFAR-10 binary format: 3073-byte records, a label byte followed by the
//! red, green and blue 32x32 planes, each row-major.

use std::fs;
use std::path::Path;

use super::{DatasetSplit, ScaleTag, CLASSES, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 1 + 3 * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORDS_PER_BATCH: usize = 10_000;
pub const BATCH_FILE_BYTES: usize = RECORD_BYTES * RECORDS_PER_BATCH;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub(crate) fn parse_records(path: &Path, bytes: &[u8]) -> Result<DatasetSplit> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(ingestion(
            path,
            format!("length {} is not a multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(ingestion(path, format!("record {i}: label byte {label} outside 0..=9")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    DatasetSplit::new(
        Tensor::from_vec(&[n, 3, IMAGE_SIDE, IMAGE_SIDE], pixels)?,
        labels,
        vec![ScaleTag::Original; n],
    )
}

/// Reads any file of whole records (used for subsets and scaled sets).
pub fn read_batch_file(path: &Path) -> Result<DatasetSplit> {
    let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    parse_records(path, &bytes)
}

fn read_standard_batch(path: &Path) -> Result<DatasetSplit> {
    let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    if bytes.len() != BATCH_FILE_BYTES {
        return Err(ingestion(
            path,
            format!("length {} != {BATCH_FILE_BYTES} bytes", bytes.len()),
        ));
    }
    parse_records(path, &bytes)
}

/// Loads the five training batches and the test batch. Any missing or
/// malformed file fails the whole load.
pub fn load_cifar10(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let parts = TRAIN_FILES
        .iter()
        .map(|f| read_standard_batch(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DatasetSplit> = parts.iter().collect();
    let train = DatasetSplit::concat(&refs)?;
    let test = read_standard_batch(&dir.join(TEST_FILE))?;
    Ok((train, test))
}

/// Like [`load_cifar10`] but accepts batch files of any whole number of
/// records, as written by the synthetic generator or by subsetting.
pub fn load_batch_dir(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let parts = TRAIN_FILES
        .iter()
        .map(|f| read_batch_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DatasetSplit> = parts.iter().collect();
    let train = DatasetSplit::concat(&refs)?;
    let test = read_batch_file(&dir.join(TEST_FILE))?;
    Ok((train, test))
}

/// Writes `split` as CIFAR records; pixels are rounded and clamped to bytes.
pub fn write_batch_file(path: &Path, split: &DatasetSplit) -> Result<()> {
    let per = RECORD_BYTES - 1;
    let mut out = Vec::with_capacity(split.len() * RECORD_BYTES);
    for i in 0..split.len() {
        out.push(split.labels[i] as u8);
        let px = &split.images.data()[i * per..(i + 1) * per];
        out.extend(px.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sidecar with one scale-tag byte per record.
pub fn write_tag_file(path: &Path, split: &DatasetSplit) -> Result<()> {
    fs::write(path, split.tags.iter().map(|t| t.code()).collect::<Vec<u8>>())?;
    Ok(())
}

pub fn read_tag_file(path: &Path, split: &mut DatasetSplit) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    if bytes.len() != split.len() {
        return Err(ingestion(path, format!("{} tags for {} records", bytes.len(), split.len())));
    }
    split.tags = bytes
        .iter()
        .map(|&b| ScaleTag::from_code(b).ok_or_else(|| ingestion(path, format!("bad tag byte {b}"))))
        .collect::<Result<_>>()?;
    Ok(())
}
