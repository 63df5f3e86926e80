//! CIFAR-10 binary format: fixed 3073-byte records, one label byte (0-9)
//! followed by the red, green and blue planes of a 32×32 image, each 1024
//! bytes in row-major order.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{io_err, LabError, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const CLASSES: usize = 10;

/// Raw records before scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Records {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl Records {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Records> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(LabError::Format { path: path.into(), len: bytes.len() as u64, record: RECORD_BYTES });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for (index, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(LabError::CorruptRecord { path: path.into(), index, label: rec[0] });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(Records { labels, pixels })
}

pub fn encode(records: &Records) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for i in 0..records.len() {
        out.push(records.labels[i]);
        out.extend_from_slice(records.image(i));
    }
    out
}

pub fn read_records(path: &Path) -> Result<Records> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(path, &bytes)
}

pub fn write_records(path: &Path, records: &Records) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&encode(records)).map_err(io_err(path))
}

/// Reads a binary batch as `[3, 32, 32]` samples scaled to `[0, 1]`.
/// Standardization is left to the caller so that statistics can come from
/// the training split.
pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    let records = read_records(path)?;
    let inputs = records.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels = records.labels.iter().map(|&l| l as usize).collect();
    Dataset::new(vec![CHANNELS, SIDE, SIDE], inputs, labels, CLASSES)
}
