//! IDX image and label files (the MNIST distribution format).
//!
//! Only the unsigned-byte variants are read: images are a rank-3 array
//! `[count, rows, cols]` and labels a rank-1 array `[count]`, each prefixed by
//! a big-endian magic number and big-endian `u32` dimensions.

use std::fs;
use std::path::{Path, PathBuf};

use ilvm_core::distributions::DistributionError;
use ilvm_core::{SampleBank, Tensor};
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found} (expected {expected})")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Bank(#[from] DistributionError),
}

/// Images flattened row-major to `[count, rows * cols]` with pixels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    // The magic is checked as soon as it is readable: a short file of the
    // wrong kind is reported as the wrong kind.
    if bytes.len() >= 4 && word(0) != magic {
        return Err(IdxError::BadMagic { expected: magic, found: word(0) });
    }
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], IdxError> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..expected])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let dims = header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let data = payload(bytes, 16, count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: data.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let count = header(bytes, LABELS_MAGIC, 1)?[0];
    Ok(payload(bytes, 8, count)?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an image/label pair into a sample bank and its label vector.
pub fn load_idx(images: &Path, labels: &Path, seed: u64) -> Result<(SampleBank, Vec<u8>), IdxError> {
    let img = parse_images(&read(images)?)?;
    let lab = parse_labels(&read(labels)?)?;
    if img.count != lab.len() {
        return Err(IdxError::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    let width = img.rows * img.cols;
    let samples = Tensor::matrix(img.count, width, img.pixels).map_err(DistributionError::from)?;
    Ok((SampleBank::new(samples, seed)?, lab))
}

/// Serializes images back to IDX bytes. Pixels are rounded to the nearest
/// byte after scaling by 255.
pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend(images.pixels.iter().map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
