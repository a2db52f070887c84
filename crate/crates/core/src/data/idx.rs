//! Reader for the big-endian IDX files MNIST-style datasets ship in.
//! Only unsigned-byte payloads are supported; pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use super::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::model::Matrix;

const UBYTE: u8 = 0x08;

fn parse_header(bytes: &[u8], expected_dims: u8) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Idx("file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(
            "magic number must start with two zero bytes".into(),
        ));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Idx(format!(
            "unsupported element type 0x{:02x}",
            bytes[2]
        )));
    }
    let ndim = bytes[3];
    if ndim != expected_dims {
        return Err(Error::Idx(format!(
            "expected {expected_dims} dimensions, found {ndim}"
        )));
    }
    let header = 4 + 4 * ndim as usize;
    if bytes.len() < header {
        return Err(Error::Idx("truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = &bytes[header..];
    let expected: usize = dims.iter().product();
    if payload.len() != expected {
        return Err(Error::Idx(format!(
            "payload has {} bytes, dimensions {dims:?} require {expected}",
            payload.len()
        )));
    }
    Ok((dims, payload))
}

/// Parse an image file (magic `0x00000803`): returns `(n, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let (dims, payload) = parse_header(bytes, 3)?;
    let pixels = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok((dims[0], dims[1], dims[2], pixels))
}

/// Parse a label file (magic `0x00000801`).
pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let (_, payload) = parse_header(bytes, 1)?;
    Ok(payload.iter().map(|&b| b as u32).collect())
}

/// Load an image/label pair into a classification dataset with input shape
/// `[rows, cols, 1]`.
pub fn load_idx(images: &Path, labels: &Path, name: &str, split: Split) -> Result<Dataset> {
    let read = |p: &Path| fs::read(p).map_err(|e| Error::io(p, e));
    let (n, rows, cols, pixels) = read_idx_images(&read(images)?)?;
    let labels = read_idx_labels(&read(labels)?)?;
    if labels.len() != n {
        return Err(Error::Idx(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    Dataset::new(
        name,
        split,
        vec![rows, cols, 1],
        Matrix::from_vec(n, rows * cols, pixels)?,
        Labels::Classes(labels),
    )
}
