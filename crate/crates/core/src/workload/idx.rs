//! Reader and writer for the IDX tensor format used by the MNIST files:
//! a big-endian magic number, big-endian dimension sizes, then raw bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Raw image tensor: `count` images of `rows x cols` bytes.
#[derive(Debug)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..expected].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let payload = &bytes[8.min(bytes.len())..];
    if payload.len() < count {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload[..count].to_vec())
}

pub fn write_idx_images(
    path: &Path,
    rows: usize,
    cols: usize,
    images: &[u8],
) -> Result<()> {
    assert_eq!(images.len() % (rows * cols), 0);
    let count = images.len() / (rows * cols);
    let mut bytes = Vec::with_capacity(16 + images.len());
    bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(count as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(images);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
