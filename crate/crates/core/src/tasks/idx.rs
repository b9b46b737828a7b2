use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;

use super::TaskError;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: one row of `rows·cols` pixels in `[0, 1]` per item.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub pixels: Tensor,
    pub rows: usize,
    pub cols: usize,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.rows()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32, TaskError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| TaskError::Format {
            offset: self.pos,
            reason: format!("truncated header while reading {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<(), TaskError> {
        let found = self.u32("magic number")?;
        if found != expected {
            return Err(TaskError::Format {
                offset: 0,
                reason: format!("bad magic {found:#010x}, expected {expected:#010x}"),
            });
        }
        Ok(())
    }

    fn body(&self, len: usize) -> Result<&'a [u8], TaskError> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(TaskError::Format {
                offset: self.bytes.len(),
                reason: format!("truncated payload: header promises {len} bytes, file holds {have}"),
            });
        }
        if have > len {
            return Err(TaskError::Format {
                offset: self.pos + len,
                reason: format!("{} trailing bytes after payload", have - len),
            });
        }
        Ok(&self.bytes[self.pos..])
    }
}

/// Parses a big-endian IDX3 image file. Pixels are scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, TaskError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IDX_IMAGES_MAGIC)?;
    let n = r.u32("item count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| TaskError::Format { offset: 4, reason: "image dimensions overflow".into() })?;
    let body = r.body(len)?;
    let data = body.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(IdxImages { pixels: Tensor::from_parts(vec![n, rows * cols], data), rows, cols })
}

/// Parses a big-endian IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, TaskError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IDX_LABELS_MAGIC)?;
    let n = r.u32("item count")? as usize;
    Ok(r.body(n)?.to_vec())
}

/// Loads an image file and its label file, checking that counts agree.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<u8>), TaskError> {
    let images = fs::read(images_path).map_err(|e| TaskError::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| TaskError::io(labels_path, e))?;
    let images = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if images.count() != labels.len() {
        return Err(TaskError::Format {
            offset: 4,
            reason: format!("{} images but {} labels", images.count(), labels.len()),
        });
    }
    Ok((images, labels))
}

/// Serialises raw pixel bytes as an IDX3 image file.
pub fn encode_idx_images(pixels: &[u8], rows: usize, cols: usize) -> Vec<u8> {
    let n = pixels.len().checked_div(rows * cols).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&pixels[..n * rows * cols]);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
