use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::{ImageDataset, Provenance};
use super::resize::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded contents of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `count x rows x cols` pixels scaled to `[0, 1]`.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<f32>,
    },
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            reason: format!("header truncated: need {} bytes, have {}", offset + 4, bytes.len()),
        })
}

/// Parses an uncompressed IDX image (`0x803`) or label (`0x801`) file.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("bad magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            reason: format!("dimensions {dims:?} overflow"),
        })?;
    if bytes.len() < expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            reason: format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Parse {
            offset: expected,
            reason: format!("trailing data: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let payload = &bytes[header..];
    Ok(match magic {
        IMAGES_MAGIC => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.iter().map(|&b| b as f32 / 255.0).collect(),
        },
        _ => IdxData::Labels(payload.to_vec()),
    })
}

/// Encodes raw image bytes as an IDX image file.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Pairs parsed images with labels, resizing each image to `size x size`.
pub fn idx_to_dataset(images: IdxData, labels: IdxData, size: usize, provenance: Provenance) -> Result<ImageDataset> {
    let (count, rows, cols, pixels) = match images {
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows, cols, pixels),
        IdxData::Labels(_) => return Err(Error::Data("expected an IDX image file".into())),
    };
    let labels = match labels {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(Error::Data("expected an IDX label file".into())),
    };
    if labels.len() != count {
        return Err(Error::Data(format!("{count} images but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("label {bad} outside 0..=9")));
    }
    let plane = rows * cols;
    let mut data = Vec::with_capacity(count * size * size);
    for i in 0..count {
        let img = Tensor::new(&[1, rows, cols], pixels[i * plane..(i + 1) * plane].to_vec())?;
        let img = if rows == size && cols == size {
            img
        } else {
            resize_bilinear(&img, size, size)?
        };
        data.extend_from_slice(img.data());
    }
    ImageDataset::new(Tensor::new(&[count, 1, size, size], data)?, labels, provenance)
}

/// Loads an IDX image/label file pair (optionally gzipped).
pub fn load_idx_pair(images: &Path, labels: &Path, size: usize, provenance: Provenance) -> Result<ImageDataset> {
    let im = parse_idx(&read_maybe_gz(images)?)?;
    let lb = parse_idx(&read_maybe_gz(labels)?)?;
    idx_to_dataset(im, lb, size, provenance)
}
