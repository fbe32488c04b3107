use super::dataset::{ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Parses CIFAR-10 binary batch records (label byte then planar RGB).
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<ImageDataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::Parse {
            offset: bytes.len() - bytes.len() % RECORD_LEN,
            reason: format!("length {} is not a positive multiple of {RECORD_LEN}", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Parse {
                offset: i * RECORD_LEN,
                reason: format!("label byte {} > 9", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    ImageDataset::new(Tensor::new(&[n, 3, 32, 32], pixels)?, labels, Provenance::Cifar10)
}

/// Inverse of [`parse_cifar10_bin`] for pixels that are exact multiples of 1/255.
pub fn encode_cifar10_bin(ds: &ImageDataset) -> Result<Vec<u8>> {
    if ds.channels() != 3 || ds.image_size() != (32, 32) {
        return Err(Error::Data("CIFAR-10 records are 3 x 32 x 32".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * RECORD_LEN);
    for i in 0..ds.len() {
        out.push(ds.labels()[i]);
        out.extend(ds.pixels(i).iter().map(|&p| (p * 255.0).round() as u8));
    }
    Ok(out)
}

/// Reads and concatenates several batch files.
pub fn load_cifar10(paths: &[std::path::PathBuf]) -> Result<ImageDataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let b = std::fs::read(p).map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
        if b.len() % RECORD_LEN != 0 {
            return Err(Error::Data(format!("{}: length not a multiple of {RECORD_LEN}", p.display())));
        }
        bytes.extend(b);
    }
    parse_cifar10_bin(&bytes)
}
