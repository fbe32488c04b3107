use std::path::Path;

use super::dataset::{ImageDataset, Provenance};
use crate::binio::{put_f32, put_u32, put_u8, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"GCDS";
pub const CACHE_VERSION: u32 = 1;

/// Serializes a dataset: magic, version, provenance tag, `N C H W` as u32,
/// `N` label bytes, then pixels as little-endian f32.
pub fn encode_dataset(ds: &ImageDataset) -> Vec<u8> {
    let s = ds.images().shape();
    let mut out = Vec::with_capacity(25 + ds.len() + 4 * ds.images().numel());
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    put_u8(&mut out, ds.provenance.tag());
    for &d in s {
        put_u32(&mut out, d as u32);
    }
    out.extend_from_slice(ds.labels());
    for &p in ds.images().data() {
        put_f32(&mut out, p);
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<ImageDataset> {
    let mut r = Reader::new(bytes, "dataset cache");
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "not a dataset cache".into(),
        });
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Parse {
            offset: 4,
            reason: format!("unsupported cache version {version}"),
        });
    }
    let provenance = Provenance::from_tag(r.u8()?)?;
    let mut shape = [0usize; 4];
    for d in shape.iter_mut() {
        *d = r.u32()? as usize;
    }
    let labels = r.take(shape[0])?.to_vec();
    let n: usize = shape.iter().product();
    let mut pixels = Vec::with_capacity(n);
    for _ in 0..n {
        pixels.push(r.f32()?);
    }
    r.finish()?;
    ImageDataset::new(Tensor::new(&shape, pixels)?, labels, provenance)
}

pub fn save_dataset(ds: &ImageDataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ImageDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shapes, ShapeClass};

    #[test]
    fn round_trip() {
        let ds = synth_shapes(3, ShapeClass::Circles, 2).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
    }

    #[test]
    fn truncated_cache() {
        let ds = synth_shapes(1, ShapeClass::Circles, 2).unwrap();
        let bytes = encode_dataset(&ds);
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_dataset(b"GCDX").is_err());
    }
}
