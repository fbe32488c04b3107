//! Binary model container: header, layer specs, parameters, gradient memory.

use std::path::Path;

use crate::binio::{put_f64, put_u32, put_u64, put_u8, Reader};
use crate::error::{Error, Result};
use crate::gradcon::{GradientMemory, LayerMemory};
use crate::nn::{Activation, Layer, LayerKind, LayerSpec, ModelParams, Variant};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"GCON";
pub const VERSION: u32 = 1;

fn put_spec(out: &mut Vec<u8>, s: &LayerSpec) {
    put_u8(
        out,
        match s.kind {
            LayerKind::Conv => 0,
            LayerKind::ConvTranspose => 1,
        },
    );
    for v in [s.in_channels, s.out_channels, s.kernel, s.stride, s.pad] {
        put_u32(out, v as u32);
    }
    put_u8(
        out,
        match s.activation {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        },
    );
    put_u8(out, s.has_bias as u8);
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    let at = r.pos();
    let kind = match r.u8()? {
        0 => LayerKind::Conv,
        1 => LayerKind::ConvTranspose,
        k => {
            return Err(Error::Checkpoint(format!("unknown layer kind {k} at byte {at}")));
        }
    };
    let mut f = [0usize; 5];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let activation = match r.u8()? {
        0 => Activation::None,
        1 => Activation::Relu,
        2 => Activation::Sigmoid,
        a => return Err(Error::Checkpoint(format!("unknown activation {a}"))),
    };
    let has_bias = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad bias flag {b}"))),
    };
    if f[..3].contains(&0) || f[3] == 0 {
        return Err(Error::Checkpoint(format!("degenerate layer spec {f:?}")));
    }
    Ok(LayerSpec {
        kind,
        in_channels: f[0],
        out_channels: f[1],
        kernel: f[2],
        stride: f[3],
        pad: f[4],
        activation,
        has_bias,
    })
}

fn put_tensor<T: Element>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for v in t.data() {
        put_f64(out, v.as_f64());
    }
}

fn read_tensor(r: &mut Reader, shape: &[usize]) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f64()?);
    }
    Tensor::new(shape, data)
}

/// Serializes a model and its gradient memory. Values are written as f64.
pub fn encode_checkpoint<T: Element>(model: &ModelParams<T>, memory: &GradientMemory<T>) -> Result<Vec<u8>> {
    memory.check_model(model)?;
    let mut out = Vec::with_capacity(8 * (2 * model.param_count()) + 256);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u8(
        &mut out,
        match model.variant {
            Variant::Cae => 0,
            Variant::Vae => 1,
        },
    );
    put_u32(&mut out, model.in_channels as u32);
    put_u32(&mut out, model.input_size as u32);
    put_u32(&mut out, model.encoder.len() as u32);
    put_u32(&mut out, model.decoder.len() as u32);
    for l in model.encoder.iter().chain(&model.decoder) {
        put_spec(&mut out, &l.spec);
    }
    for p in model.parameters() {
        put_tensor(&mut out, p);
    }
    put_u64(&mut out, memory.count());
    put_u8(&mut out, memory.include_bias() as u8);
    for l in memory.layers() {
        for p in l.pieces() {
            put_tensor(&mut out, p);
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams<f64>, GradientMemory<f64>)> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4).map_err(|_| Error::Checkpoint("file too short".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} unsupported (expected {VERSION})"
        )));
    }
    let variant = match r.u8()? {
        0 => Variant::Cae,
        1 => Variant::Vae,
        v => return Err(Error::Checkpoint(format!("unknown variant tag {v}"))),
    };
    let in_channels = r.u32()? as usize;
    let input_size = r.u32()? as usize;
    let n_enc = r.u32()? as usize;
    let n_dec = r.u32()? as usize;
    if n_enc == 0 || n_dec == 0 || n_enc + n_dec > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer counts {n_enc}/{n_dec}")));
    }
    let specs = (0..n_enc + n_dec).map(|_| read_spec(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let weight = read_tensor(&mut r, &spec.weight_shape())?;
        let bias = if spec.has_bias {
            Some(read_tensor(&mut r, &[spec.out_channels])?)
        } else {
            None
        };
        layers.push(Layer { spec, weight, bias });
    }
    let decoder = layers.split_off(n_enc);
    let model = ModelParams {
        variant,
        in_channels,
        input_size,
        encoder: layers,
        decoder,
    };
    model.validate().map_err(|e| Error::Checkpoint(format!("invalid model: {e}")))?;
    let count = r.u64()?;
    let include_bias = r.u8()? == 1;
    let mut mem_layers = Vec::with_capacity(model.decoder.len());
    for l in &model.decoder {
        let weight = read_tensor(&mut r, &[l.weight.numel()])?;
        let bias = match (&l.bias, include_bias) {
            (Some(b), true) => Some(read_tensor(&mut r, &[b.numel()])?),
            _ => None,
        };
        mem_layers.push(LayerMemory { weight, bias });
    }
    r.finish()?;
    let memory = GradientMemory::from_parts(mem_layers, count)?;
    memory.check_model(&model)?;
    Ok((model, memory))
}

pub fn save_checkpoint<T: Element>(path: &Path, model: &ModelParams<T>, memory: &GradientMemory<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, memory)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f64>, GradientMemory<f64>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_model;

    fn fixture(variant: Variant, include_bias: bool) -> (ModelParams<f64>, GradientMemory<f64>) {
        let model = build_model::<f64>(variant, 1, 4).unwrap();
        let mut memory = GradientMemory::for_model(&model, include_bias);
        let grads: Vec<Vec<Tensor<f64>>> = memory
            .layers()
            .iter()
            .map(|l| {
                l.pieces()
                    .iter()
                    .map(|p| p.map(|_| 0.25))
                    .collect()
            })
            .collect();
        let refs: Vec<Vec<&Tensor<f64>>> = grads.iter().map(|l| l.iter().collect()).collect();
        memory.update(&refs).unwrap();
        (model, memory)
    }

    #[test]
    fn round_trip_is_exact() {
        for (v, b) in [(Variant::Cae, false), (Variant::Vae, true)] {
            let (m, mem) = fixture(v, b);
            let bytes = encode_checkpoint(&m, &mem).unwrap();
            let (m2, mem2) = decode_checkpoint(&bytes).unwrap();
            assert_eq!(m, m2);
            assert_eq!(mem, mem2);
            assert_eq!(encode_checkpoint(&m2, &mem2).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let (m, mem) = fixture(Variant::Cae, false);
        let bytes = encode_checkpoint(&m, &mem).unwrap();
        assert_eq!(&bytes[..4], b"GCON");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(bytes[8], 0);
        let specs = 8 * 23;
        let params = 8 * m.param_count();
        let memory = 8 + 1 + 8 * m.decoder.iter().map(|l| l.weight.numel()).sum::<usize>();
        assert_eq!(bytes.len(), 9 + 16 + specs + params + memory);
    }

    #[test]
    fn version_and_magic_errors() {
        let (m, mem) = fixture(Variant::Cae, false);
        let mut bytes = encode_checkpoint(&m, &mem).unwrap();
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
        let good = encode_checkpoint(&m, &mem).unwrap();
        assert!(decode_checkpoint(&good[..good.len() - 3]).is_err());
    }
}
