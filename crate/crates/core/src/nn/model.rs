use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::conv::{conv_output_len, conv_transpose_output_len};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Spatial size the default architecture expects.
pub const INPUT_SIZE: usize = 32;

const KERNEL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cae,
    Vae,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cae => "cae",
            Variant::Vae => "vae",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cae" => Ok(Variant::Cae),
            "vae" => Ok(Variant::Vae),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, stride: usize, pad: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel: KERNEL,
            stride,
            pad,
            activation,
            has_bias: true,
        }
    }

    pub fn conv_transpose(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::ConvTranspose,
            ..Self::conv(in_channels, out_channels, stride, pad, activation)
        }
    }

    /// `[out, in, k, k]` for convolutions, `[in, out, k, k]` for transposed ones.
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, k, k],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, k, k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.has_bias { self.out_channels } else { 0 }
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        match self.kind {
            LayerKind::Conv => conv_output_len(input, self.kernel, self.stride, self.pad),
            LayerKind::ConvTranspose => conv_transpose_output_len(input, self.kernel, self.stride, self.pad),
        }
    }

    fn fan_in(&self) -> usize {
        let s = self.weight_shape();
        s[1] * s[2] * s[3]
    }
}

/// Encoder and decoder layer specs of the default architecture.
///
/// Encoder: `in -> 32 -> 32 -> 64 -> 64` with stride/pad `2/1, 2/1, 2/1, 1/1`,
/// taking 32x32 inputs to a 3x3x64 latent. The decoder mirrors it with
/// transposed convolutions and ends in a sigmoid. The VAE doubles the last
/// encoder layer to emit `(mu, logvar)`.
pub fn default_layer_specs(variant: Variant, in_channels: usize) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    if in_channels != 1 && in_channels != 3 {
        return Err(Error::Invalid(format!(
            "unsupported channel count {in_channels} (expected 1 or 3)"
        )));
    }
    use Activation::*;
    let (latent_out, latent_act) = match variant {
        Variant::Cae => (64, Relu),
        Variant::Vae => (128, None),
    };
    let encoder = vec![
        LayerSpec::conv(in_channels, 32, 2, 1, Relu),
        LayerSpec::conv(32, 32, 2, 1, Relu),
        LayerSpec::conv(32, 64, 2, 1, Relu),
        LayerSpec::conv(64, latent_out, 1, 1, latent_act),
    ];
    let decoder = vec![
        LayerSpec::conv_transpose(64, 64, 1, 1, Relu),
        LayerSpec::conv_transpose(64, 32, 2, 1, Relu),
        LayerSpec::conv_transpose(32, 32, 2, 1, Relu),
        LayerSpec::conv_transpose(32, in_channels, 2, 1, Sigmoid),
    ];
    Ok((encoder, decoder))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Element = f64> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Encoder (θ) and decoder (φ) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element = f64> {
    pub variant: Variant,
    pub in_channels: usize,
    pub input_size: usize,
    pub encoder: Vec<Layer<T>>,
    pub decoder: Vec<Layer<T>>,
}

/// The default CAE/VAE with fan-in scaled uniform weights and zero biases.
pub fn build_model<T: Element>(variant: Variant, in_channels: usize, seed: u64) -> Result<ModelParams<T>> {
    let (enc, dec) = default_layer_specs(variant, in_channels)?;
    ModelParams::from_specs(variant, in_channels, INPUT_SIZE, enc, dec, seed)
}

/// Where the VAE latent comes from during a forward pass.
pub enum LatentSampling<'a> {
    /// `z = mu`.
    Mean,
    /// `z = mu + exp(logvar / 2) * eps`, `eps ~ N(0, I)` drawn from the stream.
    Random(&'a mut dyn RngCore),
}

/// Parameters registered as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: Vec<(Var, Option<Var>)>,
    pub decoder: Vec<(Var, Option<Var>)>,
}

impl BoundModel {
    /// All parameter variables in declaration order.
    pub fn all_vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|(w, b)| std::iter::once(*w).chain(*b))
            .collect()
    }

    pub fn decoder_weights(&self) -> Vec<Var> {
        self.decoder.iter().map(|(w, _)| *w).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub reconstruction: Var,
    pub latent: Var,
    /// `(mu, logvar)` for the VAE.
    pub latent_stats: Option<(Var, Var)>,
}

fn activate<T: Element>(g: &mut Graph<T>, x: Var, a: Activation) -> Result<Var> {
    match a {
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::None => Ok(x),
    }
}

fn apply_layer<T: Element>(g: &mut Graph<T>, spec: &LayerSpec, x: Var, (w, b): (Var, Option<Var>)) -> Result<Var> {
    let y = match spec.kind {
        LayerKind::Conv => g.conv2d(x, w, b, spec.stride, spec.pad)?,
        LayerKind::ConvTranspose => g.conv2d_transpose(x, w, b, spec.stride, spec.pad)?,
    };
    activate(g, y, spec.activation)
}

impl<T: Element> ModelParams<T> {
    /// Builds a model from explicit layer specs, initialising weights from `seed`.
    pub fn from_specs(
        variant: Variant,
        in_channels: usize,
        input_size: usize,
        encoder: Vec<LayerSpec>,
        decoder: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |spec: LayerSpec| -> Result<Layer<T>> {
            let bound = 1.0 / (spec.fan_in() as f64).sqrt();
            let shape = spec.weight_shape();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
            Ok(Layer {
                spec,
                weight: Tensor::new(&shape, data)?,
                bias: if spec.has_bias {
                    Some(Tensor::zeros(&[spec.out_channels])?)
                } else {
                    None
                },
            })
        };
        let encoder = encoder.into_iter().map(&mut init).collect::<Result<Vec<_>>>()?;
        let decoder = decoder.into_iter().map(&mut init).collect::<Result<Vec<_>>>()?;
        let model = ModelParams {
            variant,
            in_channels,
            input_size,
            encoder,
            decoder,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks channel chaining and that the decoder restores the input size.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Invalid("model needs encoder and decoder layers".into()));
        }
        let mut c = self.in_channels;
        for (i, l) in self.encoder.iter().enumerate() {
            if l.spec.in_channels != c {
                return Err(Error::Invalid(format!("encoder layer {i} expects {} channels, gets {c}", l.spec.in_channels)));
            }
            c = l.spec.out_channels;
        }
        if self.variant == Variant::Vae {
            if !c.is_multiple_of(2) {
                return Err(Error::Invalid("VAE latent layer needs an even channel count".into()));
            }
            c /= 2;
        }
        for (i, l) in self.decoder.iter().enumerate() {
            if l.spec.in_channels != c {
                return Err(Error::Invalid(format!("decoder layer {i} expects {} channels, gets {c}", l.spec.in_channels)));
            }
            c = l.spec.out_channels;
        }
        if c != self.in_channels {
            return Err(Error::Invalid(format!("decoder emits {c} channels for {} input channels", self.in_channels)));
        }
        let latent = self.latent_size()?;
        let mut s = latent;
        for l in &self.decoder {
            s = l.spec.output_size(s)?;
        }
        if s != self.input_size {
            return Err(Error::Invalid(format!(
                "decoder maps {latent}x{latent} latent to {s}x{s}, expected {}",
                self.input_size
            )));
        }
        for l in self.encoder.iter().chain(&self.decoder) {
            if l.weight.shape() != l.spec.weight_shape() {
                return Err(Error::shape("layer weight", l.weight.shape(), &l.spec.weight_shape()));
            }
            match &l.bias {
                Some(b) if !l.spec.has_bias || b.shape() != [l.spec.out_channels] => {
                    return Err(Error::shape("layer bias", b.shape(), &[l.spec.out_channels]))
                }
                None if l.spec.has_bias => return Err(Error::Invalid("missing bias".into())),
                _ => {}
            }
        }
        Ok(())
    }

    /// Spatial side of the latent code.
    pub fn latent_size(&self) -> Result<usize> {
        self.encoder
            .iter()
            .try_fold(self.input_size, |s, l| l.spec.output_size(s))
    }

    /// Spatial sizes after each encoder layer.
    pub fn encoder_size_chain(&self) -> Result<Vec<usize>> {
        let mut s = self.input_size;
        self.encoder
            .iter()
            .map(|l| {
                s = l.spec.output_size(s)?;
                Ok(s)
            })
            .collect()
    }

    pub fn latent_channels(&self) -> usize {
        let c = self.encoder.last().map(|l| l.spec.out_channels).unwrap_or(0);
        match self.variant {
            Variant::Cae => c,
            Variant::Vae => c / 2,
        }
    }

    /// Total scalar parameter count, biases included.
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Parameter count from layer specs alone.
    pub fn param_count_from_specs(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.spec.param_count())
            .sum()
    }

    /// Parameters in declaration order: encoder then decoder, weight before bias.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
            .collect()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        let conv = |l: &Layer<T>| Layer {
            spec: l.spec,
            weight: l.weight.cast(),
            bias: l.bias.as_ref().map(|b| b.cast()),
        };
        ModelParams {
            variant: self.variant,
            in_channels: self.in_channels,
            input_size: self.input_size,
            encoder: self.encoder.iter().map(conv).collect(),
            decoder: self.decoder.iter().map(conv).collect(),
        }
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundModel {
        let mut bind = |l: &Layer<T>| (g.param(l.weight.clone()), l.bias.as_ref().map(|b| g.param(b.clone())));
        BoundModel {
            encoder: self.encoder.iter().map(&mut bind).collect(),
            decoder: self.decoder.iter().map(&mut bind).collect(),
        }
    }

    /// Encoder, optional reparameterisation, decoder.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        batch: &Tensor<T>,
        sampling: LatentSampling<'_>,
    ) -> Result<ForwardOutput> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != self.in_channels || s[2] != self.input_size || s[3] != self.input_size {
            return Err(Error::shape(
                "forward (expected N x C x S x S)",
                s,
                &[0, self.in_channels, self.input_size, self.input_size],
            ));
        }
        let mut h = g.constant(batch.clone());
        for (l, &vars) in self.encoder.iter().zip(&bound.encoder) {
            h = apply_layer(g, &l.spec, h, vars)?;
        }
        let (latent, latent_stats) = match self.variant {
            Variant::Cae => (h, None),
            Variant::Vae => {
                let c = g.shape(h)[1] / 2;
                let mu = g.slice_channels(h, 0, c)?;
                let logvar = g.slice_channels(h, c, c)?;
                let z = match sampling {
                    LatentSampling::Mean => mu,
                    LatentSampling::Random(rng) => {
                        let shape = g.shape(mu).to_vec();
                        let n: usize = shape.iter().product();
                        let eps: Vec<T> = (0..n)
                            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
                            .collect();
                        let eps = g.constant(Tensor::new(&shape, eps)?);
                        let half = g.mul_scalar(logvar, 0.5)?;
                        let std = g.exp(half)?;
                        let noise = g.mul(std, eps)?;
                        g.add(mu, noise)?
                    }
                };
                (z, Some((mu, logvar)))
            }
        };
        let mut h = latent;
        for (l, &vars) in self.decoder.iter().zip(&bound.decoder) {
            h = apply_layer(g, &l.spec, h, vars)?;
        }
        if g.shape(h) != batch.shape() {
            return Err(Error::shape("forward (reconstruction)", g.shape(h), batch.shape()));
        }
        Ok(ForwardOutput {
            reconstruction: h,
            latent,
            latent_stats,
        })
    }
}
