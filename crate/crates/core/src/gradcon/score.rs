use serde::{Deserialize, Serialize};

use super::config::{LossBreakdown, ScoreConfig};
use super::memory::GradientMemory;
use super::{decoder_pieces, forward_losses};
use crate::autodiff::loss::{cosine_value, COSINE_EPS};
use crate::autodiff::{Graph, Var};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::nn::{LatentSampling, ModelParams};
use crate::parallel;
use crate::tensor::{Element, Tensor};

/// Loss terms of one image plus the cosine of every decoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub breakdown: LossBreakdown,
    /// `cos(avg_i, dL/dphi_i)` per decoder layer.
    pub layer_cosines: Vec<f64>,
}

fn as_single<T: Element>(image: &Tensor<T>) -> Result<Tensor<T>> {
    match image.shape() {
        [_, _, _] => {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.reshape(&s)
        }
        [1, _, _, _] => Ok(image.clone()),
        s => Err(Error::Invalid(format!("score expects one image, got shape {s:?}"))),
    }
}

/// Scores one image against a trained model. Neither argument is modified.
pub fn score_detail<T: Element>(
    model: &ModelParams<T>,
    memory: &GradientMemory<T>,
    image: &Tensor<T>,
    config: &ScoreConfig,
) -> Result<SampleScore> {
    config.validate()?;
    if memory.count() == 0 {
        return Err(Error::Invalid("gradient memory is untrained (count 0)".into()));
    }
    memory.check_model(model)?;
    let image = as_single(image)?;
    let mut g = Graph::<T>::new();
    let bound = model.bind(&mut g);
    let losses = forward_losses(&mut g, model, &bound, &image, LatentSampling::Mean)?;
    let pieces = decoder_pieces(&bound, memory.include_bias());
    let flat: Vec<Var> = pieces.concat();
    let grads = g.grad(losses.recon, &flat, false)?;
    let mut it = grads.grads.iter();
    let mut layer_cosines = Vec::with_capacity(pieces.len());
    for (layer, mem) in pieces.iter().zip(memory.layers()) {
        let current: Vec<&Tensor<T>> = layer.iter().map(|_| g.value(*it.next().expect("aligned"))).collect();
        let c = cosine_value(&current, &mem.pieces(), COSINE_EPS)?;
        layer_cosines.push(c.clamp(-1.0, 1.0));
    }
    let grad_loss = -layer_cosines.iter().sum::<f64>() / layer_cosines.len() as f64;
    let recon = g.value(losses.recon).item().as_f64();
    let latent = losses.kl.map_or(0.0, |k| g.value(k).item().as_f64());
    Ok(SampleScore {
        breakdown: LossBreakdown::compose(recon, latent, grad_loss, config.alpha, config.beta),
        layer_cosines,
    })
}

/// Anomaly score `L + beta * L_grad` of one image, with its components.
pub fn score_sample<T: Element>(
    model: &ModelParams<T>,
    memory: &GradientMemory<T>,
    image: &Tensor<T>,
    config: &ScoreConfig,
) -> Result<LossBreakdown> {
    score_detail(model, memory, image, config).map(|s| s.breakdown)
}

/// `-cos` of a single decoder layer, usable as a standalone anomaly score.
pub fn layer_cosine<T: Element>(
    model: &ModelParams<T>,
    memory: &GradientMemory<T>,
    image: &Tensor<T>,
    layer: usize,
) -> Result<f64> {
    if layer >= memory.num_layers() {
        return Err(Error::Invalid(format!(
            "decoder layer {layer} out of range (model has {})",
            memory.num_layers()
        )));
    }
    let s = score_detail(model, memory, image, &ScoreConfig::from_alpha(0.0))?;
    Ok(-s.layer_cosines[layer])
}

/// Scores the listed images, in parallel when enabled; output order follows `indices`.
pub fn score_indices<T: Element>(
    model: &ModelParams<T>,
    memory: &GradientMemory<T>,
    data: &ImageDataset,
    indices: &[usize],
    config: &ScoreConfig,
) -> Result<Vec<SampleScore>> {
    parallel::map_indexed(indices.len(), |k| {
        let image = data.image::<T>(indices[k])?;
        score_detail(model, memory, &image, config)
    })
    .into_iter()
    .collect()
}
