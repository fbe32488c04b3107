//! Gradient-constrained training and gradient-based anomaly scoring.
//!
//! During training each minibatch computes the reconstruction error `L`, the
//! decoder-weight gradients `dL/dphi` (kept differentiable), and the gradient
//! loss `L_grad = -mean_i cos(avg_i, dL/dphi_i)` against a cumulative average
//! of past total-loss gradients. The weights follow `J = L + Omega + alpha * L_grad`,
//! which requires differentiating through the first backward pass. At test
//! time the anomaly score is `L + beta * L_grad` for a single image.

mod config;
mod memory;
mod score;
mod train;

pub use config::{LossBreakdown, MemorySource, ScoreConfig, TrainConfig};
pub use memory::{gradient_loss, GradientMemory, LayerMemory};
pub use score::{layer_cosine, score_detail, score_indices, score_sample, SampleScore};
pub use train::{train, EpochLog, TrainOutcome, Trainer};

use crate::autodiff::{bce_loss, kl_div_gaussian, mse_loss, Graph, Var};
use crate::error::Result;
use crate::nn::{BoundModel, LatentSampling, ModelParams, Variant};
use crate::tensor::{Element, Tensor};

/// Reconstruction error and (unweighted) latent loss of one forward pass.
pub(crate) struct ForwardLosses {
    pub recon: Var,
    pub kl: Option<Var>,
}

pub(crate) fn forward_losses<T: Element>(
    g: &mut Graph<T>,
    model: &ModelParams<T>,
    bound: &BoundModel,
    batch: &Tensor<T>,
    sampling: LatentSampling<'_>,
) -> Result<ForwardLosses> {
    let out = model.forward(g, bound, batch, sampling)?;
    match model.variant {
        Variant::Cae => Ok(ForwardLosses {
            recon: mse_loss(g, out.reconstruction, batch)?,
            kl: None,
        }),
        Variant::Vae => {
            let recon = bce_loss(g, out.reconstruction, batch)?;
            let (mu, logvar) = out.latent_stats.expect("VAE forward yields latent stats");
            Ok(ForwardLosses {
                recon,
                kl: Some(kl_div_gaussian(g, mu, logvar)?),
            })
        }
    }
}

/// Decoder parameter variables grouped per layer as memory pieces.
pub(crate) fn decoder_pieces(bound: &BoundModel, include_bias: bool) -> Vec<Vec<Var>> {
    bound
        .decoder
        .iter()
        .map(|(w, b)| match (include_bias, b) {
            (true, Some(b)) => vec![*w, *b],
            _ => vec![*w],
        })
        .collect()
}
