use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Variant};

/// Which gradient feeds the running average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemorySource {
    /// `dJ/dphi` of the full training loss (default).
    Total,
    /// `dL/dphi` of the reconstruction error only.
    Recon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Weight of the gradient loss in the training objective.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the latent loss; forced to 0 for the CAE.
    pub latent_weight: f64,
    /// Also constrain decoder bias gradients.
    pub include_bias: bool,
    pub memory_source: MemorySource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Cae,
            alpha: 0.03,
            lr: 1e-3,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            latent_weight: 1.0,
            include_bias: false,
            memory_source: MemorySource::Total,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite and >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.latent_weight >= 0.0 && self.latent_weight.is_finite()) {
            return Err(Error::config("latent_weight", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Latent-loss weight actually applied (zero for the CAE).
    pub fn effective_latent_weight(&self) -> f64 {
        match self.variant {
            Variant::Cae => 0.0,
            Variant::Vae => self.latent_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig::from_alpha(self.alpha)
    }
}

/// Weights used when turning per-sample losses into an anomaly score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Training-time gradient-loss weight (only used to report `total_train`).
    pub alpha: f64,
    pub beta: f64,
}

impl ScoreConfig {
    /// `beta = 4 * alpha`.
    pub fn from_alpha(alpha: f64) -> Self {
        ScoreConfig {
            alpha,
            beta: 4.0 * alpha,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        ScoreConfig { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Per-sample (or per-batch) loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Reconstruction error `L`.
    pub recon: f64,
    /// Latent loss `Omega`.
    pub latent: f64,
    /// Gradient loss, in `[-1, 1]`.
    pub grad_loss: f64,
    /// `recon + latent + alpha * grad_loss`.
    pub total_train: f64,
    /// `recon + beta * grad_loss`.
    pub anomaly_score: f64,
}

impl LossBreakdown {
    pub fn compose(recon: f64, latent: f64, grad_loss: f64, alpha: f64, beta: f64) -> Self {
        LossBreakdown {
            recon,
            latent,
            grad_loss,
            total_train: recon + latent + alpha * grad_loss,
            anomaly_score: recon + beta * grad_loss,
        }
    }

    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.recon += b.recon;
            acc.latent += b.latent;
            acc.grad_loss += b.grad_loss;
            acc.total_train += b.total_train;
            acc.anomaly_score += b.anomaly_score;
        }
        Some(LossBreakdown {
            recon: acc.recon / n,
            latent: acc.latent / n,
            grad_loss: acc.grad_loss / n,
            total_train: acc.total_train / n,
            anomaly_score: acc.anomaly_score / n,
        })
    }
}
