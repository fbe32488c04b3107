use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossBreakdown, MemorySource, TrainConfig};
use super::memory::{gradient_loss, GradientMemory};
use super::score::score_indices;
use super::{decoder_pieces, forward_losses};
use crate::autodiff::{Graph, Var};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::nn::{AdamState, LatentSampling, ModelParams, Variant};
use crate::tensor::{Element, Tensor};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Model, gradient memory and optimizer state of one training session.
pub struct Trainer<T: Element = f64> {
    pub model: ModelParams<T>,
    pub memory: GradientMemory<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    noise: ChaCha8Rng,
    steps: u64,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: ModelParams<T>, config: TrainConfig) -> Result<Self> {
        let memory = GradientMemory::for_model(&model, config.include_bias);
        Self::with_memory(model, memory, config)
    }

    pub fn with_memory(model: ModelParams<T>, memory: GradientMemory<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.variant != config.variant {
            return Err(Error::config(
                "variant",
                format!("model is {} but config says {}", model.variant, config.variant),
            ));
        }
        model.validate()?;
        memory.check_model(&model)?;
        let adam = AdamState::new(config.adam(), model.parameters());
        Ok(Trainer {
            noise: ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM),
            model,
            memory,
            adam,
            config,
            steps: 0,
        })
    }

    /// Completed optimizer steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn diagnostic(&self, what: &str) -> String {
        let norms: Vec<String> = self
            .model
            .parameters()
            .iter()
            .enumerate()
            .map(|(i, p)| format!("p{i}={:.4e}", p.l2_norm().as_f64()))
            .collect();
        format!("{what}; parameter norms [{}]", norms.join(", "))
    }

    /// One constrained update on `batch`:
    ///
    /// 1. forward pass, `L` (plus `Omega` for the VAE);
    /// 2. `dL/dphi` for the decoder weights, kept differentiable, no update;
    /// 3. `L_grad` against the memory (zero while the memory is empty);
    /// 4. `J = L + Omega + alpha * L_grad`;
    /// 5. `dJ` for every parameter, then an Adam step;
    /// 6. the decoder part of `dJ` is folded into the memory.
    pub fn train_step(&mut self, batch: &Tensor<T>) -> Result<LossBreakdown> {
        if batch.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let cfg = self.config.clone();
        let mut g = Graph::<T>::new();
        let bound = self.model.bind(&mut g);
        let sampling = match self.model.variant {
            Variant::Vae => LatentSampling::Random(&mut self.noise),
            Variant::Cae => LatentSampling::Mean,
        };
        let losses = forward_losses(&mut g, &self.model, &bound, batch, sampling)?;

        let latent_weight = cfg.effective_latent_weight();
        let mut base = losses.recon;
        let mut latent = 0.0;
        if let Some(kl) = losses.kl {
            if latent_weight > 0.0 {
                let weighted = g.mul_scalar(kl, latent_weight)?;
                latent = g.value(weighted).item().as_f64();
                base = g.add(base, weighted)?;
            }
        }

        let pieces = decoder_pieces(&bound, self.memory.include_bias());
        let flat: Vec<Var> = pieces.concat();
        let warm = self.memory.count() > 0;
        let mut recon_grads: Option<Vec<Var>> = None;
        let mut grad_loss: Option<Var> = None;
        if warm || cfg.memory_source == MemorySource::Recon {
            let gr = g.grad(losses.recon, &flat, warm)?;
            if warm {
                let grouped = regroup(&pieces, &gr.grads);
                grad_loss = Some(gradient_loss(&mut g, &self.memory, &grouped)?);
            }
            recon_grads = Some(gr.grads);
        }
        let grad_loss_value = grad_loss
            .map(|v| g.value(v).item().as_f64().clamp(-1.0, 1.0))
            .unwrap_or(0.0);
        let objective = match grad_loss {
            Some(lg) => {
                let weighted = g.mul_scalar(lg, cfg.alpha)?;
                g.add(base, weighted)?
            }
            None => base,
        };
        let recon = g.value(losses.recon).item().as_f64();
        if !recon.is_finite() || !g.value(objective).item().as_f64().is_finite() {
            return Err(Error::NonFinite {
                step: self.steps,
                diagnostic: self.diagnostic(&format!("recon={recon}")),
            });
        }

        let all = bound.all_vars();
        let full = g.grad(objective, &all, false)?;
        let grads: Vec<Tensor<T>> = full.grads.iter().map(|&v| g.value(v).clone()).collect();
        if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                step: self.steps,
                diagnostic: self.diagnostic(&format!("gradient of parameter {i} is not finite")),
            });
        }

        let index: HashMap<usize, usize> = all.iter().enumerate().map(|(i, v)| (v.id(), i)).collect();
        let memory_update: Vec<Vec<&Tensor<T>>> = match (cfg.memory_source, &recon_grads) {
            (MemorySource::Recon, Some(rg)) => {
                let mut it = rg.iter();
                pieces
                    .iter()
                    .map(|layer| layer.iter().map(|_| g.value(*it.next().expect("aligned"))).collect())
                    .collect()
            }
            _ => pieces
                .iter()
                .map(|layer| layer.iter().map(|v| &grads[index[&v.id()]]).collect())
                .collect(),
        };
        let memory_update: Vec<Vec<Tensor<T>>> = memory_update
            .into_iter()
            .map(|l| l.into_iter().cloned().collect())
            .collect();

        self.adam.update(&mut self.model.parameters_mut(), &grads)?;
        let refs: Vec<Vec<&Tensor<T>>> = memory_update.iter().map(|l| l.iter().collect()).collect();
        self.memory.update(&refs)?;
        self.steps += 1;

        Ok(LossBreakdown::compose(
            recon,
            latent,
            grad_loss_value,
            cfg.alpha,
            4.0 * cfg.alpha,
        ))
    }
}

fn regroup(pieces: &[Vec<Var>], flat: &[Var]) -> Vec<Vec<Var>> {
    let mut it = flat.iter().copied();
    pieces
        .iter()
        .map(|layer| layer.iter().map(|_| it.next().expect("aligned")).collect())
        .collect()
}

/// Per-epoch means written to the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_recon: f64,
    pub mean_latent: f64,
    pub mean_grad_loss: f64,
    pub mean_total: f64,
    pub val_recon: Option<f64>,
    pub val_latent: Option<f64>,
    pub val_grad_loss: Option<f64>,
    pub val_total: Option<f64>,
}

pub struct TrainOutcome<T: Element = f64> {
    pub model: ModelParams<T>,
    pub memory: GradientMemory<T>,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

/// Runs `config.epochs` passes of seeded-shuffled minibatch [`Trainer::train_step`]s
/// over `train_idx`, evaluating `val_idx` after each epoch.
pub fn train<T: Element>(
    model: ModelParams<T>,
    data: &ImageDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if train_idx.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order = train_idx.to_vec();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut batches = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch = data.batch::<T>(chunk)?;
            batches.push(trainer.train_step(&batch)?);
        }
        let mean = LossBreakdown::mean(&batches).expect("at least one batch");
        let val = if val_idx.is_empty() || trainer.memory.count() == 0 {
            None
        } else {
            let scores = score_indices(
                &trainer.model,
                &trainer.memory,
                data,
                val_idx,
                &config.score_config(),
            )?;
            let b: Vec<LossBreakdown> = scores.iter().map(|s| s.breakdown).collect();
            LossBreakdown::mean(&b)
        };
        let entry = EpochLog {
            epoch,
            mean_recon: mean.recon,
            mean_latent: mean.latent,
            mean_grad_loss: mean.grad_loss,
            mean_total: mean.total_train,
            val_recon: val.map(|v| v.recon),
            val_latent: val.map(|v| v.latent),
            val_grad_loss: val.map(|v| v.grad_loss),
            val_total: val.map(|v| v.total_train),
        };
        log::info!(
            "epoch {epoch}: recon {:.6} grad {:.4} total {:.6} val_recon {:?}",
            entry.mean_recon,
            entry.mean_grad_loss,
            entry.mean_total,
            entry.val_recon
        );
        log.push(entry);
    }
    let steps = trainer.steps();
    Ok(TrainOutcome {
        model: trainer.model,
        memory: trainer.memory,
        log,
        steps,
    })
}
