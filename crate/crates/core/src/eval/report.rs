use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, shared_histogram, Histogram};
use crate::data::{ImageDataset, OneClassSplit};
use crate::error::{Error, Result};
use crate::gradcon::{score_indices, GradientMemory, SampleScore, ScoreConfig};
use crate::nn::ModelParams;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    Recon,
    Latent,
    Grad,
    Combined,
    Layer(usize),
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::Recon => f.write_str("recon"),
            ScoreKind::Latent => f.write_str("latent"),
            ScoreKind::Grad => f.write_str("grad"),
            ScoreKind::Combined => f.write_str("combined"),
            ScoreKind::Layer(i) => write!(f, "layer_{i}"),
        }
    }
}

impl ScoreKind {
    /// Extracts this kind from a scored sample, oriented so higher means more anomalous.
    pub fn of(self, s: &SampleScore) -> Result<f64> {
        Ok(match self {
            ScoreKind::Recon => s.breakdown.recon,
            ScoreKind::Latent => s.breakdown.latent,
            ScoreKind::Grad => s.breakdown.grad_loss,
            ScoreKind::Combined => s.breakdown.anomaly_score,
            ScoreKind::Layer(i) => -*s
                .layer_cosines
                .get(i)
                .ok_or_else(|| Error::Invalid(format!("no decoder layer {i}")))?,
        })
    }
}

/// Inlier and outlier scores of one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub kind: ScoreKind,
    pub inliers: Vec<f64>,
    pub outliers: Vec<f64>,
}

impl ScoreSet {
    pub fn from_scores(kind: ScoreKind, inliers: &[SampleScore], outliers: &[SampleScore]) -> Result<Self> {
        Ok(ScoreSet {
            kind,
            inliers: inliers.iter().map(|s| kind.of(s)).collect::<Result<_>>()?,
            outliers: outliers.iter().map(|s| kind.of(s)).collect::<Result<_>>()?,
        })
    }

    pub fn auroc(&self) -> Result<f64> {
        auroc(&self.inliers, &self.outliers)
    }

    pub fn histogram(&self, bins: usize) -> Result<Histogram> {
        shared_histogram(&self.inliers, &self.outliers, bins)
    }
}

/// Scored test samples of a split, inliers then outliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub inliers: Vec<SampleScore>,
    pub outliers: Vec<SampleScore>,
}

impl SplitScores {
    pub fn compute<T: Element>(
        model: &ModelParams<T>,
        memory: &GradientMemory<T>,
        test: &ImageDataset,
        split: &OneClassSplit,
        config: &ScoreConfig,
    ) -> Result<Self> {
        Ok(SplitScores {
            inliers: score_indices(model, memory, test, &split.test_in, config)?,
            outliers: score_indices(model, memory, test, &split.test_out, config)?,
        })
    }

    pub fn set(&self, kind: ScoreKind) -> Result<ScoreSet> {
        ScoreSet::from_scores(kind, &self.inliers, &self.outliers)
    }

    pub fn num_layers(&self) -> usize {
        self.inliers.first().map_or(0, |s| s.layer_cosines.len())
    }
}

/// AUROC of every decoder layer's `-cos` followed by the combined gradient loss (`"all"`).
pub fn decomposition_report(scores: &SplitScores) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::with_capacity(scores.num_layers() + 1);
    for i in 0..scores.num_layers() {
        rows.push((ScoreKind::Layer(i).to_string(), scores.set(ScoreKind::Layer(i))?.auroc()?));
    }
    rows.push(("all".to_string(), scores.set(ScoreKind::Grad)?.auroc()?));
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub multiple: f64,
    pub beta: f64,
    pub auroc: f64,
}

/// AUROC of `recon + beta * grad_loss` for `beta = multiple * alpha`, from cached scores.
pub fn beta_sweep(scores: &SplitScores, alpha: f64, multiples: &[f64]) -> Result<Vec<BetaPoint>> {
    multiples
        .iter()
        .map(|&m| {
            let beta = m * alpha;
            if !(beta >= 0.0) {
                return Err(Error::config("beta", format!("{beta} must be non-negative")));
            }
            let score = |s: &SampleScore| s.breakdown.recon + beta * s.breakdown.grad_loss;
            let a = auroc(
                &scores.inliers.iter().map(score).collect::<Vec<_>>(),
                &scores.outliers.iter().map(score).collect::<Vec<_>>(),
            )?;
            Ok(BetaPoint {
                multiple: m,
                beta,
                auroc: a,
            })
        })
        .collect()
}

/// `metric,class,value` rows.
pub fn metrics_csv(class: u8, rows: &[(String, f64)]) -> String {
    let mut out = String::from("metric,class,value\n");
    for (name, v) in rows {
        let _ = writeln!(out, "{name},{class},{v}");
    }
    out
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,inliers,outliers\n");
    for i in 0..h.counts_a.len() {
        let _ = writeln!(out, "{},{},{},{}", h.edges[i], h.edges[i + 1], h.counts_a[i], h.counts_b[i]);
    }
    out
}

pub fn beta_csv(points: &[BetaPoint]) -> String {
    let mut out = String::from("multiple,beta,auroc\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.multiple, p.beta, p.auroc);
    }
    out
}
