use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Invalid(format!("{name} scores are empty")));
    }
    if let Some(v) = xs.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("{name} score {v} is not finite")));
    }
    Ok(())
}

/// `P(outlier > inlier) + P(tie) / 2` via midranks of the pooled scores.
pub fn auroc(inliers: &[f64], outliers: &[f64]) -> Result<f64> {
    check("inlier", inliers)?;
    check("outlier", outliers)?;
    let mut pooled: Vec<(f64, bool)> = inliers
        .iter()
        .map(|&v| (v, false))
        .chain(outliers.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (n, m) = (inliers.len() as f64, outliers.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (n * m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub f1: f64,
    /// Scores strictly above the threshold are predicted outliers.
    pub threshold: f64,
}

/// F1 with outliers as the positive class, predicting `score > threshold`.
pub fn f1_at_threshold(inliers: &[f64], outliers: &[f64], threshold: f64) -> Result<f64> {
    check("inlier", inliers)?;
    check("outlier", outliers)?;
    let tp = outliers.iter().filter(|&&v| v > threshold).count() as f64;
    let fp = inliers.iter().filter(|&&v| v > threshold).count() as f64;
    let fn_ = outliers.len() as f64 - tp;
    if tp == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

/// Best F1 over every midpoint between distinct scores, plus the all-positive threshold.
pub fn f1_max(inliers: &[f64], outliers: &[f64]) -> Result<F1Point> {
    check("inlier", inliers)?;
    check("outlier", outliers)?;
    let mut all: Vec<f64> = inliers.iter().chain(outliers).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut candidates = vec![all[0] - 1.0];
    candidates.extend(all.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    let mut best = F1Point {
        f1: -1.0,
        threshold: candidates[0],
    };
    for t in candidates {
        let f1 = f1_at_threshold(inliers, outliers, t)?;
        if f1 > best.f1 {
            best = F1Point { f1, threshold: t };
        }
    }
    Ok(best)
}

/// Bin counts of `a` and `b` over shared equal-width edges spanning the pooled range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts_a: Vec<usize>,
    pub counts_b: Vec<usize>,
}

pub fn shared_histogram(a: &[f64], b: &[f64], bins: usize) -> Result<Histogram> {
    check("first", a)?;
    check("second", b)?;
    if bins < 2 {
        return Err(Error::Invalid(format!("need at least 2 bins, got {bins}")));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let edges = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    let bin = |v: f64| {
        if hi == lo {
            0
        } else {
            (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        }
    };
    let mut counts_a = vec![0; bins];
    let mut counts_b = vec![0; bins];
    a.iter().for_each(|&v| counts_a[bin(v)] += 1);
    b.iter().for_each(|&v| counts_b[bin(v)] += 1);
    Ok(Histogram {
        edges,
        counts_a,
        counts_b,
    })
}

/// Percentage of all samples, from either list, that fall in the region shared
/// by the two histograms (`2 * sum(min) / (|a| + |b|)`). All-equal inputs overlap completely.
pub fn histogram_overlap(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    let h = shared_histogram(a, b, bins)?;
    if h.edges[0] == h.edges[bins] {
        return Ok(100.0);
    }
    let shared: usize = h.counts_a.iter().zip(&h.counts_b).map(|(x, y)| x.min(y)).sum();
    Ok(2.0 * shared as f64 / (a.len() + b.len()) as f64 * 100.0)
}
