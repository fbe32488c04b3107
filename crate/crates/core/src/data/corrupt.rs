use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianBlur,
    Exposure,
    Decolorization,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [Self::GaussianBlur, Self::Exposure, Self::Decolorization];
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GaussianBlur => "gaussian_blur",
            Self::Exposure => "exposure",
            Self::Decolorization => "decolorization",
        })
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blur" => Ok(Self::GaussianBlur),
            "exposure" => Ok(Self::Exposure),
            "decolorization" => Ok(Self::Decolorization),
            other => Err(Error::config("corruption", format!("unknown kind `{other}`"))),
        }
    }
}

/// A corruption kind at severity level 1 to 5.
///
/// | kind | parameter |
/// |---|---|
/// | gaussian_blur | sigma = 0.5 * level |
/// | exposure | gamma = 1 + 0.4 * level, `x^gamma` |
/// | decolorization | blend weight toward channel mean = 0.2 * level |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub level: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, level: u8) -> Result<Self> {
        if !(1..=5).contains(&level) {
            return Err(Error::config("level", format!("{level} not in 1..=5")));
        }
        Ok(CorruptionSpec { kind, level })
    }

    pub fn parameter(&self) -> f64 {
        let l = self.level as f64;
        match self.kind {
            CorruptionKind::GaussianBlur => 0.5 * l,
            CorruptionKind::Exposure => 1.0 + 0.4 * l,
            CorruptionKind::Decolorization => 0.2 * l,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * plane[y * w + clampi(x as i64 + k as i64 - r, w)])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * tmp[clampi(y as i64 + k as i64 - r, h) * w + x])
                .sum();
        }
    }
}

/// Applies `spec` to a `C x H x W` image. Borders are replicated for blurring.
pub fn corrupt(image: &Tensor<f32>, spec: CorruptionSpec) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "corrupt expects C x H x W".into(),
        });
    }
    let spec = CorruptionSpec::new(spec.kind, spec.level)?;
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut px: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let p = spec.parameter();
    match spec.kind {
        CorruptionKind::GaussianBlur => {
            let k = gaussian_kernel(p);
            for plane in px.chunks_mut(h * w) {
                blur_plane(plane, h, w, &k);
            }
        }
        CorruptionKind::Exposure => px.iter_mut().for_each(|v| *v = v.powf(p)),
        CorruptionKind::Decolorization => {
            for i in 0..h * w {
                let mean = (0..c).map(|ch| px[ch * h * w + i]).sum::<f64>() / c as f64;
                for ch in 0..c {
                    let v = &mut px[ch * h * w + i];
                    *v = (1.0 - p) * *v + p * mean;
                }
            }
        }
    }
    Tensor::new(s, px.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

/// Corrupts every image of a dataset.
pub fn corrupt_dataset(ds: &ImageDataset, spec: CorruptionSpec) -> Result<ImageDataset> {
    ds.map_images(|img| corrupt(img, spec))
}
