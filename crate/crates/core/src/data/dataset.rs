use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Where a dataset came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mnist,
    Fmnist,
    Cifar10,
    Synthetic,
}

impl Provenance {
    pub fn tag(self) -> u8 {
        match self {
            Provenance::Mnist => 0,
            Provenance::Fmnist => 1,
            Provenance::Cifar10 => 2,
            Provenance::Synthetic => 3,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => Provenance::Mnist,
            1 => Provenance::Fmnist,
            2 => Provenance::Cifar10,
            3 => Provenance::Synthetic,
            _ => return Err(Error::Data(format!("unknown provenance tag {t}"))),
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Mnist => "mnist",
            Provenance::Fmnist => "fmnist",
            Provenance::Cifar10 => "cifar10",
            Provenance::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Provenance::Mnist),
            "fmnist" | "fashion_mnist" | "fashion-mnist" => Ok(Provenance::Fmnist),
            "cifar10" | "cifar-10" => Ok(Provenance::Cifar10),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(Error::config("dataset", format!("unknown dataset `{other}`"))),
        }
    }
}

/// Labeled images in NCHW layout with pixel values in `[0, 1]`.
///
/// Pixels are stored as `f32`; batches are converted to the session's element type.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
    pub provenance: Provenance,
}

impl ImageDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::Data(format!("images must be N x C x H x W, got {s:?}")));
        }
        if s[1] != 1 && s[1] != 3 {
            return Err(Error::Data(format!("unsupported channel count {}", s[1])));
        }
        if labels.len() != s[0] {
            return Err(Error::Data(format!("{} images but {} labels", s[0], labels.len())));
        }
        if let Some(bad) = images.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(ImageDataset {
            images,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// `(height, width)`
    pub fn image_size(&self) -> (usize, usize) {
        (self.images.shape()[2], self.images.shape()[3])
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn image_len(&self) -> usize {
        let s = self.images.shape();
        s[1] * s[2] * s[3]
    }

    /// Raw pixels of image `i`.
    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Indices whose label equals `class`, in order.
    pub fn indices_of_class(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Stacks the selected images into an `[n, C, H, W]` tensor.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend(self.pixels(i).iter().map(|&p| T::of(p as f64)));
        }
        let s = self.images.shape();
        Tensor::new(&[indices.len(), s[1], s[2], s[3]], data)
    }

    /// A single image as a batch of one.
    pub fn image<T: Element>(&self, i: usize) -> Result<Tensor<T>> {
        self.batch(&[i])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<ImageDataset> {
        let images = self.batch::<f32>(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageDataset::new(images, labels, self.provenance)
    }

    /// Images of `self` followed by those of `other`.
    pub fn concat(&self, other: &ImageDataset) -> Result<ImageDataset> {
        let (a, b) = (self.images.shape(), other.images.shape());
        if a[1..] != b[1..] {
            return Err(Error::shape("concat", a, b));
        }
        let mut shape = a.to_vec();
        shape[0] += b[0];
        let mut data = self.images.data().to_vec();
        data.extend_from_slice(other.images.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        ImageDataset::new(Tensor::new(&shape, data)?, labels, self.provenance)
    }

    /// Applies `f` to every image (as `C x H x W` pixels).
    pub fn map_images(&self, f: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<ImageDataset> {
        let s = self.images.shape().to_vec();
        let mut data = Vec::with_capacity(self.images.numel());
        for i in 0..self.len() {
            let img = Tensor::new(&s[1..], self.pixels(i).to_vec())?;
            let out = f(&img)?;
            if out.shape() != &s[1..] {
                return Err(Error::shape("map_images", out.shape(), &s[1..]));
            }
            data.extend_from_slice(out.data());
        }
        ImageDataset::new(Tensor::new(&s, data)?, self.labels.clone(), self.provenance)
    }
}
