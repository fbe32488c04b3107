//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{CorruptionKind, Provenance};
use crate::error::{Error, Result};
use crate::gradcon::{MemorySource, TrainConfig};
use crate::nn::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config("precision", format!("expected f32 or f64, got `{other}`"))),
        }
    }
}

/// How the F1 threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum F1Threshold {
    /// Best threshold over the test scores.
    Test,
    /// A quantile of the validation inlier scores.
    Validation,
}

impl FromStr for F1Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(F1Threshold::Test),
            "val" | "validation" => Ok(F1Threshold::Validation),
            other => Err(Error::config("f1_threshold", format!("expected test or val, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Provenance,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub cifar_train: Vec<PathBuf>,
    pub cifar_test: Vec<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub synth_count: usize,
    pub inlier_class: u8,
    pub fold: usize,
    pub outlier_ratio: f64,
    pub max_train: usize,
    pub max_test: usize,
    pub variant: Variant,
    pub alpha: f64,
    pub beta_multiple: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub latent_weight: f64,
    pub include_bias: bool,
    pub memory_source: MemorySource,
    pub precision: Precision,
    pub out: PathBuf,
    pub histogram_bins: usize,
    pub f1_threshold: F1Threshold,
    pub f1_val_quantile: f64,
    pub beta_multiples: Vec<f64>,
    pub corruptions: Vec<CorruptionKind>,
    pub levels: Vec<u8>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset: Provenance::Mnist,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            cifar_train: Vec::new(),
            cifar_test: Vec::new(),
            cache_dir: None,
            synth_count: 200,
            inlier_class: 0,
            fold: 0,
            outlier_ratio: 0.5,
            max_train: 0,
            max_test: 0,
            variant: t.variant,
            alpha: t.alpha,
            beta_multiple: 4.0,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            latent_weight: t.latent_weight,
            include_bias: t.include_bias,
            memory_source: t.memory_source,
            precision: Precision::F64,
            out: PathBuf::from("run"),
            histogram_bins: 100,
            f1_threshold: F1Threshold::Test,
            f1_val_quantile: 0.95,
            beta_multiples: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            corruptions: CorruptionKind::ALL.to_vec(),
            levels: vec![1, 2, 3, 4, 5],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let key = key.trim();
        match key {
            "dataset" => self.dataset = parse(key, v)?,
            "train_images" => self.train_images = opt_path(v),
            "train_labels" => self.train_labels = opt_path(v),
            "test_images" => self.test_images = opt_path(v),
            "test_labels" => self.test_labels = opt_path(v),
            "cifar_train" => self.cifar_train = parse_list(key, v)?,
            "cifar_test" => self.cifar_test = parse_list(key, v)?,
            "cache_dir" => self.cache_dir = opt_path(v),
            "synth_count" => self.synth_count = parse(key, v)?,
            "inlier_class" => self.inlier_class = parse(key, v)?,
            "fold" => self.fold = parse(key, v)?,
            "outlier_ratio" => self.outlier_ratio = parse(key, v)?,
            "max_train" => self.max_train = parse(key, v)?,
            "max_test" => self.max_test = parse(key, v)?,
            "variant" => self.variant = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta_multiple" => self.beta_multiple = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "latent_weight" => self.latent_weight = parse(key, v)?,
            "include_bias" => self.include_bias = parse(key, v)?,
            "memory_source" => {
                self.memory_source = match v {
                    "total" => MemorySource::Total,
                    "recon" => MemorySource::Recon,
                    _ => return Err(Error::config(key, format!("expected total or recon, got `{v}`"))),
                }
            }
            "precision" => self.precision = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "histogram_bins" => self.histogram_bins = parse(key, v)?,
            "f1_threshold" => self.f1_threshold = parse(key, v)?,
            "f1_val_quantile" => self.f1_val_quantile = parse(key, v)?,
            "beta_multiples" => self.beta_multiples = parse_list(key, v)?,
            "corruptions" => self.corruptions = parse_list(key, v)?,
            "levels" => self.levels = parse_list(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", n + 1), "expected `key = value`"))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.inlier_class > 9 {
            return Err(Error::config("inlier_class", "must be in 0..=9"));
        }
        if self.dataset == Provenance::Synthetic && self.inlier_class > 1 {
            return Err(Error::config("inlier_class", "synthetic shapes have classes 0 and 1"));
        }
        if !(self.beta_multiple >= 0.0 && self.beta_multiple.is_finite()) {
            return Err(Error::config("beta_multiple", "must be finite and >= 0"));
        }
        if !(self.outlier_ratio > 0.0 && self.outlier_ratio < 1.0) {
            return Err(Error::config("outlier_ratio", "must be in (0, 1)"));
        }
        if self.fold >= 5 {
            return Err(Error::config("fold", "must be in 0..5"));
        }
        if self.histogram_bins < 2 {
            return Err(Error::config("histogram_bins", "must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.f1_val_quantile) {
            return Err(Error::config("f1_val_quantile", "must be in [0, 1]"));
        }
        if self.synth_count == 0 {
            return Err(Error::config("synth_count", "must be >= 1"));
        }
        if let Some(l) = self.levels.iter().find(|l| !(1..=5).contains(*l)) {
            return Err(Error::config("levels", format!("level {l} not in 1..=5")));
        }
        if let Some(b) = self.beta_multiples.iter().find(|b| !(**b >= 0.0)) {
            return Err(Error::config("beta_multiples", format!("{b} must be >= 0")));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            alpha: self.alpha,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            latent_weight: self.latent_weight,
            include_bias: self.include_bias,
            memory_source: self.memory_source,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta_multiple * self.alpha
    }

    /// Every field in a fixed order, in a form [`RunConfig::parse_str`] reads back.
    pub fn to_text(&self) -> String {
        let fields: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.to_string()),
            ("train_images", show_path(&self.train_images)),
            ("train_labels", show_path(&self.train_labels)),
            ("test_images", show_path(&self.test_images)),
            ("test_labels", show_path(&self.test_labels)),
            ("cifar_train", join(&self.cifar_train.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())),
            ("cifar_test", join(&self.cifar_test.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())),
            ("cache_dir", show_path(&self.cache_dir)),
            ("synth_count", self.synth_count.to_string()),
            ("inlier_class", self.inlier_class.to_string()),
            ("fold", self.fold.to_string()),
            ("outlier_ratio", self.outlier_ratio.to_string()),
            ("max_train", self.max_train.to_string()),
            ("max_test", self.max_test.to_string()),
            ("variant", self.variant.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta_multiple", self.beta_multiple.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("latent_weight", self.latent_weight.to_string()),
            ("include_bias", self.include_bias.to_string()),
            (
                "memory_source",
                match self.memory_source {
                    MemorySource::Total => "total".into(),
                    MemorySource::Recon => "recon".into(),
                },
            ),
            (
                "precision",
                match self.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
            ),
            ("out", self.out.display().to_string()),
            ("histogram_bins", self.histogram_bins.to_string()),
            (
                "f1_threshold",
                match self.f1_threshold {
                    F1Threshold::Test => "test".into(),
                    F1Threshold::Validation => "val".into(),
                },
            ),
            ("f1_val_quantile", self.f1_val_quantile.to_string()),
            ("beta_multiples", join(&self.beta_multiples)),
            ("corruptions", join(&self.corruptions)),
            ("levels", join(&self.levels)),
        ];
        let mut out = String::new();
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# comment\ndataset = synthetic\ninlier_class = 1\nalpha = 0.05 # trailing\n\
                    levels = 1,3\ncorruptions = exposure\ntrain_images = a b/c.idx\nprecision = f32\n";
        let c = RunConfig::parse_str(text).unwrap();
        assert_eq!(c.dataset, Provenance::Synthetic);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.levels, vec![1, 3]);
        assert_eq!(c.train_images, Some(PathBuf::from("a b/c.idx")));
        assert_eq!(RunConfig::parse_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        for (text, field) in [
            ("alpha = -1", "alpha"),
            ("epochs = many", "epochs"),
            ("colour = red", "colour"),
            ("levels = 0", "levels"),
            ("inlier_class = 12", "inlier_class"),
            ("justtext", "line 1"),
        ] {
            match RunConfig::parse_str(text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
