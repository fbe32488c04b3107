//! Command implementations behind the `gradcon` binary.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{encode_checkpoint, load_checkpoint};
use crate::config::{F1Threshold, Precision, RunConfig};
use crate::data::{
    corrupt_dataset, load_cifar10, load_dataset, load_idx_pair, make_fmnist_folds, make_one_class_split,
    save_dataset, synth_shapes, CorruptionKind, CorruptionSpec, ImageDataset, OneClassSplit, Provenance,
    ShapeClass,
};
use crate::error::{Error, Result};
use crate::eval::{
    auroc, beta_csv, beta_sweep, decomposition_report, f1_at_threshold, f1_max, histogram_csv, histogram_overlap,
    metrics_csv, BetaPoint, F1Point, ScoreKind, SplitScores,
};
use crate::gradcon::{score_indices, train, EpochLog, GradientMemory, ScoreConfig};
use crate::nn::{build_model, ModelParams, Variant, INPUT_SIZE};
use crate::tensor::Element;

/// Training and test images plus the index split used by every command.
pub struct LoadedData {
    pub train: ImageDataset,
    test: Option<ImageDataset>,
    pub split: OneClassSplit,
}

impl LoadedData {
    /// The dataset `split.test_in` / `split.test_out` index into.
    pub fn test(&self) -> &ImageDataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::config(field, "path required for this dataset"))
}

fn shape_class(class: u8) -> ShapeClass {
    if class == 0 {
        ShapeClass::Circles
    } else {
        ShapeClass::Crosses
    }
}

fn read_sources(cfg: &RunConfig) -> Result<(ImageDataset, Option<ImageDataset>)> {
    match cfg.dataset {
        Provenance::Synthetic => {
            let n_test = (cfg.synth_count / 2).max(1);
            let train = synth_shapes(cfg.synth_count, shape_class(cfg.inlier_class), cfg.seed)?;
            let inl = synth_shapes(n_test, shape_class(cfg.inlier_class), cfg.seed.wrapping_add(1))?;
            let out = synth_shapes(n_test, shape_class(1 - cfg.inlier_class), cfg.seed.wrapping_add(2))?;
            Ok((train, Some(inl.concat(&out)?)))
        }
        Provenance::Cifar10 => {
            if cfg.cifar_train.is_empty() || cfg.cifar_test.is_empty() {
                return Err(Error::config("cifar_train", "cifar_train and cifar_test are required"));
            }
            Ok((load_cifar10(&cfg.cifar_train)?, Some(load_cifar10(&cfg.cifar_test)?)))
        }
        Provenance::Mnist => {
            let train = load_idx_pair(
                required(&cfg.train_images, "train_images")?,
                required(&cfg.train_labels, "train_labels")?,
                INPUT_SIZE,
                cfg.dataset,
            )?;
            let test = load_idx_pair(
                required(&cfg.test_images, "test_images")?,
                required(&cfg.test_labels, "test_labels")?,
                INPUT_SIZE,
                cfg.dataset,
            )?;
            Ok((train, Some(test)))
        }
        Provenance::Fmnist => {
            let mut pool = load_idx_pair(
                required(&cfg.train_images, "train_images")?,
                required(&cfg.train_labels, "train_labels")?,
                INPUT_SIZE,
                cfg.dataset,
            )?;
            if let (Some(i), Some(l)) = (&cfg.test_images, &cfg.test_labels) {
                pool = pool.concat(&load_idx_pair(i, l, INPUT_SIZE, cfg.dataset)?)?;
            }
            Ok((pool, None))
        }
    }
}

fn read_cached(cfg: &RunConfig) -> Result<(ImageDataset, Option<ImageDataset>)> {
    let dir = match (&cfg.cache_dir, cfg.dataset) {
        (Some(d), ds) if ds != Provenance::Synthetic => d,
        _ => return read_sources(cfg),
    };
    let train_path = dir.join(format!("{}-train.gcds", cfg.dataset));
    let test_path = dir.join(format!("{}-test.gcds", cfg.dataset));
    if train_path.exists() {
        let test = if test_path.exists() {
            Some(load_dataset(&test_path)?)
        } else {
            None
        };
        return Ok((load_dataset(&train_path)?, test));
    }
    let (train, test) = read_sources(cfg)?;
    fs::create_dir_all(dir)?;
    save_dataset(&train, &train_path)?;
    if let Some(t) = &test {
        save_dataset(t, &test_path)?;
    }
    Ok((train, test))
}

const SUBSAMPLE_STREAM: u64 = 0x5355_4253;

/// Keeps a seeded uniform sample of `k` entries, in ascending order.
fn subsample(list: &mut Vec<usize>, k: usize, rng: &mut ChaCha8Rng) {
    if list.len() > k {
        list.shuffle(rng);
        list.truncate(k);
        list.sort_unstable();
    }
}

/// Loads the configured dataset and builds the one-class split.
pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let (train, test) = read_cached(cfg)?;
    let mut split = match &test {
        Some(t) => make_one_class_split(&train, t, cfg.inlier_class, cfg.seed)?,
        None => make_fmnist_folds(&train, cfg.inlier_class, 5, cfg.outlier_ratio, cfg.seed)?.swap_remove(cfg.fold),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SUBSAMPLE_STREAM);
    if cfg.max_train > 0 {
        subsample(&mut split.train, cfg.max_train, &mut rng);
    }
    if cfg.max_test > 0 {
        subsample(&mut split.test_in, cfg.max_test, &mut rng);
        let keep = if test.is_some() { split.test_in.len() } else { cfg.max_test };
        subsample(&mut split.test_out, keep, &mut rng);
    }
    Ok(LoadedData { train, test, split })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn metrics_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("metrics")
}

pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("checkpoint.gcon")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub steps: u64,
    pub train_images: usize,
    pub checkpoint: PathBuf,
}

fn train_typed<T: Element>(cfg: &RunConfig, data: &LoadedData) -> Result<(Vec<u8>, Vec<EpochLog>, u64)> {
    let model = build_model::<T>(cfg.variant, data.train.channels(), cfg.seed)?;
    let outcome = train(model, &data.train, &data.split.train, &data.split.val, &cfg.train_config())?;
    let bytes = encode_checkpoint(&outcome.model, &outcome.memory)?;
    Ok((bytes, outcome.log, outcome.steps))
}

/// Trains on the inlier class and writes `config.resolved`, `checkpoint.gcon` and `log.jsonl`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    write(&cfg.out.join("config.resolved"), cfg.to_text())?;
    let data = load_data(cfg)?;
    log::info!(
        "training {} on class {} ({} images, {} validation)",
        cfg.variant,
        cfg.inlier_class,
        data.split.train.len(),
        data.split.val.len()
    );
    let (bytes, log, steps) = match cfg.precision {
        Precision::F64 => train_typed::<f64>(cfg, &data)?,
        Precision::F32 => train_typed::<f32>(cfg, &data)?,
    };
    let checkpoint = default_checkpoint(cfg);
    write(&checkpoint, bytes)?;
    let mut lines = String::new();
    for entry in &log {
        lines.push_str(&serde_json::to_string(entry)?);
        lines.push('\n');
    }
    write(&cfg.out.join("log.jsonl"), lines)?;
    Ok(TrainReport {
        log,
        steps,
        train_images: data.split.train.len(),
        checkpoint,
    })
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(ModelParams<f64>, GradientMemory<f64>, Vec<u8>)> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| default_checkpoint(cfg));
    let bytes = fs::read(&path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (model, memory) = load_checkpoint(&path)?;
    if model.variant != cfg.variant {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} model but the config asks for {}",
            model.variant, cfg.variant
        )));
    }
    Ok((model, memory, bytes))
}

fn score_typed<T: Element>(
    model: &ModelParams<f64>,
    memory: &GradientMemory<f64>,
    data: &ImageDataset,
    indices: &[usize],
    sc: &ScoreConfig,
) -> Result<Vec<crate::gradcon::SampleScore>> {
    let m: ModelParams<T> = model.cast();
    let mem: GradientMemory<T> = memory.cast();
    score_indices(&m, &mem, data, indices, sc)
}

fn score(
    cfg: &RunConfig,
    model: &ModelParams<f64>,
    memory: &GradientMemory<f64>,
    data: &ImageDataset,
    indices: &[usize],
) -> Result<Vec<crate::gradcon::SampleScore>> {
    if data.channels() != model.in_channels {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {} channels, dataset has {}",
            model.in_channels,
            data.channels()
        )));
    }
    let sc = ScoreConfig {
        alpha: cfg.alpha,
        beta: cfg.beta(),
    };
    match cfg.precision {
        Precision::F64 => score_typed::<f64>(model, memory, data, indices, &sc),
        Precision::F32 => score_typed::<f32>(model, memory, data, indices, &sc),
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreCache {
    key: u64,
    scores: SplitScores,
}

fn cache_key(cfg: &RunConfig, checkpoint: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    checkpoint.hash(&mut h);
    cfg.to_text().hash(&mut h);
    h.finish()
}

/// Test-set scores, read from `metrics/scores.json` when it matches this checkpoint and config.
fn split_scores(
    cfg: &RunConfig,
    data: &LoadedData,
    model: &ModelParams<f64>,
    memory: &GradientMemory<f64>,
    checkpoint: &[u8],
) -> Result<SplitScores> {
    let path = metrics_dir(cfg).join("scores.json");
    let key = cache_key(cfg, checkpoint);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cache) = serde_json::from_str::<ScoreCache>(&text) {
            if cache.key == key {
                log::info!("reusing cached scores from {}", path.display());
                return Ok(cache.scores);
            }
        }
    }
    let scores = SplitScores {
        inliers: score(cfg, model, memory, data.test(), &data.split.test_in)?,
        outliers: score(cfg, model, memory, data.test(), &data.split.test_out)?,
    };
    write(&path, serde_json::to_string(&ScoreCache { key, scores: scores.clone() })?)?;
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub inlier_class: u8,
    pub variant: String,
    pub test_inliers: usize,
    pub test_outliers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub auroc: BTreeMap<String, f64>,
    pub f1: BTreeMap<String, F1Point>,
    pub overlap_percent: BTreeMap<String, f64>,
    pub mean_inliers: BTreeMap<String, f64>,
    pub mean_outliers: BTreeMap<String, f64>,
    pub decomposition: Vec<(String, f64)>,
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores the test split and writes `metrics/metrics.csv`, histogram and decomposition CSVs and `summary.json`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    cfg.validate()?;
    let (model, memory, bytes) = load_model(cfg, checkpoint)?;
    let data = load_data(cfg)?;
    let scores = split_scores(cfg, &data, &model, &memory, &bytes)?;
    let mut kinds = vec![ScoreKind::Recon];
    if cfg.variant == Variant::Vae {
        kinds.push(ScoreKind::Latent);
    }
    kinds.extend([ScoreKind::Grad, ScoreKind::Combined]);

    let val_scores = match cfg.f1_threshold {
        F1Threshold::Validation if !data.split.val.is_empty() => {
            Some(score(cfg, &model, &memory, &data.train, &data.split.val)?)
        }
        F1Threshold::Validation => return Err(Error::config("f1_threshold", "validation split is empty")),
        F1Threshold::Test => None,
    };

    let dir = metrics_dir(cfg);
    let mut summary = EvalSummary {
        dataset: cfg.dataset.to_string(),
        inlier_class: cfg.inlier_class,
        variant: cfg.variant.to_string(),
        test_inliers: scores.inliers.len(),
        test_outliers: scores.outliers.len(),
        alpha: cfg.alpha,
        beta: cfg.beta(),
        auroc: BTreeMap::new(),
        f1: BTreeMap::new(),
        overlap_percent: BTreeMap::new(),
        mean_inliers: BTreeMap::new(),
        mean_outliers: BTreeMap::new(),
        decomposition: decomposition_report(&scores)?,
    };
    let mut rows = Vec::new();
    for kind in kinds {
        let name = kind.to_string();
        let set = scores.set(kind)?;
        let a = set.auroc()?;
        let f1 = match &val_scores {
            Some(v) => {
                let mut vals = v.iter().map(|s| kind.of(s)).collect::<Result<Vec<_>>>()?;
                let threshold = quantile(&mut vals, cfg.f1_val_quantile);
                F1Point {
                    f1: f1_at_threshold(&set.inliers, &set.outliers, threshold)?,
                    threshold,
                }
            }
            None => f1_max(&set.inliers, &set.outliers)?,
        };
        let overlap = histogram_overlap(&set.inliers, &set.outliers, cfg.histogram_bins)?;
        write(&dir.join(format!("hist_{name}.csv")), histogram_csv(&set.histogram(cfg.histogram_bins)?))?;
        rows.push((format!("auroc_{name}"), a));
        rows.push((format!("f1_{name}"), f1.f1));
        rows.push((format!("f1_threshold_{name}"), f1.threshold));
        rows.push((format!("overlap_{name}"), overlap));
        summary.auroc.insert(name.clone(), a);
        summary.f1.insert(name.clone(), f1);
        summary.overlap_percent.insert(name.clone(), overlap);
        summary.mean_inliers.insert(name.clone(), mean(&set.inliers));
        summary.mean_outliers.insert(name, mean(&set.outliers));
    }
    write(&dir.join("metrics.csv"), metrics_csv(cfg.inlier_class, &rows))?;
    let decomposition: Vec<(String, f64)> = summary
        .decomposition
        .iter()
        .map(|(k, v)| (format!("auroc_{k}"), *v))
        .collect();
    write(&dir.join("decomposition.csv"), metrics_csv(cfg.inlier_class, &decomposition))?;
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// AUROC of `recon + beta * grad_loss` for each `beta_multiples` entry, written to `metrics/beta_sweep.csv`.
pub fn cmd_sweep_beta(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<BetaPoint>> {
    cfg.validate()?;
    let (model, memory, bytes) = load_model(cfg, checkpoint)?;
    let data = load_data(cfg)?;
    let scores = split_scores(cfg, &data, &model, &memory, &bytes)?;
    let points = beta_sweep(&scores, cfg.alpha, &cfg.beta_multiples)?;
    write(&metrics_dir(cfg).join("beta_sweep.csv"), beta_csv(&points))?;
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub kind: CorruptionKind,
    pub level: u8,
    pub auroc_recon: f64,
    pub auroc_grad: f64,
    pub auroc_combined: f64,
}

/// Clean inlier test images against corrupted copies of themselves, per kind and level.
pub fn cmd_corrupt_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<CorruptionRow>> {
    cfg.validate()?;
    let (model, memory, bytes) = load_model(cfg, checkpoint)?;
    let data = load_data(cfg)?;
    let clean = split_scores(cfg, &data, &model, &memory, &bytes)?.inliers;
    let inliers = data.test().subset(&data.split.test_in)?;
    let all: Vec<usize> = (0..inliers.len()).collect();
    let mut rows = Vec::new();
    let mut csv = String::from("kind,level,auroc_recon,auroc_grad,auroc_combined\n");
    for &kind in &cfg.corruptions {
        for &level in &cfg.levels {
            let corrupted = corrupt_dataset(&inliers, CorruptionSpec::new(kind, level)?)?;
            let bad = score(cfg, &model, &memory, &corrupted, &all)?;
            let scores = SplitScores {
                inliers: clean.clone(),
                outliers: bad,
            };
            let a = |k: ScoreKind| -> Result<f64> {
                let s = scores.set(k)?;
                auroc(&s.inliers, &s.outliers)
            };
            let row = CorruptionRow {
                kind,
                level,
                auroc_recon: a(ScoreKind::Recon)?,
                auroc_grad: a(ScoreKind::Grad)?,
                auroc_combined: a(ScoreKind::Combined)?,
            };
            log::info!("{kind} level {level}: combined AUROC {:.4}", row.auroc_combined);
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                kind, level, row.auroc_recon, row.auroc_grad, row.auroc_combined
            ));
            rows.push(row);
        }
    }
    write(&metrics_dir(cfg).join("corruption.csv"), csv)?;
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "gradcon", version, about = "Gradient-constrained autoencoder anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config field; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Checkpoint to evaluate (defaults to `<out>/checkpoint.gcon`).
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the inlier class.
    Train,
    /// Score the test split and write metrics.
    Eval,
    /// AUROC over a range of beta multiples.
    SweepBeta,
    /// AUROC of clean against corrupted inlier images.
    CorruptEval,
}

impl Cli {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{o}`")))?;
            cfg.set(k, v)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let ckpt = cli.checkpoint.as_deref();
    match cli.command {
        Command::Train => {
            let r = cmd_train(&cfg)?;
            if let Some(last) = r.log.last() {
                println!(
                    "trained {} steps; final recon {:.6}, grad loss {:.4}",
                    r.steps, last.mean_recon, last.mean_grad_loss
                );
            }
            println!("checkpoint: {}", r.checkpoint.display());
        }
        Command::Eval => {
            let s = cmd_eval(&cfg, ckpt)?;
            for (k, v) in &s.auroc {
                println!("auroc_{k}: {v:.4}");
            }
        }
        Command::SweepBeta => {
            for p in cmd_sweep_beta(&cfg, ckpt)? {
                println!("beta {:.4}: auroc {:.4}", p.beta, p.auroc);
            }
        }
        Command::CorruptEval => {
            for r in cmd_corrupt_eval(&cfg, ckpt)? {
                println!("{} level {}: auroc {:.4}", r.kind, r.level, r.auroc_combined);
            }
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
