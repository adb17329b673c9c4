//! Imitation training on demonstration labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, Subset};
use crate::geometry::OffsetEstimate;
use crate::image::ImageError;
use crate::regressor::net::{batch_gradient, forward, Input, NetError, Weights};
use crate::regressor::preprocess;
use crate::{Image, PolicyWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptySplit,
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Image {
        path: std::path::PathBuf,
        source: ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `v <- momentum * v + g ; w <- w - lr * v`
    Sgd,
    /// Adam with `beta1 = momentum`.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub optimizer: Optimizer,
    /// Targets are multiplied by this during training; the factor is folded
    /// back into the output layer afterwards, so predictions stay in meters.
    pub label_scale: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            momentum: 0.9,
            batch_size: 8,
            epochs: 100,
            rng_seed: 2024,
            optimizer: Optimizer::Adam,
            label_scale: 20.0,
            cosine_decay: true,
        }
    }
}

const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.label_scale > 0.0 && self.label_scale.is_finite()) {
            return Err(TrainError::Config("label_scale must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A preprocessed demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Input<f32>,
    pub target: OffsetEstimate<f32>,
}

impl Sample {
    pub fn from_image(image: &Image, label: crate::OffsetEstimate) -> Self {
        Self {
            input: preprocess(image),
            target: OffsetEstimate::new(label.dx as f32, label.dy as f32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_mse: f64,
    /// Loss on the held-out samples after the epoch, `NaN` when there are none.
    pub test_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: PolicyWeights,
    /// Train loss of the initial weights.
    pub initial_train_mse: f64,
    pub log: Vec<EpochLog>,
}

/// Mean `0.5 * |prediction - target|^2`, which equals the per-component MSE.
pub fn mean_loss(w: &PolicyWeights, samples: &[Sample]) -> Result<f64, NetError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = samples
        .par_iter()
        .map(|s| {
            let y = forward(w, &s.input)?;
            let (rx, ry) = ((y.dx - s.target.dx) as f64, (y.dy - s.target.dy) as f64);
            Ok(0.5 * (rx * rx + ry * ry))
        })
        .collect::<Result<Vec<f64>, NetError>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Divides the output layer by `s`.
fn unscale(w: &PolicyWeights, s: f32) -> PolicyWeights {
    let mut out = w.clone();
    for name in ["fc.weight", "fc.bias"] {
        for v in out.get_mut(name).expect("layout").data.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Trains from He-initialized weights. `test` samples are only evaluated.
pub fn train(train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let scale = cfg.label_scale as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut weights = Weights::<f32>::he_init(&mut rng);
    let initial_train_mse = mean_loss(&unscale(&weights, scale), train)?;
    let mut m = Weights::<f32>::zeros();
    let mut v = Weights::<f32>::zeros();
    let mu = cfg.momentum as f32;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut t = 0i32;

    for epoch in 1..=cfg.epochs {
        let lr = if cfg.cosine_decay {
            let phase = (epoch - 1) as f64 / cfg.epochs as f64;
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
        } else {
            cfg.learning_rate
        } as f32;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Input<f32>, OffsetEstimate<f32>)> = chunk
                .iter()
                .map(|&i| (train[i].input.clone(), train[i].target.scale(scale)))
                .collect();
            let (loss, grad) = batch_gradient(&weights, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    m.scale(mu);
                    m.add_scaled(&grad, 1.0);
                    weights.add_scaled(&m, -lr);
                }
                Optimizer::Adam => {
                    t += 1;
                    let c1 = 1.0 - mu.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for ((w, g), (m, v)) in weights
                        .tensors
                        .iter_mut()
                        .zip(&grad.tensors)
                        .zip(m.tensors.iter_mut().zip(v.tensors.iter_mut()))
                    {
                        for i in 0..w.data.len() {
                            let g = g.data[i];
                            m.data[i] = mu * m.data[i] + (1.0 - mu) * g;
                            v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * g * g;
                            let step = (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
                            w.data[i] -= lr * step;
                        }
                    }
                }
            }
            loss_sum += loss as f64;
            batches += 1;
        }
        let train_mse = loss_sum / batches as f64 / (cfg.label_scale * cfg.label_scale);
        if !train_mse.is_finite() || weights.validate().is_err() {
            return Err(TrainError::Diverged { epoch });
        }
        let test_mse = mean_loss(&unscale(&weights, scale), test)?;
        log.push(EpochLog {
            epoch,
            train_mse,
            test_mse,
        });
    }
    Ok(TrainOutcome {
        weights: unscale(&weights, scale),
        initial_train_mse,
        log,
    })
}

/// Loads and preprocesses one subset of a manifest's demonstrations.
pub fn load_samples(
    manifest: &DatasetManifest,
    base_dir: &Path,
    subset: Subset,
) -> Result<Vec<Sample>, TrainError> {
    manifest
        .demonstrations(subset, base_dir)
        .par_iter()
        .map(|d| {
            let img = Image::load_ppm(&d.image_path).map_err(|source| TrainError::Image {
                path: d.image_path.clone(),
                source,
            })?;
            Ok(Sample::from_image(&img, d.offset))
        })
        .collect()
}

/// Trains on the manifest's train split and logs loss on its test split.
pub fn train_from_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let train_set = load_samples(manifest, base_dir, Subset::Train)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let test_set = load_samples(manifest, base_dir, Subset::Test)?;
    train(&train_set, &test_set, cfg)
}
