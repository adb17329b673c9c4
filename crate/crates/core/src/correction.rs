//! Closed-loop extrinsic correction.
//!
//! Each iteration renders the scene with the current believed extrinsics,
//! asks the policy for the offset, and moves the believed translation by a
//! fraction of the prediction. The loop stops once a prediction is shorter
//! than `epsilon`. That test only looks at predictions, so the true error is
//! always measured and reported separately.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{place_tag, GenConfig};
use crate::geometry::apply_offset;
use crate::regressor::Policy;
use crate::render::render_scene;
use crate::{OffsetEstimate, RigidTransform, SceneConfig, Vec3};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Learned,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub step_size: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub estimator: EstimatorKind,
    pub resolution: [u32; 2],
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            epsilon: 1e-3,
            max_iterations: 50,
            estimator: EstimatorKind::Learned,
            resolution: [256, 256],
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::Config(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return bad("step_size must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return bad("resolution must be positive");
        }
        Ok(())
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.resolution[0], self.resolution[1])
    }
}

/// Translation error `(believed - true)` restricted to x and y.
pub fn residual_offset(believed: &RigidTransform, truth: &RigidTransform) -> OffsetEstimate {
    OffsetEstimate::new(
        believed.translation.x - truth.translation.x,
        believed.translation.y - truth.translation.y,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Extrinsics the frame was rendered with.
    pub believed: RigidTransform,
    pub prediction: OffsetEstimate,
    /// True offset of `believed`.
    pub residual: OffsetEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub tag_center: Vec3,
    pub injected: OffsetEstimate,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Extrinsics after the last update.
    pub final_believed: RigidTransform,
    pub final_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.ppm")
}

/// Runs one correction episode starting from `true + injected`.
///
/// Rendering and estimation failures end the episode early with `aborted`
/// set; only frame-dump I/O fails the call. When `dump_dir` is given every
/// rendered frame is written there as `frame_NNN.ppm`.
pub fn run_episode<P: Policy + ?Sized>(
    scene: &SceneConfig,
    loop_cfg: &LoopConfig,
    policy: &P,
    injected: OffsetEstimate,
    dump_dir: Option<&Path>,
) -> Result<EpisodeTrace, LoopError> {
    loop_cfg.validate()?;
    let truth = scene.true_extrinsics;
    let mut believed = apply_offset(&truth, injected);
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut aborted = None;

    for iteration in 1..=loop_cfg.max_iterations {
        let img = match render_scene(scene, &believed, loop_cfg.resolution()) {
            Ok(img) => img,
            Err(e) => {
                aborted = Some(format!("iteration {iteration}: render failed: {e}"));
                break;
            }
        };
        let image = match dump_dir {
            Some(dir) => {
                let name = frame_name(iteration - 1);
                let path = dir.join(&name);
                fs::write(&path, img.to_ppm()).map_err(|source| LoopError::Io { path, source })?;
                Some(name)
            }
            None => None,
        };
        let prediction = match policy.estimate(&img) {
            Ok(p) if p.is_finite() => p,
            Ok(p) => {
                aborted = Some(format!("iteration {iteration}: non-finite prediction {p:?}"));
                break;
            }
            Err(e) => {
                aborted = Some(format!("iteration {iteration}: estimator failed: {e}"));
                break;
            }
        };
        iterations.push(IterationRecord {
            iteration,
            believed,
            prediction,
            residual: residual_offset(&believed, &truth),
            image,
        });
        believed = apply_offset(&believed, -prediction.scale(loop_cfg.step_size));
        if prediction.norm() < loop_cfg.epsilon {
            converged = true;
            break;
        }
    }

    Ok(EpisodeTrace {
        tag_center: scene.tag.center,
        injected,
        iterations_used: iterations.len(),
        iterations,
        converged,
        final_believed: believed,
        final_error: residual_offset(&believed, &truth).norm(),
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub trial: usize,
    pub tag_center: Vec3,
    pub injected: OffsetEstimate,
    pub converged: bool,
    pub iterations: usize,
    pub final_error_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_trials: usize,
    pub convergence_rate: f64,
    pub mean_final_error_m: f64,
    pub median_final_error_m: f64,
    pub max_final_error_m: f64,
    pub mean_iterations: f64,
    pub episodes: Vec<EpisodeSummary>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn from_traces(traces: &[EpisodeTrace]) -> Self {
        let n = traces.len();
        let mut errors: Vec<f64> = traces.iter().map(|t| t.final_error).collect();
        errors.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            errors[n / 2]
        } else {
            0.5 * (errors[n / 2 - 1] + errors[n / 2])
        };
        let episodes = traces
            .iter()
            .enumerate()
            .map(|(trial, t)| EpisodeSummary {
                trial,
                tag_center: t.tag_center,
                injected: t.injected,
                converged: t.converged,
                iterations: t.iterations_used,
                final_error_m: t.final_error,
                aborted: t.aborted.clone(),
            })
            .collect();
        Self {
            n_trials: n,
            convergence_rate: traces.iter().filter(|t| t.converged).count() as f64 / n as f64,
            mean_final_error_m: errors.iter().sum::<f64>() / n as f64,
            median_final_error_m: median,
            max_final_error_m: errors[n - 1],
            mean_iterations: traces.iter().map(|t| t.iterations_used as f64).sum::<f64>() / n as f64,
            episodes,
        }
    }
}

/// First RNG stream used for trials. Dataset sequences use streams from 0, so
/// an evaluation that shares the generation seed never replays a sequence.
pub const TRIAL_STREAM_BASE: u64 = 1 << 32;

/// Random tag placement and injected offset for one trial, drawn from the
/// generation distribution.
pub fn sample_trial(
    scene: &SceneConfig,
    sampling: &GenConfig,
    seed: u64,
    trial: usize,
) -> (Option<SceneConfig>, OffsetEstimate) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRIAL_STREAM_BASE + trial as u64);
    let m = sampling.max_offset;
    let injected = OffsetEstimate::new(rng.gen_range(-m..=m), rng.gen_range(-m..=m));
    (place_tag(scene, sampling, injected, &mut rng), injected)
}

/// Runs `n_trials` seeded episodes and summarizes them. Traces come back in
/// trial order regardless of how episodes were scheduled.
pub fn run_evaluation<P: Policy + Sync + ?Sized>(
    scene: &SceneConfig,
    loop_cfg: &LoopConfig,
    sampling: &GenConfig,
    policy: &P,
    n_trials: usize,
    seed: u64,
) -> Result<(EvaluationReport, Vec<EpisodeTrace>), LoopError> {
    loop_cfg.validate()?;
    if n_trials < 1 {
        return Err(LoopError::Config("n_trials must be at least 1".into()));
    }
    let traces = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let (placed, injected) = sample_trial(scene, sampling, seed, trial);
            match placed {
                Some(cfg) => run_episode(&cfg, loop_cfg, policy, injected, None),
                None => Ok(EpisodeTrace {
                    tag_center: scene.tag.center,
                    injected,
                    iterations: Vec::new(),
                    converged: false,
                    iterations_used: 0,
                    final_believed: apply_offset(&scene.true_extrinsics, injected),
                    final_error: injected.norm(),
                    aborted: Some("no valid tag placement".into()),
                }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((EvaluationReport::from_traces(&traces), traces))
}
