//! Demonstration sequences: images of a misaligned highlight labelled with the
//! injected extrinsic offset, which shrinks geometrically along each sequence.
//!
//! The generator knows the ground truth, so it plays the expert. Every
//! sequence is drawn from its own RNG stream keyed by sequence id, which keeps
//! output independent of how many threads generate it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::apply_offset;
use crate::image::ImageError;
use crate::render::{check_frustum, render_scene, RenderError};
use crate::{Image, OffsetEstimate, SceneConfig, Vec3};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Placement attempts before a sequence gives up.
pub const MAX_PLACEMENT_TRIES: usize = 100;
/// Train share of sequences, in tenths.
const TRAIN_TENTHS: usize = 7;
const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("{n} sequences leave an empty test split; at least 4 are required")]
    Split { n: usize },
    #[error("sequence {id}: no valid tag placement after {tries} tries")]
    Placement { id: u32, tries: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Region of allowed tag centers, in-plane meters around the plane's reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl PlacementRegion {
    pub fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        let a = self.x_min + (self.x_max - self.x_min) * rng.gen::<f64>();
        let b = self.y_min + (self.y_max - self.y_min) * rng.gen::<f64>();
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_sequences: usize,
    pub steps_per_sequence: usize,
    pub max_offset: f64,
    pub decay: f64,
    pub placement: PlacementRegion,
    pub rng_seed: u64,
    pub resolution: [u32; 2],
    pub pixel_noise_stddev: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_sequences: 100,
            steps_per_sequence: 8,
            max_offset: 0.05,
            decay: 0.6,
            placement: PlacementRegion {
                x_min: -0.15,
                x_max: 0.15,
                y_min: -0.15,
                y_max: 0.15,
            },
            rng_seed: 2024,
            resolution: [256, 256],
            pixel_noise_stddev: 0.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.n_sequences < 2 {
            return bad("n_sequences must be at least 2");
        }
        if self.steps_per_sequence < 1 {
            return bad("steps_per_sequence must be at least 1");
        }
        if !(self.max_offset > 0.0 && self.max_offset.is_finite()) {
            return bad("max_offset must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie strictly between 0 and 1");
        }
        let p = &self.placement;
        if !(p.x_min <= p.x_max && p.y_min <= p.y_max) {
            return bad("placement bounds are inverted");
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return bad("resolution must be positive");
        }
        if !(self.pixel_noise_stddev >= 0.0 && self.pixel_noise_stddev.is_finite()) {
            return bad("pixel_noise_stddev must be non-negative");
        }
        Ok(())
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.resolution[0], self.resolution[1])
    }

    /// Label of step `k` in a sequence starting at `initial`.
    pub fn offset_at(&self, initial: OffsetEstimate, k: usize) -> OffsetEstimate {
        initial.scale(self.decay.powi(k as i32))
    }
}

/// One labelled image of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub k: u32,
    pub offset: OffsetEstimate,
    /// Path relative to the manifest's directory.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub id: u32,
    pub tag_center: Vec3,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scene: SceneConfig,
    pub gen: GenConfig,
    pub sequences: Vec<SequenceRecord>,
    pub split: Split,
}

/// A single (image, label) pair resolved against a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub image_path: PathBuf,
    pub offset: OffsetEstimate,
    pub sequence_id: u32,
    pub step_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        let m: Self = serde_json::from_str(s).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let s = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&s)
    }

    /// Structural checks: split disjoint and covering, labels within bounds.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Manifest(m));
        let mut ids: Vec<u32> = self.sequences.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        let mut split: Vec<u32> = self.split.train.iter().chain(&self.split.test).copied().collect();
        split.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate sequence id".into());
        }
        if ids != split {
            return bad("train and test splits must be disjoint and cover every sequence".into());
        }
        for seq in &self.sequences {
            for step in &seq.steps {
                if !step.offset.is_finite() || step.offset.norm() > self.gen.max_offset * 2f64.sqrt() + 1e-12 {
                    return bad(format!("sequence {} step {} has an out-of-range label", seq.id, step.k));
                }
            }
        }
        Ok(())
    }

    pub fn demonstrations(&self, subset: Subset, base_dir: &Path) -> Vec<Demonstration> {
        let ids = match subset {
            Subset::Train => &self.split.train,
            Subset::Test => &self.split.test,
        };
        ids.iter()
            .filter_map(|id| self.sequences.iter().find(|s| s.id == *id))
            .flat_map(|seq| {
                seq.steps.iter().map(move |step| Demonstration {
                    image_path: base_dir.join(&step.image),
                    offset: step.offset,
                    sequence_id: seq.id,
                    step_index: step.k,
                })
            })
            .collect()
    }

    /// Checks that every referenced image exists and parses.
    pub fn verify_images(&self, base_dir: &Path) -> Result<(), DatasetError> {
        for seq in &self.sequences {
            for step in &seq.steps {
                let path = base_dir.join(&step.image);
                Image::load_ppm(&path).map_err(|source| DatasetError::Image { path, source })?;
            }
        }
        Ok(())
    }
}

/// Deterministic RNG stream for one sequence.
pub fn sequence_rng(seed: u64, sequence_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sequence_id as u64);
    rng
}

pub fn image_name(sequence_id: u32, k: usize) -> String {
    format!("seq_{sequence_id:03}/step_{k:02}.ppm")
}

fn add_pixel_noise(img: &mut Image, stddev: f64, rng: &mut impl Rng) {
    if stddev <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, stddev).expect("finite stddev");
    for b in img.as_bytes_mut() {
        *b = (*b as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
}

/// Picks a tag placement for which the whole sequence stays in view.
pub fn place_tag(
    scene: &SceneConfig,
    gen: &GenConfig,
    worst_offset: OffsetEstimate,
    rng: &mut impl Rng,
) -> Option<SceneConfig> {
    let believed = apply_offset(&scene.true_extrinsics, worst_offset);
    (0..MAX_PLACEMENT_TRIES).find_map(|_| {
        let (a, b) = gen.placement.sample(rng);
        let cfg = scene.with_tag_at(a, b);
        check_frustum(&cfg, &believed, gen.resolution()).ok().map(|_| cfg)
    })
}

/// Renders one sequence in memory. Images are returned in step order,
/// matching the record's step list.
pub fn generate_sequence(
    scene: &SceneConfig,
    gen: &GenConfig,
    sequence_id: u32,
) -> Result<(SequenceRecord, Vec<Image>), DatasetError> {
    let mut rng = sequence_rng(gen.rng_seed, sequence_id);
    let m = gen.max_offset;
    let initial = OffsetEstimate::new(rng.gen_range(-m..=m), rng.gen_range(-m..=m));
    let placed = place_tag(scene, gen, initial, &mut rng).ok_or(DatasetError::Placement {
        id: sequence_id,
        tries: MAX_PLACEMENT_TRIES,
    })?;
    let mut steps = Vec::with_capacity(gen.steps_per_sequence);
    let mut images = Vec::with_capacity(gen.steps_per_sequence);
    for k in 0..gen.steps_per_sequence {
        let offset = gen.offset_at(initial, k);
        let believed = apply_offset(&placed.true_extrinsics, offset);
        let mut img = render_scene(&placed, &believed, gen.resolution())?;
        add_pixel_noise(&mut img, gen.pixel_noise_stddev, &mut rng);
        steps.push(StepRecord {
            k: k as u32,
            offset,
            image: image_name(sequence_id, k),
        });
        images.push(img);
    }
    Ok((
        SequenceRecord {
            id: sequence_id,
            tag_center: placed.tag.center,
            steps,
        },
        images,
    ))
}

/// Seeded shuffle, then the first ⌈0.7·n⌉ ids train and the rest test.
pub fn split_sequences(n: usize, seed: u64) -> Result<Split, DatasetError> {
    let n_train = (TRAIN_TENTHS * n).div_ceil(10);
    if n_train >= n {
        return Err(DatasetError::Split { n });
    }
    let mut ids: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    ids.shuffle(&mut rng);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Generates every sequence, writes images under `out_dir`, and writes
/// `manifest.json` next to them.
pub fn generate_dataset(
    scene: &SceneConfig,
    gen: &GenConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    scene.validate()?;
    gen.validate()?;
    let split = split_sequences(gen.n_sequences, gen.rng_seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let sequences = (0..gen.n_sequences as u32)
        .into_par_iter()
        .map(|id| {
            let (record, images) = generate_sequence(scene, gen, id)?;
            let dir = out_dir.join(format!("seq_{id:03}"));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for (step, img) in record.steps.iter().zip(&images) {
                let path = out_dir.join(&step.image);
                img.save_ppm(&path)
                    .map_err(|source| DatasetError::Image { path, source })?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let manifest = DatasetManifest {
        seed: gen.rng_seed,
        scene: scene.clone(),
        gen: gen.clone(),
        sequences,
        split,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
