//! The policy: image in, estimated extrinsic offset out.

mod analytic;
pub mod net;
mod preprocess;
pub mod train;
pub mod weights_io;

use thiserror::Error;

pub use analytic::{AnalyticEstimator, DARK_LUMINANCE, MIN_REGION_PIXELS, RED_DOMINANCE};
pub use net::{backward, batch_gradient, forward, Input, NetError, Tensor, Weights};
pub use preprocess::preprocess;
pub use train::{
    train, train_from_manifest, EpochLog, Optimizer, Sample, TrainConfig, TrainError, TrainOutcome,
};
pub use weights_io::{load_weights, save_weights, WeightsFileError};

use crate::geometry::GeometryError;
use crate::{Image, OffsetEstimate, PolicyWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("{0} region not found in image")]
    NotFound(&'static str),
    #[error(transparent)]
    Geometry(GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Maps a camera image to the current extrinsic error.
pub trait Policy {
    fn estimate(&self, image: &Image) -> Result<OffsetEstimate, EstimateError>;
}

impl Policy for AnalyticEstimator {
    fn estimate(&self, image: &Image) -> Result<OffsetEstimate, EstimateError> {
        AnalyticEstimator::estimate(self, image)
    }
}

impl<F> Policy for F
where
    F: Fn(&Image) -> Result<OffsetEstimate, EstimateError>,
{
    fn estimate(&self, image: &Image) -> Result<OffsetEstimate, EstimateError> {
        self(image)
    }
}

/// The trained network as a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    weights: PolicyWeights,
}

impl LearnedPolicy {
    pub fn new(weights: PolicyWeights) -> Result<Self, NetError> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &PolicyWeights {
        &self.weights
    }
}

impl Policy for LearnedPolicy {
    fn estimate(&self, image: &Image) -> Result<OffsetEstimate, EstimateError> {
        let y = forward(&self.weights, &preprocess::<f32>(image))?;
        Ok(OffsetEstimate::new(y.dx as f64, y.dy as f64))
    }
}
