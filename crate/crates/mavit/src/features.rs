use histocad_core::Scalar;

use crate::error::MavitError;
use crate::tensor::Tensor;

/// `[height, width, channels]` activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T>(Tensor<T>);

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<T>) -> Result<Self, MavitError> {
        Ok(Self(Tensor::new(vec![height, width, channels], values)?))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self, MavitError> {
        if t.shape().len() != 3 || t.shape().contains(&0) {
            return Err(MavitError::Shape(format!("feature map must be [H, W, C], got {:?}", t.shape())));
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }

    pub fn values(&self) -> &[T] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn ensure_finite(&self, stage: &str) -> Result<(), MavitError> {
        if self.0.is_finite() {
            Ok(())
        } else {
            Err(MavitError::NonFinite(stage.to_string()))
        }
    }
}

/// The three backbone taps, highest resolution first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub shallow: FeatureMap<T>,
    pub intermediate: FeatureMap<T>,
    pub deep: FeatureMap<T>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn validate(&self, tap_channels: usize) -> Result<(), MavitError> {
        let (s, m, d) = (self.shallow.height(), self.intermediate.height(), self.deep.height());
        if !(s > m && m > d) {
            return Err(MavitError::Shape(format!("pyramid resolutions {s}/{m}/{d} not strictly decreasing")));
        }
        for map in [&self.shallow, &self.intermediate, &self.deep] {
            if map.channels() != tap_channels {
                return Err(MavitError::Shape(format!(
                    "pyramid tap has {} channels, expected {tap_channels}",
                    map.channels()
                )));
            }
        }
        Ok(())
    }
}
