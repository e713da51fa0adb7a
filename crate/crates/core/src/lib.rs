//! Types shared by every stage of the histopathology pipeline: the scalar
//! abstraction used by the model math, the canonical diagnostic class list,
//! and the per-patch prediction records that flow from inference into voting,
//! metrics and rendering.

pub mod classes;
pub mod records;
pub mod scalar;

pub use classes::{ClassLabel, UnknownLabel, CLASS_LIST_VERSION, NUM_CLASSES};
pub use records::{LogError, LogMeta, Modality, PatchPrediction, PredictionLog};
pub use scalar::{Scalar, ScalarKind};
