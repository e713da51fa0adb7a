//! Hybrid CNN-transformer classifier for histology patches.
//!
//! The network has four stages:
//!
//! * a backbone producing three feature taps at decreasing resolution plus a
//!   final map ([`ReducedBackbone`], or any [`BackboneAdapter`]);
//! * a transformer module on the final map: a transformer block with
//!   multi-head low-rank linear attention, a dilated convolution and a
//!   residual path ([`Vtm`]);
//! * dual fusion: the taps are aligned and concatenated (early), then
//!   concatenated with the transformer output (late);
//! * a residual convolutional head with global pooling, two fully connected
//!   layers and a softmax.
//!
//! Everything is generic over the scalar type; [`Mavit32`] is the production
//! model and [`Mavit64`] is used for finite-difference gradient checks.
//! Gradients come from the small reverse-mode tape in [`graph`].

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod features;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod layers;
pub mod model;
pub mod params;
pub mod shapes;
pub mod tensor;
pub mod vtm;

pub use attention::{linear_attention, AttentionInputs, MultiHeadLinearAttention};
pub use backbone::{BackboneAdapter, ReducedBackbone};
pub use checkpoint::{checkpoint_id, read_header, CheckpointHeader, FORMAT_VERSION};
pub use config::{Ablation, BackboneKind, ModelConfig};
pub use error::MavitError;
pub use features::{FeatureMap, FeaturePyramid};
pub use fusion::late_fusion;
pub use graph::{Graph, Var};
pub use head::softmax;
pub use model::{default_classes, patch_from_rgb8, Mavit};
pub use params::{ParamId, ParamStore};
pub use shapes::{infer_shapes, ShapeTrace};
pub use tensor::Tensor;
pub use vtm::{TBlock, Vtm};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Mavit32 = Mavit<f32>;
pub type Mavit64 = Mavit<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
