//! Keypoint-based grasp detection back end: heatmap containers, grasp
//! geometry, training losses, target encoding, decoding and grouping,
//! rectangle-metric evaluation, depth-based grasp scoring and dataset
//! preparation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the common instantiations; plain names use `f64`.

pub mod annotations;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod evaluator;
pub mod geometry;
pub mod gktb;
pub mod grouper;
pub mod losses;
pub mod profile;
pub mod scalar;
pub mod scoring;
pub mod selfcheck;
pub mod simulation;
pub mod synthetic;
pub mod tensor;

pub use decoder::{decode_bundle, DecodeConfig, DEFAULT_TOP_K};
pub use encoder::{encode_targets, ideal_bundle, EncoderConfig};
pub use evaluator::{evaluate_dataset, is_match, Policy};
pub use geometry::{rotated_iou, OrientationClasses};
pub use grouper::group;
pub use profile::ProfileName;
pub use scalar::Scalar;
pub use tensor::{Grid2D, HeatmapBundle, Role};

pub type Point = geometry::Point<f64>;
pub type PointF32 = geometry::Point<f32>;
pub type Grasp = geometry::Grasp<f64>;
pub type GraspF32 = geometry::Grasp<f32>;
pub type KeypointPair = geometry::KeypointPair<f64>;
pub type OrientedRect = geometry::OrientedRect<f64>;
pub type OrientedRectF32 = geometry::OrientedRect<f32>;
pub type DetectedKeypoint = decoder::DetectedKeypoint<f64>;
pub type DetectedKeypointF32 = decoder::DetectedKeypoint<f32>;
pub type GroupingThresholds = grouper::GroupingThresholds<f64>;
pub type GraspCandidate = grouper::GraspCandidate<f64>;
pub type RankedGrasp = grouper::RankedGrasp<f64>;
pub type RankedGraspF32 = grouper::RankedGrasp<f32>;
pub type Profile = profile::Profile<f64>;
pub type ProfileF32 = profile::Profile<f32>;
pub type MatchCriteria = evaluator::MatchCriteria<f64>;
pub type ChannelStats = dataset::ChannelStats<f64>;
pub type DepthImage = scoring::DepthImage<f64>;
pub type GripperModel2D = scoring::GripperModel2D<f64>;
pub type GraspScore = scoring::GraspScore<f64>;
pub type FocalParams = losses::FocalParams<f64>;
pub type LossWeights = losses::LossWeights<f64>;
