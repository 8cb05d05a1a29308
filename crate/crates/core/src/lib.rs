//! Online action recognition from skeleton streams using exponentially
//! weighted covariance descriptors compared under the Stein divergence.
//!
//! The pipeline:
//!
//! 1. [`skeleton`] turns raw joint positions into translation and scale
//!    invariant feature vectors and per-frame weights.
//! 2. [`covariance`] keeps a weighted covariance of the recent frames with an
//!    `O(d^2)` update per frame.
//! 3. [`spd`] and [`projection`] compare descriptors and learn an
//!    orthonormal projection that separates classes.
//! 4. [`recognizer`] trains per-class models and labels streams online,
//!    emitting action boundaries.
//! 5. [`eval`] scores recognitions against annotated streams.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod eval;
pub mod io;
pub mod projection;
pub mod recognizer;
pub mod skeleton;
pub mod spd;
pub mod synth;

pub use nalgebra;

pub use covariance::{batch_weighted_covariance, WeightedCovarianceState, WeightedFrame};
pub use error::{Error, Result};
pub use eval::{MetricsReport, Segment, StreamAnnotation};
pub use projection::{learn_projection, ProjectionConfig, ProjectionMatrix};
pub use recognizer::{
    EventKind, Label, LabeledInstance, RecognitionEvent, RecognizerConfig, TrainedModel,
};
pub use skeleton::{normalize_skeleton, JointLayout, NeutralPose, SkeletonFrame};
pub use spd::{regularize, stein_divergence, SpdMatrix};
