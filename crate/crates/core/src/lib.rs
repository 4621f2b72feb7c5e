//! Semantic control space for aerial camera shots.
//!
//! The crate covers the whole chain from low-level shot parameters to
//! semantic descriptors and back:
//!
//! * [`shot`]: shot parameterization, the canonical presets and kinematic
//!   simulation of a camera following an actor.
//! * [`perceptual`]: significance testing of parameter variations and
//!   minimal perceptual units, plus dataset sampling in unit multiples.
//! * [`ranking`]: two-player TrueSkill rating from pairwise judgments.
//! * [`space`]: descriptor correlations, affinity propagation, mirrored
//!   scores, SMACOF embedding and emotion basis fitting.
//! * [`models`]: normalization, Lasso, conditional descriptor completion,
//!   D2P / P2D mappings and the optional MLP tier.
//! * [`crowd`]: a planted linear rater standing in for crowd workers.
//! * [`pipeline`]: file-based pipeline stages used by the CLI.

pub mod crowd;
pub mod error;
pub mod models;
pub mod perceptual;
pub mod pipeline;
pub mod ranking;
pub mod shot;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
