//! Ray-guided humanoid motion imitation at desk scale.
//!
//! The crate is organized around a pipeline: synthetic reference motions and
//! camera tracks ([`synthdata`]) are rendered to 2D keypoints, lifted back to
//! world-space rays ([`geometry`]), and fed as goal observations ([`observe`])
//! to control policies trained with PPO and teacher distillation ([`learn`])
//! on a reduced-order physics simulator ([`simulator`]). Reconstructed motion
//! is scored with kinematic and physical-plausibility metrics ([`metrics`]).

pub mod error;
pub mod geometry;
pub mod humanoid;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod observe;
pub mod rewards;
pub mod simulator;
pub mod synthdata;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
