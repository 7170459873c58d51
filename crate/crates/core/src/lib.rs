//! Label bootstrapping for ultrasound cone segmentation.
//!
//! The crate covers the whole loop: cheap masks from frame motion
//! ([`maskgen`]), fast good/bad triage ([`review`]), a small U-Net trained
//! from scratch on the surviving masks ([`segnet`]), refinement on a few
//! hand-labelled sequences and replicate-run statistics ([`experiment`],
//! [`stats`]). [`synthcone`] renders sequences with known ground truth so
//! every step can be exercised without clinical data.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod maskgen;
pub mod metrics;
pub mod review;
pub mod segnet;
pub mod sequence_io;
pub mod stats;
pub mod synthcone;

pub use error::{Error, Result};
pub use maskgen::{BinaryMask, MaskAlgorithm, MaskKind};
pub use sequence_io::{DatasetManifest, Frame, FrameSequence, PixelScale, Split};
