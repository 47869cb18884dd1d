//! Fiber orientation analysis for large 3D volumes.
//!
//! The pipeline estimates a gradient structure tensor per voxel, takes the
//! eigenvector of its smallest eigenvalue as the local fiber direction,
//! expresses it in a cylindrical frame around a user-supplied long axis
//! (helical angle, intrusion angle, fractional anisotropy), and traces
//! streamlines through the resulting field. Volumes are processed as padded
//! chunks whose results are bit-identical to a single whole-volume pass.

pub mod analysis;
pub mod cardiac_frame;
pub mod chunk_engine;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod phantom;
pub mod structure_tensor;
pub mod tractography;
pub mod volume_io;

pub use error::{Error, Result};
