//! Video frame interpolation built from analytical optical flow.
//!
//! The pipeline estimates bidirectional flow between two frames (dense
//! polynomial-expansion flow or sparse Lucas-Kanade tracks densified by
//! inverse-distance weighting), converts it to intermediate flows, warps
//! both inputs to the target time and fuses them, either with a plain
//! linear blend or with a small learned fusion network.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod flo;
pub mod flow;
pub mod fusion;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod train;
pub mod warp;

pub use error::{Error, ErrorKind, Result};
pub use flow::DenseFlow;
pub use image::{BorderPolicy, Image};
