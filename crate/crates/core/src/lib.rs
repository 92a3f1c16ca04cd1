//! Differentiable delay-and-sum ultrasonic imaging.
//!
//! The crate chains a data-domain convolutional network, a delay-and-sum
//! (DAS) beamforming layer with an exact adjoint, and an image-domain
//! segmentation network, and trains them sequentially or end to end:
//!
//! - [`geometry`]: array, image grid, data volume, travel times
//! - [`das`]: index tables, DAS forward and adjoint
//! - [`phantom`], [`sim`]: random two-material phantoms and a point-scatterer
//!   simulator with noise and source undersampling
//! - [`autodiff`], [`nets`], [`optim`]: tape-based gradients, the two
//!   networks and Adam
//! - [`pipeline`]: datasets, the three training strategies and evaluation
//! - [`io`]: binary tensor files, checkpoints, run configuration and image export
//! - [`verify`]: dot-product adjoint tests and finite-difference gradient checks
//!
//! Runnable walkthroughs live in `examples/`; the `dasnet` binary wraps the
//! same operations for scripted runs.

pub mod autodiff;
pub mod das;
pub mod error;
pub mod geometry;
pub mod io;
pub mod nets;
pub mod optim;
pub mod params;
pub mod phantom;
pub mod pipeline;
pub mod sim;
pub mod tensor;
pub mod verify;

pub use das::{
    build_index_table, das_adjoint, das_apply_batched, das_forward, IndexTable, InterpMode,
};
pub use error::{Error, Result};
pub use geometry::{
    time_to_index, travel_time, ArrayGeometry, FmcData, Image, ImageGrid, MediumModel, Point2,
};
pub use params::ParamSet;
pub use tensor::Tensor;
