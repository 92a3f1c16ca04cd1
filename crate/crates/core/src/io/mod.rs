//! File formats, run configuration and image export.

pub mod archive;
pub mod config;
pub mod export;
pub mod store;
pub mod tensorfile;

pub use archive::{load_checkpoint, load_fmc, save_checkpoint, save_fmc, Archive};
pub use config::{Profile, RunConfig};
pub use export::{export_image, export_segmentation};
pub use store::{load_dataset, save_dataset, DatasetManifest, RunManifest};
pub use tensorfile::{DType, TensorData, TensorFile};
