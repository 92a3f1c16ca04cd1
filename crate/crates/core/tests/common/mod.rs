#![allow(dead_code)]

pub mod das_naive;

use dasnet::io::RunConfig;
use dasnet::pipeline::{generate_dataset, Dataset, DatasetConfig, TrainConfig};

/// A run configuration small enough for a full training run in a test.
pub fn tiny_run_config() -> RunConfig {
    let mut rc = RunConfig::desk();
    rc.geometry.n_elements = 4;
    rc.grid.n_x = 8;
    rc.grid.n_z = 10;
    rc.grid.z0_m = 2e-3;
    rc.acquisition.n_t = 80;
    rc.phantom.defects_max = 1;
    rc.phantom.radius_min_m = 0.5e-3;
    rc.phantom.radius_max_m = 0.75e-3;
    rc.phantom.wall_start_row = 8;
    rc.phantom.wall_rows = 2;
    rc.dataset.n_train = 3;
    rc.dataset.n_test = 2;
    rc.training.epochs_pre = 2;
    rc.training.epochs_post = 2;
    rc.training.epochs_joint = 2;
    rc
}

pub fn tiny_dataset_config() -> DatasetConfig {
    tiny_run_config().dataset_config().unwrap()
}

pub fn tiny_dataset() -> Dataset {
    generate_dataset(&tiny_dataset_config()).unwrap()
}

pub fn tiny_train_config() -> TrainConfig {
    tiny_run_config().train_config()
}
