//! Training collections, the three training strategies and evaluation.

pub mod dataset;
pub mod train;

pub use dataset::{derive_seed, generate_dataset, generate_sample, Dataset, DatasetConfig, TrainingSample};
pub use train::{
    evaluate, evaluate_logits, forward_full, predict, run_all_strategies, train_strategy1,
    train_strategy2, train_strategy3, Comparison, Evaluation, Objective, StageReport,
    StrategyReport, TrainConfig, Trainable,
};
