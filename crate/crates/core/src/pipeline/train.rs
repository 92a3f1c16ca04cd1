//! The three training strategies and test-set evaluation.
//!
//! | strategy | stage 1                                   | stage 2                       |
//! |----------|-------------------------------------------|-------------------------------|
//! | 1        | θ on `‖f − D_θ(f_ε)‖²`                    | φ on `H(c, I_φ(B D_θ̂(f_ε)))` |
//! | 2        | θ on `‖u − B D_θ(f_ε)‖²`, init from 1     | as strategy 1                 |
//! | 3        | θ and φ on `H(c, I_φ(B D_θ(f_ε)))`, init from 2 | —                       |
//!
//! Mini-batches hold one sample. Each stage starts a fresh Adam state and
//! visits the training set in a seed-derived shuffled order every epoch.
//! Stages that start from trained parameters use smaller learning rates:
//! `finetune_learning_rate` for strategy 2 stage 1 and `joint_learning_rate`
//! for strategy 3.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::das::IndexTable;
use crate::error::{Error, Result};
use crate::nets::{data_input, full_chain, post_forward, pre_forward, NetOptions};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{ParamGrads, ParamSet, PHI, THETA};
use crate::phantom::SegmentationMap;
use crate::pipeline::dataset::{derive_seed, TrainingSample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs of the θ-only stages.
    pub epochs_pre: usize,
    /// Epochs of the φ-only stages.
    pub epochs_post: usize,
    /// Epochs of the joint stage.
    pub epochs_joint: usize,
    /// Adam settings of the stages that start from random parameters.
    pub adam: AdamConfig,
    /// Learning rate of the strategy-2 θ stage, which starts from trained θ.
    pub finetune_learning_rate: f64,
    /// Learning rate of the joint stage. Larger steps knock the converged
    /// φ off its minimum in the first epoch.
    pub joint_learning_rate: f64,
    pub seed: u64,
    pub net: NetOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pre: 50,
            epochs_post: 50,
            epochs_joint: 50,
            adam: AdamConfig::default(),
            finetune_learning_rate: 1e-4,
            joint_learning_rate: 1e-5,
            seed: 0,
            net: NetOptions::default(),
        }
    }
}

impl TrainConfig {
    fn with_rate(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig { learning_rate, ..self.adam }
    }
}

/// Training objective of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `‖f − D_θ(f_ε)‖²`
    DataMse,
    /// `‖u − B D_θ(f_ε)‖²`
    ImageMse,
    /// `H(c, I_φ(B D_θ(f_ε)))`
    Segmentation,
}

/// Which parameter groups a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    Theta,
    Phi,
    Both,
}

impl Trainable {
    pub fn accepts(self, name: &str) -> bool {
        match self {
            Trainable::Theta => name.starts_with(THETA),
            Trainable::Phi => name.starts_with(PHI),
            Trainable::Both => name.starts_with(THETA) || name.starts_with(PHI),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub objective: Objective,
    pub trainable: Trainable,
    /// Mean per-sample loss before any update.
    pub initial_loss: f64,
    /// Running mean of the per-step losses within each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-sample loss after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: u8,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    /// Mean test cross entropy of the initial parameters.
    pub initial_test_ce: f64,
    /// Mean test cross entropy of the trained parameters.
    pub final_test_ce: f64,
    /// Hex digest of the trained parameters.
    pub params_digest: String,
    pub checkpoint: Option<String>,
    /// Excluded from serialisation so reports of identical runs are identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Per-sample training input of a stage.
enum StageInput<'a> {
    Full(&'a TrainingSample),
    /// φ-only stage on a precomputed intermediate image.
    Image { image: Tensor, target: Arc<SegmentationMap> },
}

/// Loss and trainable-parameter gradients of one sample.
pub fn loss_and_grads(
    params: &ParamSet,
    sample: &TrainingSample,
    table: &Arc<IndexTable>,
    objective: Objective,
    trainable: Trainable,
    opts: &NetOptions,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::checked();
    let bound = params.bind(&mut g, |n| trainable.accepts(n));
    let x = data_input(&mut g, sample.f_eps.samples(), table)?;
    let loss = match objective {
        Objective::DataMse => {
            let d = pre_forward(&mut g, &bound, x, opts)?;
            let target = data_input(&mut g, sample.f.samples(), table)?;
            g.mse(target, d)?
        }
        Objective::ImageMse => {
            let d = pre_forward(&mut g, &bound, x, opts)?;
            let bd = g.das(d, Arc::clone(table))?;
            let grid = table.grid();
            let u = g.input(Tensor::from_vec(&[1, grid.n_x, grid.n_z], sample.u.pixels().to_vec())?);
            g.mse(u, bd)?
        }
        Objective::Segmentation => {
            let (_, logits) = full_chain(&mut g, &bound, x, table, opts)?;
            g.cross_entropy(logits, Arc::clone(&sample.c))?
        }
    };
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), bound.gradients(&g, &grads)))
}

fn image_loss_and_grads(
    params: &ParamSet,
    image: &Tensor,
    target: &Arc<SegmentationMap>,
    opts: &NetOptions,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::checked();
    let bound = params.bind(&mut g, |n| n.starts_with(PHI));
    let u = g.input(image.clone());
    let logits = post_forward(&mut g, &bound, u, opts)?;
    let loss = g.cross_entropy(logits, Arc::clone(target))?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), bound.gradients(&g, &grads)))
}

/// Intermediate image `B D_θ(f_ε)` as a `[1, n_x, n_z]` tensor.
pub fn intermediate_image(
    params: &ParamSet,
    f_eps: &[f64],
    table: &Arc<IndexTable>,
    opts: &NetOptions,
) -> Result<Tensor> {
    let mut g = Graph::checked();
    let bound = params.bind(&mut g, |_| false);
    let x = data_input(&mut g, f_eps, table)?;
    let d = pre_forward(&mut g, &bound, x, opts)?;
    let u = g.das(d, Arc::clone(table))?;
    Ok(g.value(u).clone())
}

/// Logits `I_φ(B D_θ(f_ε))`, shape `[2, n_x, n_z]`.
pub fn forward_full(
    f_eps: &[f64],
    params: &ParamSet,
    table: &Arc<IndexTable>,
    opts: &NetOptions,
) -> Result<Tensor> {
    let mut g = Graph::checked();
    let bound = params.bind(&mut g, |_| false);
    let x = data_input(&mut g, f_eps, table)?;
    let (_, logits) = full_chain(&mut g, &bound, x, table, opts)?;
    Ok(g.value(logits).clone())
}

fn stage_loss(
    params: &ParamSet,
    input: &StageInput<'_>,
    table: &Arc<IndexTable>,
    objective: Objective,
    trainable: Trainable,
    opts: &NetOptions,
) -> Result<(f64, ParamGrads)> {
    match input {
        StageInput::Full(s) => loss_and_grads(params, s, table, objective, trainable, opts),
        StageInput::Image { image, target } => image_loss_and_grads(params, image, target, opts),
    }
}

fn mean_loss(
    params: &ParamSet,
    inputs: &[StageInput<'_>],
    table: &Arc<IndexTable>,
    objective: Objective,
    opts: &NetOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for input in inputs {
        let v = match input {
            StageInput::Full(s) => sample_loss(params, s, table, objective, opts)?,
            StageInput::Image { image, target } => {
                let mut g = Graph::checked();
                let bound = params.bind(&mut g, |_| false);
                let u = g.input(image.clone());
                let logits = post_forward(&mut g, &bound, u, opts)?;
                let loss = g.cross_entropy(logits, Arc::clone(target))?;
                g.value(loss).item()
            }
        };
        total += v;
    }
    Ok(total / inputs.len() as f64)
}

/// Objective value of one sample without gradients.
pub fn sample_loss(
    params: &ParamSet,
    sample: &TrainingSample,
    table: &Arc<IndexTable>,
    objective: Objective,
    opts: &NetOptions,
) -> Result<f64> {
    let mut g = Graph::checked();
    let bound = params.bind(&mut g, |_| false);
    let x = data_input(&mut g, sample.f_eps.samples(), table)?;
    let loss = match objective {
        Objective::DataMse => {
            let d = pre_forward(&mut g, &bound, x, opts)?;
            let target = data_input(&mut g, sample.f.samples(), table)?;
            g.mse(target, d)?
        }
        Objective::ImageMse => {
            let d = pre_forward(&mut g, &bound, x, opts)?;
            let bd = g.das(d, Arc::clone(table))?;
            let grid = table.grid();
            let u = g.input(Tensor::from_vec(&[1, grid.n_x, grid.n_z], sample.u.pixels().to_vec())?);
            g.mse(u, bd)?
        }
        Objective::Segmentation => {
            let (_, logits) = full_chain(&mut g, &bound, x, table, opts)?;
            g.cross_entropy(logits, Arc::clone(&sample.c))?
        }
    };
    Ok(g.value(loss).item())
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    name: &str,
    params: &mut ParamSet,
    inputs: &[StageInput<'_>],
    table: &Arc<IndexTable>,
    objective: Objective,
    trainable: Trainable,
    epochs: usize,
    adam: AdamConfig,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<StageReport> {
    let initial_loss = mean_loss(params, inputs, table, objective, &cfg.net)?;
    let mut state = AdamState::new(adam);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream * 1_000_003 + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = stage_loss(params, &inputs[i], table, objective, trainable, &cfg.net)?;
            adam_step(params, &grads, &mut state)?;
            total += loss;
        }
        let mean = total / inputs.len() as f64;
        log::info!("{name} epoch {}/{epochs}: mean loss {mean:.6e}", epoch + 1);
        epoch_losses.push(mean);
    }
    let final_loss = mean_loss(params, inputs, table, objective, &cfg.net)?;
    Ok(StageReport {
        name: name.to_string(),
        objective,
        trainable,
        initial_loss,
        epoch_losses,
        final_loss,
    })
}

/// Segmentation results on a held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_ce: f64,
    pub per_sample_ce: Vec<f64>,
    pub predictions: Vec<SegmentationMap>,
}

/// Class map from two-channel logits; ties go to class 0.
pub fn predict(logits: &Tensor) -> Result<SegmentationMap> {
    let d = logits.dims();
    if d.len() != 3 || d[0] != 2 {
        return Err(Error::Shape(format!("expected [2, n_x, n_z] logits, got {d:?}")));
    }
    let n = d[1] * d[2];
    let data = logits.data();
    let classes = (0..n).map(|p| u8::from(data[n + p] > data[p])).collect();
    SegmentationMap::from_vec(d[1], d[2], classes)
}

/// Mean cross entropy and predictions for precomputed logits.
pub fn evaluate_logits(logits: &[Tensor], targets: &[Arc<SegmentationMap>]) -> Result<Evaluation> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} logit tensors for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut per_sample_ce = Vec::with_capacity(logits.len());
    let mut predictions = Vec::with_capacity(logits.len());
    for (l, c) in logits.iter().zip(targets) {
        let mut g = Graph::new();
        let v = g.input(l.clone());
        let loss = g.cross_entropy(v, Arc::clone(c))?;
        per_sample_ce.push(g.value(loss).item());
        predictions.push(predict(l)?);
    }
    let mean_ce = per_sample_ce.iter().sum::<f64>() / per_sample_ce.len() as f64;
    Ok(Evaluation { mean_ce, per_sample_ce, predictions })
}

/// Mean test cross entropy of the end-to-end chain.
pub fn evaluate(
    params: &ParamSet,
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    opts: &NetOptions,
) -> Result<Evaluation> {
    let logits = test
        .iter()
        .map(|s| forward_full(s.f_eps.samples(), params, table, opts))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<_> = test.iter().map(|s| Arc::clone(&s.c)).collect();
    evaluate_logits(&logits, &targets)
}

fn require_samples(train: &[TrainingSample], test: &[TrainingSample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn post_stage(
    params: &mut ParamSet,
    train: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<StageReport> {
    let images = train
        .iter()
        .map(|s| {
            Ok(StageInput::Image {
                image: intermediate_image(params, s.f_eps.samples(), table, &cfg.net)?,
                target: Arc::clone(&s.c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_stage(
        "post-processing",
        params,
        &images,
        table,
        Objective::Segmentation,
        Trainable::Phi,
        cfg.epochs_post,
        cfg.adam,
        cfg,
        stream,
    )
}

fn finish(
    strategy: u8,
    params: ParamSet,
    stages: Vec<StageReport>,
    initial_test_ce: f64,
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
    started: Instant,
) -> Result<(ParamSet, StrategyReport)> {
    let final_test_ce = evaluate(&params, test, table, &cfg.net)?.mean_ce;
    let report = StrategyReport {
        strategy,
        seed: cfg.seed,
        stages,
        initial_test_ce,
        final_test_ce,
        params_digest: hex(&params.digest()),
        checkpoint: None,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

/// Sequential training with a data-domain loss for θ, then φ on the frozen
/// pre-processing output.
pub fn train_strategy1(
    init: &ParamSet,
    train: &[TrainingSample],
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
) -> Result<(ParamSet, StrategyReport)> {
    require_samples(train, test)?;
    let started = Instant::now();
    let mut params = init.clone();
    let initial_test_ce = evaluate(&params, test, table, &cfg.net)?.mean_ce;
    let inputs: Vec<_> = train.iter().map(StageInput::Full).collect();
    let s1 = run_stage(
        "pre-processing (data loss)",
        &mut params,
        &inputs,
        table,
        Objective::DataMse,
        Trainable::Theta,
        cfg.epochs_pre,
        cfg.adam,
        cfg,
        11,
    )?;
    let s2 = post_stage(&mut params, train, table, cfg, 12)?;
    finish(1, params, vec![s1, s2], initial_test_ce, test, table, cfg, started)
}

/// Sequential training with an image-domain loss for θ through the DAS
/// layer, then φ; starts from strategy-1 parameters.
pub fn train_strategy2(
    init_from_strategy1: &ParamSet,
    train: &[TrainingSample],
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
) -> Result<(ParamSet, StrategyReport)> {
    require_samples(train, test)?;
    let started = Instant::now();
    let mut params = init_from_strategy1.clone();
    let initial_test_ce = evaluate(&params, test, table, &cfg.net)?.mean_ce;
    let inputs: Vec<_> = train.iter().map(StageInput::Full).collect();
    let s1 = run_stage(
        "pre-processing (image loss)",
        &mut params,
        &inputs,
        table,
        Objective::ImageMse,
        Trainable::Theta,
        cfg.epochs_pre,
        cfg.with_rate(cfg.finetune_learning_rate),
        cfg,
        21,
    )?;
    let s2 = post_stage(&mut params, train, table, cfg, 22)?;
    finish(2, params, vec![s1, s2], initial_test_ce, test, table, cfg, started)
}

/// End-to-end training of θ and φ on the segmentation loss; starts from
/// strategy-2 parameters.
pub fn train_strategy3(
    init_from_strategy2: &ParamSet,
    train: &[TrainingSample],
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
) -> Result<(ParamSet, StrategyReport)> {
    require_samples(train, test)?;
    let started = Instant::now();
    let mut params = init_from_strategy2.clone();
    let initial_test_ce = evaluate(&params, test, table, &cfg.net)?.mean_ce;
    let inputs: Vec<_> = train.iter().map(StageInput::Full).collect();
    let s1 = run_stage(
        "end-to-end",
        &mut params,
        &inputs,
        table,
        Objective::Segmentation,
        Trainable::Both,
        cfg.epochs_joint,
        cfg.with_rate(cfg.joint_learning_rate),
        cfg,
        31,
    )?;
    finish(3, params, vec![s1], initial_test_ce, test, table, cfg, started)
}

/// Result of running all three strategies in sequence.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub params: [ParamSet; 3],
    pub reports: [StrategyReport; 3],
}

/// Strategies 1, 2 and 3 chained through their initialisations.
pub fn run_all_strategies(
    init: &ParamSet,
    train: &[TrainingSample],
    test: &[TrainingSample],
    table: &Arc<IndexTable>,
    cfg: &TrainConfig,
) -> Result<Comparison> {
    let (p1, r1) = train_strategy1(init, train, test, table, cfg)?;
    let (p2, r2) = train_strategy2(&p1, train, test, table, cfg)?;
    let (p3, r3) = train_strategy3(&p2, train, test, table, cfg)?;
    Ok(Comparison { params: [p1, p2, p3], reports: [r1, r2, r3] })
}
