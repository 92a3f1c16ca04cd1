//! Numerical self-checks: dot-product adjoint tests for the DAS operator
//! and central finite-difference checks for every differentiable op.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::das::{build_index_table, das_adjoint, das_forward, IndexTable, InterpMode};
use crate::error::Result;
use crate::geometry::{ArrayGeometry, FmcData, Image, ImageGrid, MediumModel, Point2};
use crate::nets::{full_chain, init_params, pre_forward, NetOptions};
use crate::params::Bound;
use crate::phantom::SegmentationMap;
use crate::tensor::Tensor;

/// Acceptance bound of the relative dot-test error.
pub const DOT_TEST_TOL: f64 = 1e-10;
/// Acceptance bound of the per-tensor relative gradient error.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotTest {
    /// `<B f, u>`
    pub image_side: f64,
    /// `<f, B^T u>`
    pub data_side: f64,
    /// `|image_side - data_side| / (|B f| |u|)`
    pub rel_error: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dot_test(table: &IndexTable, f: &FmcData, u: &Image) -> Result<DotTest> {
    let bf = das_forward(f, table)?;
    let btu = das_adjoint(u, table)?;
    let image_side = dot(bf.pixels(), u.pixels());
    let data_side = dot(f.samples(), btu.samples());
    let scale = norm(bf.pixels()) * norm(u.pixels());
    let diff = (image_side - data_side).abs();
    let rel_error = if scale > 0.0 { diff / scale } else { diff };
    Ok(DotTest { image_side, data_side, rel_error })
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random small acquisition: `n_e` irregularly spaced elements, an
/// `n_x × n_z` grid and a sampling rate at which part of the grid falls
/// outside the `n_t`-sample record.
pub fn random_table(
    rng: &mut ChaCha8Rng,
    n_t: usize,
    n_e: usize,
    n_x: usize,
    n_z: usize,
    mode: InterpMode,
) -> Result<IndexTable> {
    let mut x = -1e-3 * n_e as f64 / 2.0;
    let positions = (0..n_e)
        .map(|_| {
            x += rng.random_range(0.5e-3..1.5e-3);
            Point2::new(x, 0.0)
        })
        .collect();
    let geom = ArrayGeometry::new(positions)?;
    let dx = rng.random_range(0.3e-3..1.0e-3);
    let dz = rng.random_range(0.3e-3..1.0e-3);
    let z0 = rng.random_range(1e-3..4e-3);
    let grid = ImageGrid::centered(n_x, n_z, dx, dz, z0)?;
    let medium = MediumModel::new(rng.random_range(1500.0..6000.0))?;
    // longest two-way path of the grid, mapped to 0.7..1.3 of the record
    let far = Point2::new(grid.origin.x, z0 + (n_z - 1) as f64 * dz);
    let span = 2.0 * geom.positions().iter().map(|p| p.distance(far)).fold(0.0, f64::max)
        / medium.speed();
    let fs = rng.random_range(0.7..1.3) * (n_t as f64 - 1.0) / span;
    build_index_table(&geom, &grid, &medium, fs, n_t, mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

impl AdjointReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= DOT_TEST_TOL
    }
}

/// Dot tests on `trials` random 8×4×4 → 6×6 instances; odd trials use
/// linear interpolation.
pub fn adjoint_test(trials: usize, seed: u64) -> Result<AdjointReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel_errors = Vec::with_capacity(trials);
    for k in 0..trials {
        let mode = if k % 2 == 0 { InterpMode::Nearest } else { InterpMode::Linear };
        let table = random_table(&mut rng, 8, 4, 6, 6, mode)?;
        let f = FmcData::from_samples(
            8,
            4,
            table.sampling_frequency(),
            (0..4).collect(),
            normal_vec(&mut rng, 8 * 4 * 4),
        )?;
        let u = Image::from_vec(*table.grid(), normal_vec(&mut rng, 36))?;
        rel_errors.push(dot_test(&table, &f, &u)?.rel_error);
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(AdjointReport { rel_errors, max_rel_error })
}

/// Outcome of a finite-difference check of one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` over the checked coordinates.
    pub rel_error: f64,
    pub coordinates: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error <= GRADCHECK_TOL
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` with
/// central differences, step `1e-6 · max(1, |x|)`. Tensors with more than
/// `max_coords` entries are checked on a seeded random subset. Inputs past
/// the end of `names` are labelled `target`.
pub fn check_gradients<F>(
    label: &str,
    names: &[String],
    inputs: &[Tensor],
    max_coords: usize,
    seed: u64,
    build: F,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut results = Vec::with_capacity(inputs.len());
    for (k, v) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].dims()));
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, max_coords).into_vec()
        };
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for &j in &coords {
            let x = inputs[k].data()[j];
            let h = 1e-6 * x.abs().max(1.0);
            work[k].data_mut()[j] = x + h;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x - h;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.max(n2).sqrt();
        let diff = diff2.sqrt();
        let rel_error = if scale > 0.0 { diff / scale } else { diff };
        results.push(GradCheck {
            name: format!("{label}/{}", names.get(k).map_or("target", String::as_str)),
            rel_error,
            coordinates: coords.len(),
        });
    }
    Ok(results)
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, normal_vec(rng, n).into_iter().map(|v| v * scale).collect()).unwrap()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn random_map(rng: &mut ChaCha8Rng, n_x: usize, n_z: usize) -> Arc<SegmentationMap> {
    let c = (0..n_x * n_z).map(|_| rng.random_range(0..2u8)).collect();
    Arc::new(SegmentationMap::from_vec(n_x, n_z, c).unwrap())
}

/// Checks of each op in isolation, each followed by an MSE against a random
/// target so that every output element carries a distinct weight.
pub fn gradcheck_ops(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let all = usize::MAX;

    let x = rand_tensor(&mut rng, &[2, 5, 4, 3], 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 5, 5, 5], 0.2);
    let b = rand_tensor(&mut rng, &[3], 0.5);
    let t = rand_tensor(&mut rng, &[3, 5, 4, 3], 1.0);
    out.extend(check_gradients("conv3d", &names(&["x", "w", "b"]), &[x, w, b, t], all, seed, |g, v| {
        let y = g.conv3d(v[0], v[1], Some(v[2]))?;
        g.mse(y, v[3])
    })?);

    let x = rand_tensor(&mut rng, &[2, 6, 5], 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 5, 5], 0.3);
    let b = rand_tensor(&mut rng, &[3], 0.5);
    let t = rand_tensor(&mut rng, &[3, 6, 5], 1.0);
    out.extend(check_gradients("conv2d", &names(&["x", "w", "b"]), &[x, w, b, t], all, seed, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]))?;
        g.mse(y, v[3])
    })?);

    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
    let t = rand_tensor(&mut rng, &[3, 2, 3, 3], 1.0);
    out.extend(check_gradients("weight_standardize", &names(&["w", "target"]), &[w, t], all, seed, |g, v| {
        let y = g.weight_standardize(v[0])?;
        g.mse(y, v[1])
    })?);

    let x = rand_tensor(&mut rng, &[4, 3, 5], 2.0);
    let gain = rand_tensor(&mut rng, &[4], 1.0);
    let shift = rand_tensor(&mut rng, &[4], 1.0);
    let t = rand_tensor(&mut rng, &[4, 3, 5], 1.0);
    out.extend(check_gradients(
        "group_norm",
        &names(&["x", "gain", "bias", "target"]),
        &[x, gain, shift, t],
        all,
        seed,
        |g, v| {
            let y = g.group_norm(v[0], 2, v[1], v[2])?;
            g.mse(y, v[3])
        },
    )?);

    let x = rand_tensor(&mut rng, &[3, 4], 1.0);
    let t = rand_tensor(&mut rng, &[3, 4], 1.0);
    out.extend(check_gradients("relu", &names(&["x", "target"]), &[x.clone(), t.clone()], all, seed, |g, v| {
        let y = g.relu(v[0])?;
        g.mse(y, v[1])
    })?);
    out.extend(check_gradients("tanh", &names(&["x", "target"]), &[x.clone(), t.clone()], all, seed, |g, v| {
        let y = g.tanh(v[0])?;
        g.mse(y, v[1])
    })?);
    let y = rand_tensor(&mut rng, &[3, 4], 1.0);
    out.extend(check_gradients("add_skip", &names(&["x", "y", "target"]), &[x, y, t], all, seed, |g, v| {
        let s = g.add(v[0], v[1])?;
        let r = g.tanh(s)?;
        let s2 = g.add(r, v[0])?;
        g.mse(s2, v[2])
    })?);

    let logits = rand_tensor(&mut rng, &[2, 3, 3], 2.0);
    let c = random_map(&mut rng, 3, 3);
    out.extend(check_gradients("cross_entropy", &names(&["logits"]), &[logits], all, seed, move |g, v| {
        g.cross_entropy(v[0], Arc::clone(&c))
    })?);

    let a = rand_tensor(&mut rng, &[2, 3, 4], 1.0);
    let b = rand_tensor(&mut rng, &[2, 3, 4], 1.0);
    out.extend(check_gradients("mse", &names(&["a", "b"]), &[a, b], all, seed, |g, v| g.mse(v[0], v[1]))?);

    for mode in [InterpMode::Nearest, InterpMode::Linear] {
        let table = Arc::new(random_table(&mut rng, 8, 4, 6, 6, mode)?);
        let x = rand_tensor(&mut rng, &[1, 8, 4, 4], 1.0);
        let t = rand_tensor(&mut rng, &[1, 6, 6], 1.0);
        let label = match mode {
            InterpMode::Nearest => "das_nearest",
            InterpMode::Linear => "das_linear",
        };
        out.extend(check_gradients(label, &names(&["data", "target"]), &[x, t], all, seed, move |g, v| {
            let u = g.das(v[0], Arc::clone(&table))?;
            g.mse(u, v[1])
        })?);
    }
    Ok(out)
}

/// Pre-network, DAS layer, post-network and cross entropy on 16×4×4 data
/// and a 6×6 grid; every parameter tensor and the data sample are checked
/// on up to `max_coords` coordinates each. A second check covers the
/// image-domain objective of the pre-network through the DAS layer.
pub fn gradcheck_chain(seed: u64, max_coords: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = NetOptions::default();
    let params = init_params(seed, &opts)?;
    let table = Arc::new(random_table(&mut rng, 16, 4, 6, 6, InterpMode::Nearest)?);
    let x = rand_tensor(&mut rng, &[1, 16, 4, 4], 0.3);
    let c = random_map(&mut rng, 6, 6);

    let mut labels: Vec<String> = params.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    labels.push("data".into());
    inputs.push(x);
    let n_params = params.len();

    let keys = labels.clone();
    let tbl = Arc::clone(&table);
    let mut out = check_gradients("chain", &labels, &inputs, max_coords, seed, move |g, v| {
        let bound: Bound = keys[..n_params].iter().cloned().zip(v[..n_params].iter().copied()).collect();
        let (_, logits) = full_chain(g, &bound, v[n_params], &tbl, &opts)?;
        g.cross_entropy(logits, Arc::clone(&c))
    })?;

    let theta = params.subset(crate::params::THETA);
    let mut labels: Vec<String> = theta.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor> = theta.iter().map(|(_, t)| t.clone()).collect();
    labels.push("target".into());
    inputs.push(rand_tensor(&mut rng, &[1, 6, 6], 1.0));
    let x = rand_tensor(&mut rng, &[1, 16, 4, 4], 0.3);
    let n_theta = theta.len();
    let keys = labels.clone();
    out.extend(check_gradients("image_loss", &labels, &inputs, max_coords, seed, move |g, v| {
        let bound: Bound = keys[..n_theta].iter().cloned().zip(v[..n_theta].iter().copied()).collect();
        let xv = g.input(x.clone());
        let d = pre_forward(g, &bound, xv, &opts)?;
        let u = g.das(d, Arc::clone(&table))?;
        g.mse(u, v[n_theta])
    })?);
    Ok(out)
}

/// Every op check plus the full-chain check.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = gradcheck_ops(seed)?;
    out.extend(gradcheck_chain(seed, 24)?);
    Ok(out)
}
