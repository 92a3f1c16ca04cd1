//! The data-domain network, the image-domain network and the end-to-end
//! chain through the delay-and-sum layer.
//!
//! Pre-processing network (3D, on `[1, n_t, n_s, n_r]` data):
//!
//! ```text
//! h1 = relu(gn(conv(x,       ws(w1))))
//! h2 = relu(gn(conv(h1,      ws(w2))))
//! h3 = relu(gn(conv(h2 + h1, ws(w3))))
//! y  = tanh(conv(h3, w4) + x)
//! ```
//!
//! Post-processing network (2D, on the `[1, n_x, n_z]` image): the same
//! normalised stack without skips, ending in two raw logit channels.
//! Only the three normalised layers use weight standardisation; the output
//! layers keep free weights so the output scale can be learnt.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::das::IndexTable;
use crate::error::Result;
use crate::params::{Bound, ParamSet, PHI, THETA};
use crate::tensor::Tensor;

pub const LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetOptions {
    /// Hidden feature maps per layer.
    pub channels: usize,
    /// Group-norm groups; must divide `channels`.
    pub groups: usize,
    /// Kernel edge length (odd).
    pub kernel: usize,
    /// Weight standardisation and group norm on; off only in test rigs.
    pub normalize: bool,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self { channels: 4, groups: 2, kernel: 5, normalize: true }
    }
}

/// Output channels of the post-processing network (two classes).
pub const N_CLASSES: usize = 2;

fn layer_channels(opts: &NetOptions, out_last: usize) -> [(usize, usize); LAYERS] {
    let c = opts.channels;
    [(1, c), (c, c), (c, c), (c, out_last)]
}

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}conv{layer}.weight")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}conv{layer}.bias")
}

pub fn gain_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}norm{layer}.gain")
}

pub fn shift_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}norm{layer}.bias")
}

fn init_network(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    spatial: usize,
    opts: &NetOptions,
    out_last: usize,
) -> Result<()> {
    let k = opts.kernel;
    for (i, (c_in, c_out)) in layer_channels(opts, out_last).into_iter().enumerate() {
        let layer = i + 1;
        let mut dims = vec![c_out, c_in];
        dims.extend(std::iter::repeat_n(k, spatial));
        let fan_in = c_in * k.pow(spatial as u32);
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = dims.iter().product();
        let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        params.insert(weight_name(prefix, layer), Tensor::from_vec(&dims, w)?)?;
        params.insert(bias_name(prefix, layer), Tensor::zeros(&[c_out]))?;
        if layer < LAYERS {
            params.insert(gain_name(prefix, layer), Tensor::full(&[c_out], 1.0))?;
            params.insert(shift_name(prefix, layer), Tensor::zeros(&[c_out]))?;
        }
    }
    Ok(())
}

/// Fan-in scaled uniform initialisation of both networks.
pub fn init_params(seed: u64, opts: &NetOptions) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    init_network(&mut params, &mut rng, THETA, 3, opts, 1)?;
    init_network(&mut params, &mut rng, PHI, 2, opts, N_CLASSES)?;
    Ok(params)
}

fn conv(g: &mut Graph, spatial: usize, x: Var, w: Var, b: Var) -> Result<Var> {
    if spatial == 3 {
        g.conv3d(x, w, Some(b))
    } else {
        g.conv2d(x, w, Some(b))
    }
}

fn normalized_layer(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    layer: usize,
    spatial: usize,
    x: Var,
    opts: &NetOptions,
) -> Result<Var> {
    let mut w = p.var(&weight_name(prefix, layer))?;
    if opts.normalize {
        w = g.weight_standardize(w)?;
    }
    let mut h = conv(g, spatial, x, w, p.var(&bias_name(prefix, layer))?)?;
    if opts.normalize {
        h = g.group_norm(h, opts.groups, p.var(&gain_name(prefix, layer))?, p.var(&shift_name(prefix, layer))?)?;
    }
    g.relu(h)
}

/// Data-to-data network on `x[1, n_t, n_s, n_r]`.
pub fn pre_forward(g: &mut Graph, p: &Bound, x: Var, opts: &NetOptions) -> Result<Var> {
    let h1 = normalized_layer(g, p, THETA, 1, 3, x, opts)?;
    let h2 = normalized_layer(g, p, THETA, 2, 3, h1, opts)?;
    let skip = g.add(h2, h1)?;
    let h3 = normalized_layer(g, p, THETA, 3, 3, skip, opts)?;
    let w4 = p.var(&weight_name(THETA, 4))?;
    let out = conv(g, 3, h3, w4, p.var(&bias_name(THETA, 4))?)?;
    let residual = g.add(out, x)?;
    g.tanh(residual)
}

/// Image-to-logits network on `u[1, n_x, n_z]`.
pub fn post_forward(g: &mut Graph, p: &Bound, u: Var, opts: &NetOptions) -> Result<Var> {
    let h1 = normalized_layer(g, p, PHI, 1, 2, u, opts)?;
    let h2 = normalized_layer(g, p, PHI, 2, 2, h1, opts)?;
    let h3 = normalized_layer(g, p, PHI, 3, 2, h2, opts)?;
    let w4 = p.var(&weight_name(PHI, 4))?;
    conv(g, 2, h3, w4, p.var(&bias_name(PHI, 4))?)
}

/// Places an FMC volume on the graph as a one-channel data tensor.
pub fn data_input(g: &mut Graph, samples: &[f64], table: &IndexTable) -> Result<Var> {
    let t = Tensor::from_vec(&[1, table.n_t(), table.n_s(), table.n_r()], samples.to_vec())?;
    Ok(g.input(t))
}

/// Pre-processing, delay-and-sum and post-processing; returns the
/// intermediate image and the logits.
pub fn full_chain(
    g: &mut Graph,
    p: &Bound,
    x: Var,
    table: &Arc<IndexTable>,
    opts: &NetOptions,
) -> Result<(Var, Var)> {
    let d = pre_forward(g, p, x, opts)?;
    let u = g.das(d, Arc::clone(table))?;
    let logits = post_forward(g, p, u, opts)?;
    Ok((u, logits))
}
