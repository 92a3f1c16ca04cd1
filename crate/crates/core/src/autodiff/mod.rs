//! Tape-based reverse-mode differentiation for the small operator set the
//! imaging networks need.
//!
//! Every operation appends a node holding its value and whatever context its
//! backward rule needs. [`Graph::backward`] walks the tape once in reverse
//! recording order and sums gradient contributions, so fan-out is handled by
//! accumulation.

mod conv;
mod ops;

use std::sync::Arc;

use crate::das::IndexTable;
use crate::error::{Error, Result};
use crate::phantom::SegmentationMap;
use crate::tensor::Tensor;

pub(crate) use conv::ConvShape;

/// Normalisation epsilon for weight standardisation and group norm.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, shape: ConvShape },
    WeightStd { w: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    GroupNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu { x: Var },
    Tanh { x: Var },
    Add { a: Var, b: Var },
    Das { x: Var, table: Arc<IndexTable> },
    CrossEntropy { logits: Var, target: Arc<SegmentationMap>, probs: Vec<f64> },
    Mse { a: Var, b: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv",
            Op::WeightStd { .. } => "weight_standardize",
            Op::GroupNorm { .. } => "group_norm",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Add { .. } => "add",
            Op::Das { .. } => "das",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One graph is built per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that fails with [`Error::NonFinite`] as soon as any operation
    /// produces NaN or infinity.
    pub fn checked() -> Self {
        Self { nodes: Vec::new(), checked: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 3D same-padded cross-correlation: `x[c_in, a, b, c]`,
    /// `w[c_out, c_in, ka, kb, kc]`, optional bias `[c_out]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.value(x).dims(), self.value(w).dims());
        if xd.len() != 4 || wd.len() != 5 {
            return Err(Error::Shape(format!("conv3d expects 4D input and 5D kernel, got {xd:?} and {wd:?}")));
        }
        let shape = ConvShape {
            c_in: xd[0],
            c_out: wd[0],
            size: [xd[1], xd[2], xd[3]],
            kernel: [wd[2], wd[3], wd[4]],
        };
        self.conv(x, w, b, shape, wd[1])
    }

    /// 2D same-padded cross-correlation: `x[c_in, h, w]`, `w[c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.value(x).dims(), self.value(w).dims());
        if xd.len() != 3 || wd.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects 3D input and 4D kernel, got {xd:?} and {wd:?}")));
        }
        let shape = ConvShape {
            c_in: xd[0],
            c_out: wd[0],
            size: [1, xd[1], xd[2]],
            kernel: [1, wd[2], wd[3]],
        };
        self.conv(x, w, b, shape, wd[1])
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, shape: ConvShape, w_cin: usize) -> Result<Var> {
        if w_cin != shape.c_in {
            return Err(Error::Shape(format!(
                "kernel expects {w_cin} input channels, input has {}",
                shape.c_in
            )));
        }
        if shape.kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::Shape(format!("same padding needs odd kernels, got {:?}", shape.kernel)));
        }
        if let Some(b) = b {
            if self.value(b).len() != shape.c_out {
                return Err(Error::Shape(format!(
                    "bias has {} entries for {} output channels",
                    self.value(b).len(),
                    shape.c_out
                )));
            }
        }
        let mut out_dims = self.value(x).dims().to_vec();
        out_dims[0] = shape.c_out;
        let mut y = Tensor::zeros(&out_dims);
        conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &shape,
            y.data_mut(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(y, Op::Conv { x, w, b, shape }, &inputs)
    }

    /// Per output filter: subtract the mean and divide by
    /// `sqrt(var + NORM_EPS)` over all remaining kernel axes.
    pub fn weight_standardize(&mut self, w: Var) -> Result<Var> {
        let wt = self.value(w);
        if wt.dims().len() < 2 {
            return Err(Error::Shape(format!("weight standardisation needs a filter axis, got {:?}", wt.dims())));
        }
        let filters = wt.dims()[0];
        let (xhat, inv_std) = ops::standardize_rows(wt.data(), filters);
        let y = Tensor::from_vec(wt.dims(), xhat.clone())?;
        self.push(y, Op::WeightStd { w, xhat, inv_std }, &[w])
    }

    /// Normalises each of `groups` channel groups over its channels and all
    /// spatial positions, then applies per-channel `gain` and `bias`.
    pub fn group_norm(&mut self, x: Var, groups: usize, gain: Var, bias: Var) -> Result<Var> {
        let xt = self.value(x);
        let channels = xt.dims()[0];
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Shape(format!("{channels} channels cannot form {groups} groups")));
        }
        if self.value(gain).len() != channels || self.value(bias).len() != channels {
            return Err(Error::Shape(format!("group norm affine parameters must have {channels} entries")));
        }
        let (xhat, inv_std) = ops::standardize_rows(xt.data(), groups);
        let per_channel = xt.len() / channels;
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / per_channel;
                g[c] * v + b[c]
            })
            .collect();
        let y = Tensor::from_vec(xt.dims(), data)?;
        self.push(y, Op::GroupNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        // NaN passes through so checked mode can see it
        let y = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(y, Op::Relu { x }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh { x }, &[x])
    }

    /// Elementwise sum of equal-shape tensors (skip connection).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.dims() != bt.dims() {
            return Err(Error::Shape(format!("cannot add {:?} and {:?}", at.dims(), bt.dims())));
        }
        let mut y = at.clone();
        y.axpy(1.0, bt);
        self.push(y, Op::Add { a, b }, &[a, b])
    }

    /// Delay-and-sum layer: data `[1, n_t, n_s, n_r]` (or without the channel
    /// axis) to image `[1, n_x, n_z]`. Its backward pass is the adjoint.
    pub fn das(&mut self, x: Var, table: Arc<IndexTable>) -> Result<Var> {
        let xt = self.value(x);
        if xt.len() != table.data_len() {
            return Err(Error::Shape(format!(
                "data tensor {:?} does not match index table volume {}x{}x{}",
                xt.dims(),
                table.n_t(),
                table.n_s(),
                table.n_r()
            )));
        }
        let grid = table.grid();
        let mut y = Tensor::zeros(&[1, grid.n_x, grid.n_z]);
        table.forward_into(xt.data(), y.data_mut());
        self.push(y, Op::Das { x, table }, &[x])
    }

    /// Pixel-mean of `-log softmax(logits)[target]`, logits `[K, n_x, n_z]`.
    pub fn cross_entropy(&mut self, logits: Var, target: Arc<SegmentationMap>) -> Result<Var> {
        let lt = self.value(logits);
        let d = lt.dims();
        if d.len() != 3 || d[1] != target.n_x() || d[2] != target.n_z() {
            return Err(Error::Shape(format!(
                "logits {d:?} do not match a {}x{} target",
                target.n_x(),
                target.n_z()
            )));
        }
        let k = d[0];
        if let Some(&bad) = target.classes().iter().find(|&&c| c as usize >= k) {
            return Err(Error::Data(format!("target class {bad} outside 0..{k}")));
        }
        let (loss, probs) = ops::softmax_cross_entropy(lt.data(), k, target.classes());
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, &[logits])
    }

    /// Sum of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.len() != bt.len() {
            return Err(Error::Shape(format!("mse of {:?} and {:?}", at.dims(), bt.dims())));
        }
        let loss = at.data().iter().zip(bt.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(loss), Op::Mse { a, b }, &[a, b])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop(node, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, shape } => {
                if self.requires_grad(*x) {
                    let mut gx = Tensor::zeros(self.value(*x).dims());
                    conv::backward_input(gy.data(), self.value(*w).data(), shape, gx.data_mut());
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*w) {
                    let mut gw = Tensor::zeros(self.value(*w).dims());
                    conv::backward_weight(gy.data(), self.value(*x).data(), shape, gw.data_mut());
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut gb = Tensor::zeros(self.value(*b).dims());
                        conv::backward_bias(gy.data(), shape, gb.data_mut());
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::WeightStd { w, xhat, inv_std } => {
                let gw = ops::standardize_rows_backward(gy.data(), xhat, inv_std);
                self.accumulate(grads, *w, Tensor::from_vec(gy.dims(), gw)?);
            }
            Op::GroupNorm { x, gain, bias, xhat, inv_std, .. } => {
                let channels = gy.dims()[0];
                let per_channel = gy.len() / channels;
                let g = self.value(*gain).data();
                let mut ggain = vec![0.0; channels];
                let mut gbias = vec![0.0; channels];
                let mut gxhat = vec![0.0; gy.len()];
                for c in 0..channels {
                    let range = c * per_channel..(c + 1) * per_channel;
                    for j in range {
                        ggain[c] += gy.data()[j] * xhat[j];
                        gbias[c] += gy.data()[j];
                        gxhat[j] = gy.data()[j] * g[c];
                    }
                }
                if self.requires_grad(*x) {
                    let gx = ops::standardize_rows_backward(&gxhat, xhat, inv_std);
                    self.accumulate(grads, *x, Tensor::from_vec(gy.dims(), gx)?);
                }
                self.accumulate(grads, *gain, Tensor::from_vec(self.value(*gain).dims(), ggain)?);
                self.accumulate(grads, *bias, Tensor::from_vec(self.value(*bias).dims(), gbias)?);
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let data = gy.data().iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, Tensor::from_vec(gy.dims(), data)?);
            }
            Op::Tanh { x } => {
                let data = gy
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(gy.dims(), data)?);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Das { x, table } => {
                let mut gx = Tensor::zeros(self.value(*x).dims());
                table.adjoint_into(gy.data(), gx.data_mut());
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy { logits, target, probs } => {
                let scale = gy.item();
                let gl = ops::softmax_cross_entropy_backward(probs, self.value(*logits).dims()[0], target.classes(), scale);
                self.accumulate(grads, *logits, Tensor::from_vec(self.value(*logits).dims(), gl)?);
            }
            Op::Mse { a, b } => {
                let scale = gy.item();
                let (av, bv) = (self.value(*a), self.value(*b));
                let diff: Vec<f64> =
                    av.data().iter().zip(bv.data()).map(|(x, y)| 2.0 * scale * (x - y)).collect();
                if self.requires_grad(*b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(bv.dims(), neg)?);
                }
                self.accumulate(grads, *a, Tensor::from_vec(av.dims(), diff)?);
            }
        }
        Ok(())
    }
}
