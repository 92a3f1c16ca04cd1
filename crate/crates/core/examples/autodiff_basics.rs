//! Reverse-mode differentiation through a small graph with a DAS layer:
//! `loss = ||u - B tanh(w * x)||^2` for a scalar weight `w`, compared with
//! a central difference.
//!
//! cargo run --example autodiff_basics

use std::sync::Arc;

use dasnet::autodiff::Graph;
use dasnet::io::RunConfig;
use dasnet::nets::data_input;
use dasnet::pipeline::dataset::build_table;
use dasnet::pipeline::generate_sample;
use dasnet::Tensor;

fn loss_and_grad(w: f64, x: &[f64], target: &Tensor, table: &Arc<dasnet::IndexTable>) -> dasnet::Result<(f64, f64)> {
    let mut g = Graph::new();
    let xv = data_input(&mut g, x, table)?;
    // a 1x1x1 convolution is a scalar weight
    let wv = g.param(Tensor::from_vec(&[1, 1, 1, 1, 1], vec![w])?);
    let y = g.conv3d(xv, wv, None)?;
    let y = g.tanh(y)?;
    let u = g.das(y, Arc::clone(table))?;
    let t = g.input(target.clone());
    let loss = g.mse(t, u)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), grads.get(wv).unwrap().item()))
}

fn main() -> dasnet::Result<()> {
    let dc = RunConfig::desk().dataset_config()?;
    let table = Arc::new(build_table(&dc)?);
    let s = generate_sample(&dc, &table, 3)?;
    let target = Tensor::from_vec(&[1, dc.grid.n_x, dc.grid.n_z], s.u.pixels().to_vec())?;

    let w = 0.8;
    let (loss, grad) = loss_and_grad(w, s.f_eps.samples(), &target, &table)?;
    let h = 1e-6;
    let (lp, _) = loss_and_grad(w + h, s.f_eps.samples(), &target, &table)?;
    let (lm, _) = loss_and_grad(w - h, s.f_eps.samples(), &target, &table)?;
    let fd = (lp - lm) / (2.0 * h);
    println!("loss {loss:.6e}");
    println!("reverse mode  d loss / d w = {grad:.10e}");
    println!("central diff  d loss / d w = {fd:.10e}");
    println!("relative difference {:.2e}", (grad - fd).abs() / fd.abs().max(1e-300));
    Ok(())
}
