//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first_moment: BTreeMap::new(), second_moment: BTreeMap::new() }
    }
}

/// One Adam update of every parameter named in `grads`; other parameters
/// are left untouched.
pub fn adam_step(params: &mut ParamSet, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if p.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match parameter {name} {:?}",
                g.dims(),
                p.dims()
            )));
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dims()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dims()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut st = AdamState::new(AdamConfig::default());
        let grads: ParamGrads = [("w".to_string(), Tensor::scalar(0.0))].into();
        adam_step(&mut p, &grads, &mut st).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        let grads: ParamGrads = [("w".to_string(), Tensor::scalar(3.0))].into();
        let mut prev = 0.0;
        for _ in 0..200 {
            adam_step(&mut p, &grads, &mut st).unwrap();
            let now = p.get("w").unwrap().item();
            let delta = prev - now;
            assert!((delta - 1e-3).abs() < 1e-9, "step {delta}");
            prev = now;
        }
    }

    #[test]
    fn unknown_parameter_is_an_error() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        let grads: ParamGrads = [("nope".to_string(), Tensor::scalar(1.0))].into();
        assert!(adam_step(&mut p, &grads, &mut st).is_err());
    }

    #[test]
    fn matches_scalar_reference_on_quadratic_bowl() {
        // f(x) = sum_i a_i (x_i - c_i)^2, gradient 2 a_i (x_i - c_i)
        let a = [1.0, 4.0, 0.25];
        let c = [0.5, -1.0, 2.0];
        let x0 = [0.0, 0.3, -0.7];
        let mut p = ParamSet::new();
        p.insert("x", Tensor::from_vec(&[3], x0.to_vec()).unwrap()).unwrap();
        let mut st = AdamState::new(AdamConfig::default());

        let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut xr = x0;
        let mut mr = [0.0f64; 3];
        let mut vr = [0.0f64; 3];
        for step in 1..=10 {
            let x = p.get("x").unwrap().data().to_vec();
            let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect();
            let grads: ParamGrads = [("x".to_string(), Tensor::from_vec(&[3], g).unwrap())].into();
            adam_step(&mut p, &grads, &mut st).unwrap();

            for i in 0..3 {
                let gi = 2.0 * a[i] * (xr[i] - c[i]);
                mr[i] = b1 * mr[i] + (1.0 - b1) * gi;
                vr[i] = b2 * vr[i] + (1.0 - b2) * gi * gi;
                let mh = mr[i] / (1.0 - b1.powi(step));
                let vh = vr[i] / (1.0 - b2.powi(step));
                xr[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        for (got, want) in p.get("x").unwrap().data().iter().zip(xr) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}
