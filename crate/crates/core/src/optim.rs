//! ADAM with bias correction, honoring frozen parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LayerParams, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for one weight+bias pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m_w: Tensor<T>,
    pub v_w: Tensor<T>,
    pub m_b: Tensor<T>,
    pub v_b: Tensor<T>,
    /// Number of updates applied to this parameter.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(p: &LayerParams<T>) -> Self {
        AdamState {
            m_w: Tensor::zeros(p.weights.shape()),
            v_w: Tensor::zeros(p.weights.shape()),
            m_b: Tensor::zeros(p.bias.shape()),
            v_b: Tensor::zeros(p.bias.shape()),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub states: Vec<AdamState<T>>,
}

fn update<T: Scalar>(theta: &mut [T], grad: &mut [T], m: &mut [T], v: &mut [T], cfg: &AdamConfig, t: u64) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let c1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t as i32)));
    let c2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t as i32)));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.epsilon);
    for (((p, g), m), v) in theta
        .iter_mut()
        .zip(grad.iter_mut())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + one_b1 * *g;
        *v = b2 * *v + one_b2 * *g * *g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        *g = T::zero();
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&LayerParams<T>]) -> Self {
        Adam {
            config,
            states: params.iter().map(|p| AdamState::for_params(p)).collect(),
        }
    }

    /// One update of every non-frozen parameter from its accumulated gradient.
    /// Gradients are cleared afterwards, including those of frozen parameters.
    pub fn step(&mut self, params: &mut [&mut LayerParams<T>]) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::shape(
                "adam step",
                "parameter count",
                self.states.len(),
                params.len(),
            ));
        }
        for (i, (p, s)) in params.iter_mut().zip(&mut self.states).enumerate() {
            p.weights
                .ensure_shape(s.m_w.shape(), &format!("adam state {i} weights"))?;
            p.bias.ensure_shape(s.m_b.shape(), &format!("adam state {i} bias"))?;
        }
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            if p.frozen {
                p.zero_grad();
                continue;
            }
            s.t += 1;
            let LayerParams {
                weights,
                bias,
                grad_w,
                grad_b,
                ..
            } = &mut **p;
            update(
                weights.data_mut(),
                grad_w.data_mut(),
                s.m_w.data_mut(),
                s.v_w.data_mut(),
                &self.config,
                s.t,
            );
            update(
                bias.data_mut(),
                grad_b.data_mut(),
                s.m_b.data_mut(),
                s.v_b.data_mut(),
                &self.config,
                s.t,
            );
        }
        Ok(())
    }
}

/// Single-step convenience matching the functional form `adam_step(params, states)`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut LayerParams<T>],
    states: &mut [AdamState<T>],
    config: &AdamConfig,
) -> Result<()> {
    let mut opt = Adam {
        config: *config,
        states: states.to_vec(),
    };
    opt.step(params)?;
    states.clone_from_slice(&opt.states);
    Ok(())
}
