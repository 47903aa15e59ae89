use super::{Layer, LayerParams, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over the B, H and W axes.
///
/// `affine.weights` holds gamma and `affine.bias` holds beta so the optimizer
/// treats them like any other parameter pair. Running statistics decay as
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub affine: LayerParams<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<BatchNormCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            affine: LayerParams::new(Tensor::filled(&[channels], T::one()), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.affine.weights.len()
    }

    pub fn gamma(&self) -> &Tensor<T> {
        &self.affine.weights
    }

    pub fn beta(&self) -> &Tensor<T> {
        &self.affine.bias
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize> {
        let c = *input.shape().last().unwrap_or(&0);
        if c != self.channels() {
            return Err(Error::shape("batchnorm", "channels", self.channels(), c));
        }
        Ok(c)
    }

    /// Inference-mode normalization using the running statistics.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(input)?;
        let scale: Vec<T> = (0..c)
            .map(|ch| {
                let inv = 1.0 / (self.running_var.data()[ch].as_f64() + self.epsilon).sqrt();
                T::lit(self.gamma().data()[ch].as_f64() * inv)
            })
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|ch| self.beta().data()[ch] - scale[ch] * self.running_mean.data()[ch])
            .collect();
        let mut out = input.clone();
        for row in out.data_mut().chunks_mut(c) {
            for ((v, &s), &t) in row.iter_mut().zip(&scale).zip(&shift) {
                *v = *v * s + t;
            }
        }
        Ok(out)
    }
}

/// Normalize `input`; in train mode also folds the batch statistics into the
/// running estimates.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNorm<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache)> {
    let c = state.check(input)?;
    let n = input.len() / c;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            for row in input.data().chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; c];
            for row in input.data().chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v.as_f64() - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);

            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
            let mom = state.momentum;
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = T::lit(mom * rm.as_f64() + (1.0 - mom) * mean[ch]);
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = T::lit(mom * rv.as_f64() + (1.0 - mom) * var[ch] * unbias);
            }
            (mean, var)
        }
        Mode::Infer => (
            state.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            state.running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let gamma: Vec<f64> = state.gamma().data().iter().map(|v| v.as_f64()).collect();
    let beta: Vec<f64> = state.beta().data().iter().map(|v| v.as_f64()).collect();

    let mut x_hat = vec![0.0f64; input.len()];
    let mut out = vec![T::zero(); input.len()];
    let rows = input
        .data()
        .chunks_exact(c)
        .zip(x_hat.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c));
    for ((row, xh_row), out_row) in rows {
        let per_channel = mean.iter().zip(&inv_std).zip(gamma.iter().zip(&beta));
        for (((x, xh), y), ((m, is), (g, b))) in row.iter().zip(xh_row).zip(out_row).zip(per_channel) {
            *xh = (x.as_f64() - m) * is;
            *y = T::lit(g * *xh + b);
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache { mode, x_hat, inv_std },
    ))
}

pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    state: &mut BatchNorm<T>,
    cache: &BatchNormCache,
) -> Result<Tensor<T>> {
    let c = state.check(grad_out)?;
    if grad_out.len() != cache.x_hat.len() {
        return Err(Error::shape(
            "batchnorm backward",
            "element count",
            cache.x_hat.len(),
            grad_out.len(),
        ));
    }
    let n = grad_out.len() / c;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (row, xh_row) in grad_out.data().chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
        for (((dy, xh), s), sx) in row.iter().zip(xh_row).zip(&mut sum_dy).zip(&mut sum_dy_xhat) {
            let dy = dy.as_f64();
            *s += dy;
            *sx += dy * xh;
        }
    }
    if !state.affine.frozen {
        for ch in 0..c {
            state.affine.grad_w.data_mut()[ch] += T::lit(sum_dy_xhat[ch]);
            state.affine.grad_b.data_mut()[ch] += T::lit(sum_dy[ch]);
        }
    }
    let gamma: Vec<f64> = state.gamma().data().iter().map(|v| v.as_f64()).collect();
    let nf = n as f64;
    let mut grad = vec![T::zero(); grad_out.len()];
    let rows = grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.x_hat.chunks_exact(c))
        .zip(grad.chunks_exact_mut(c));
    match cache.mode {
        Mode::Train => {
            let k: Vec<f64> = gamma.iter().zip(&cache.inv_std).map(|(g, is)| g * is / nf).collect();
            for ((row, xh_row), g_row) in rows {
                let per_channel = k.iter().zip(&sum_dy).zip(&sum_dy_xhat);
                for (((dy, xh), g), ((k, s), sx)) in row.iter().zip(xh_row).zip(g_row).zip(per_channel) {
                    *g = T::lit(k * (nf * dy.as_f64() - s - xh * sx));
                }
            }
        }
        Mode::Infer => {
            let k: Vec<f64> = gamma.iter().zip(&cache.inv_std).map(|(g, is)| g * is).collect();
            for ((row, _), g_row) in rows {
                for ((dy, g), k) in row.iter().zip(g_row).zip(&k) {
                    *g = T::lit(dy.as_f64() * k);
                }
            }
        }
    }
    Tensor::from_vec(grad_out.shape(), grad)
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm(input, self, mode)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("batchnorm backward before forward".into()))?;
        let g = batchnorm_backward(grad_out, self, &cache);
        self.cache = Some(cache);
        g
    }

    fn params_mut(&mut self) -> Vec<(String, &mut LayerParams<T>)> {
        vec![("bn".to_string(), &mut self.affine)]
    }
}
