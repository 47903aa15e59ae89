use super::{matmul, Layer, LayerParams, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

fn check<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>, context: &str) -> Result<(usize, usize, usize)> {
    let b = input.shape()[0];
    let features = input.len() / b;
    let (fin, fout) = match *params.weights.shape() {
        [i, o] => (i, o),
        _ => return Err(Error::shape(context, "weight rank", 2, params.weights.shape().len())),
    };
    if features != fin {
        return Err(Error::shape(context, "input features", fin, features));
    }
    params.bias.ensure_shape(&[fout], context)?;
    Ok((b, fin, fout))
}

/// `y = x W + b`; any trailing axes of `x` are flattened per sample.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (b, fin, fout) = check(input, params, "linear")?;
    let mut out = Vec::with_capacity(b * fout);
    for _ in 0..b {
        out.extend_from_slice(params.bias.data());
    }
    matmul(
        b,
        fin,
        fout,
        input.data(),
        false,
        params.weights.data(),
        false,
        &mut out,
        true,
    );
    Tensor::from_vec(&[b, fout], out)
}

/// Accumulates `dW = x^T dy`, `db = sum(dy)` and returns `dx = dy W^T`
/// shaped like `input`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, fin, fout) = check(input, params, "linear backward")?;
    grad_out.ensure_shape(&[b, fout], "linear backward grad_out")?;
    if !params.frozen {
        matmul(
            fin,
            b,
            fout,
            input.data(),
            true,
            grad_out.data(),
            false,
            params.grad_w.data_mut(),
            true,
        );
        for row in grad_out.data().chunks(fout) {
            for (acc, &g) in params.grad_b.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    let mut dx = vec![T::zero(); b * fin];
    matmul(
        b,
        fout,
        fin,
        grad_out.data(),
        false,
        params.weights.data(),
        true,
        &mut dx,
        false,
    );
    Tensor::from_vec(input.shape(), dx)
}

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub params: LayerParams<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(params: LayerParams<T>) -> Self {
        Linear {
            params,
            cached_input: None,
        }
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = linear_forward(input, &self.params)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("linear backward before forward".into()))?;
        linear_backward(input, &mut self.params, grad_out)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut LayerParams<T>)> {
        vec![("linear".to_string(), &mut self.params)]
    }
}
