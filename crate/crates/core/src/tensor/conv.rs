//! 3x3, stride-1, zero-padded ("same") convolution via im2col + GEMM.
//!
//! Work is split into fixed-size blocks of output pixels so memory stays
//! bounded at any resolution. Block boundaries never depend on the thread
//! count and partial weight gradients are reduced in block order, so results
//! are bitwise reproducible.

use rayon::prelude::*;

use super::{matmul, Layer, LayerParams, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
/// Output pixels per im2col block.
const BLOCK_ROWS: usize = 1024;
/// Blocks whose partial weight gradients are held at once.
const REDUCE_GROUP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGrads {
    pub input: bool,
    pub params: bool,
}

impl Default for ConvGrads {
    fn default() -> Self {
        ConvGrads {
            input: true,
            params: true,
        }
    }
}

fn check_filter<T: Scalar>(weights: &Tensor<T>, cin: usize, context: &str) -> Result<usize> {
    match *weights.shape() {
        [KERNEL, KERNEL, fcin, cout] => {
            if fcin != cin {
                return Err(Error::shape(context, "input channels", fcin, cin));
            }
            Ok(cout)
        }
        [kh, kw, _, _] => Err(Error::shape(
            context,
            "kernel extent",
            KERNEL,
            if kh != KERNEL { kh } else { kw },
        )),
        _ => Err(Error::shape(context, "filter rank", 4, weights.shape().len())),
    }
}

/// Gather 3x3 neighbourhoods of `rows` output pixels starting at flat pixel
/// index `start` into `col` (`rows x 9*cin`). Column order is (ky, kx, ci).
fn im2col<T: Scalar>(input: &[T], (h, w, cin): (usize, usize, usize), start: usize, rows: usize, col: &mut [T]) {
    let k = TAPS * cin;
    for r in 0..rows {
        let p = start + r;
        let x = p % w;
        let y = (p / w) % h;
        let b = p / (w * h);
        let dst_row = &mut col[r * k..(r + 1) * k];
        for ky in 0..KERNEL {
            let yy = y as isize + ky as isize - 1;
            for kx in 0..KERNEL {
                let xx = x as isize + kx as isize - 1;
                let dst = &mut dst_row[(ky * KERNEL + kx) * cin..][..cin];
                if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                    dst.iter_mut().for_each(|v| *v = T::zero());
                } else {
                    let src = ((b * h + yy as usize) * w + xx as usize) * cin;
                    dst.copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
}

fn convolve<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let (b, h, w, cin) = input.dims4("conv2d input")?;
    let cout = check_filter(weights, cin, "conv2d")?;
    if let Some(bias) = bias {
        if bias.len() != cout {
            return Err(Error::shape("conv2d", "bias length", cout, bias.len()));
        }
    }
    let k = TAPS * cin;
    let mut out = Tensor::zeros(&[b, h, w, cout]);
    let src = input.data();
    let wdata = weights.data();
    out.data_mut()
        .par_chunks_mut(BLOCK_ROWS * cout)
        .enumerate()
        .for_each(|(block, dst)| {
            let rows = dst.len() / cout;
            let mut col = vec![T::zero(); rows * k];
            im2col(src, (h, w, cin), block * BLOCK_ROWS, rows, &mut col);
            if let Some(bias) = bias {
                for row in dst.chunks_mut(cout) {
                    row.copy_from_slice(bias);
                }
            }
            matmul(rows, k, cout, &col, false, wdata, false, dst, bias.is_some());
        });
    Ok(out)
}

/// Same-padded 3x3 cross-correlation plus bias; output keeps the input's
/// spatial extent.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (_, _, _, cin) = input.dims4("conv2d input")?;
    let cout = check_filter(&params.weights, cin, "conv2d")?;
    params.bias.ensure_shape(&[cout], "conv2d bias")?;
    convolve(input, &params.weights, Some(params.bias.data()))
}

/// Backward pass; accumulates into `params.grad_w` / `params.grad_b` and
/// returns the input gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let grad = conv2d_backward_with(input, params, grad_out, ConvGrads::default())?;
    Ok(grad.expect("input gradient requested"))
}

pub(crate) fn conv2d_backward_with<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
    wanted: ConvGrads,
) -> Result<Option<Tensor<T>>> {
    let (b, h, w, cin) = input.dims4("conv2d backward input")?;
    let cout = check_filter(&params.weights, cin, "conv2d backward")?;
    grad_out.ensure_shape(&[b, h, w, cout], "conv2d backward grad_out")?;

    if wanted.params {
        accumulate_param_grads(input, (h, w, cin, cout), grad_out, params);
    }
    if !wanted.input {
        return Ok(None);
    }
    // d(input) is a same-padded convolution of d(output) with the spatially
    // flipped, channel-transposed filter bank.
    let wsrc = params.weights.data();
    let mut flipped = vec![T::zero(); wsrc.len()];
    for ky in 0..KERNEL {
        for kx in 0..KERNEL {
            let src_tap = ((KERNEL - 1 - ky) * KERNEL + (KERNEL - 1 - kx)) * cin * cout;
            let dst_tap = (ky * KERNEL + kx) * cout * cin;
            for ci in 0..cin {
                for co in 0..cout {
                    flipped[dst_tap + co * cin + ci] = wsrc[src_tap + ci * cout + co];
                }
            }
        }
    }
    let flipped = Tensor::from_vec(&[KERNEL, KERNEL, cout, cin], flipped)?;
    convolve(grad_out, &flipped, None).map(Some)
}

fn accumulate_param_grads<T: Scalar>(
    input: &Tensor<T>,
    (h, w, cin, cout): (usize, usize, usize, usize),
    grad_out: &Tensor<T>,
    params: &mut LayerParams<T>,
) {
    let k = TAPS * cin;
    let total_rows = grad_out.len() / cout;
    let blocks = total_rows.div_ceil(BLOCK_ROWS);
    let src = input.data();
    let g = grad_out.data();
    let mut group_start = 0;
    while group_start < blocks {
        let group_end = (group_start + REDUCE_GROUP).min(blocks);
        let partials: Vec<(Vec<T>, Vec<T>)> = (group_start..group_end)
            .into_par_iter()
            .map(|block| {
                let start = block * BLOCK_ROWS;
                let rows = BLOCK_ROWS.min(total_rows - start);
                let mut col = vec![T::zero(); rows * k];
                im2col(src, (h, w, cin), start, rows, &mut col);
                let g_block = &g[start * cout..(start + rows) * cout];
                let mut gw = vec![T::zero(); k * cout];
                matmul(k, rows, cout, &col, true, g_block, false, &mut gw, false);
                let mut gb = vec![T::zero(); cout];
                for row in g_block.chunks(cout) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                (gw, gb)
            })
            .collect();
        for (gw, gb) in partials {
            for (acc, v) in params.grad_w.data_mut().iter_mut().zip(gw) {
                *acc += v;
            }
            for (acc, v) in params.grad_b.data_mut().iter_mut().zip(gb) {
                *acc += v;
            }
        }
        group_start = group_end;
    }
}

/// Convolution layer with cached input.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub params: LayerParams<T>,
    /// Skip computing the input gradient (first layer, or everything below is frozen).
    pub skip_input_grad: bool,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(params: LayerParams<T>) -> Self {
        Conv2d {
            params,
            skip_input_grad: false,
            cached_input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.params.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.params.weights.shape()[3]
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }

    /// Backward pass that may return no input gradient when it is not needed.
    pub fn backward_opt(&mut self, grad_out: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("conv2d backward before forward".into()))?;
        let wanted = ConvGrads {
            input: !self.skip_input_grad,
            params: !self.params.frozen,
        };
        conv2d_backward_with(input, &mut self.params, grad_out, wanted)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = conv2d_forward(input, &self.params)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self.backward_opt(grad_out)? {
            Some(g) => Ok(g),
            None => {
                let shape = self
                    .cached_input
                    .as_ref()
                    .map(|t| t.shape().to_vec())
                    .unwrap_or_default();
                Ok(Tensor::zeros(&shape))
            }
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut LayerParams<T>)> {
        vec![("conv".to_string(), &mut self.params)]
    }
}
