use super::{Layer, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Flat input offset of the winning element for every pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (b, h, w, c) = input.dims4("maxpool input")?;
    if h % 2 != 0 {
        return Err(Error::shape("maxpool", "height parity", h + 1, h));
    }
    if w % 2 != 0 {
        return Err(Error::shape("maxpool", "width parity", w + 1, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = |dy: usize, dx: usize| ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                let offsets = [base(0, 0), base(0, 1), base(1, 0), base(1, 1)];
                for ch in 0..c {
                    let mut best = offsets[0] + ch;
                    for off in &offsets[1..] {
                        if src[off + ch] > src[best] {
                            best = off + ch;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[b, oh, ow, c], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool backward",
            "element count",
            indices.argmax.len(),
            grad_out.len(),
        ));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let dst = grad.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        dst[idx] += g;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    indices: Option<PoolIndices>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear_cache(&mut self) {
        self.indices = None;
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, idx) = maxpool2x2(input)?;
        self.indices = Some(idx);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let idx = self
            .indices
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("maxpool backward before forward".into()))?;
        maxpool2x2_backward(grad_out, idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, GradCheckOptions, Probe};

    #[test]
    fn takes_window_max() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(idx.argmax, vec![0]);
        let g = maxpool2x2_backward(&Tensor::filled(&[1, 1, 1, 1], 1.0), &idx).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_input_halves_resolution() {
        let x = Tensor::filled(&[2, 6, 4, 3], 0.5f64);
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn five_pools_take_224_to_7() {
        let mut x = Tensor::<f32>::zeros(&[1, 224, 224, 1]);
        for _ in 0..5 {
            x = maxpool2x2(&x).unwrap().0;
        }
        assert_eq!(x.shape(), &[1, 7, 7, 1]);
    }

    #[test]
    fn odd_extent_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 7, 8, 1]);
        assert!(matches!(maxpool2x2(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn output_is_exact_window_max() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[2, 4, 6, 3], 1.0, &mut rng);
        let (y, _) = maxpool2x2(&x).unwrap();
        for b in 0..2 {
            for oy in 0..2 {
                for ox in 0..3 {
                    for c in 0..3 {
                        let at = |yy: usize, xx: usize| x.data()[((b * 4 + yy) * 6 + xx) * 3 + c];
                        let m = at(2 * oy, 2 * ox)
                            .max(at(2 * oy, 2 * ox + 1))
                            .max(at(2 * oy + 1, 2 * ox))
                            .max(at(2 * oy + 1, 2 * ox + 1));
                        assert_eq!(y.data()[((b * 2 + oy) * 3 + ox) * 3 + c], m);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut probe = Probe::new(MaxPool2x2::new(), &[2, 2, 3, 2], 5);
        let report = grad_check(&mut probe, &[2, 4, 6, 2], 1e-5, &GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report}");
    }
}
