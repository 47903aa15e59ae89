use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

fn check_retention(retention: f64) -> Result<()> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retention probability must lie in (0, 1], got {retention}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the per-element scale applied
/// (0 or 1/retention). The mask depends only on `seed` and the element count.
pub fn dropout<T: Scalar>(input: &Tensor<T>, retention: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, Vec<T>)> {
    check_retention(retention)?;
    if mode == Mode::Infer || retention == 1.0 {
        return Ok((input.clone(), vec![T::one(); input.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::lit(1.0 / retention);
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < retention { keep } else { T::zero() })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(input.shape(), out)?, mask))
}

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub retention: f64,
    pub seed: u64,
    mask: Vec<T>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(retention: f64) -> Result<Self> {
        check_retention(retention)?;
        Ok(Dropout {
            retention,
            seed: 0,
            mask: Vec::new(),
        })
    }

    pub fn clear_cache(&mut self) {
        self.mask.clear();
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, mask) = dropout(input, self.retention, mode, self.seed)?;
        self.mask = mask;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != self.mask.len() {
            return Err(Error::shape(
                "dropout backward",
                "element count",
                self.mask.len(),
                grad_out.len(),
            ));
        }
        let g = grad_out.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Tensor::from_vec(grad_out.shape(), g)
    }
}
