//! Central-difference gradient checking in f64.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Layer, LayerParams, Mode, Tensor};
use crate::error::Result;

/// A scalar function of one input tensor and a set of parameters.
pub trait Objective {
    fn value(&mut self, input: &Tensor<f64>) -> Result<f64>;

    /// Input gradient. Parameter gradients are reset and then accumulated.
    fn gradient(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>>;

    fn parameters(&mut self) -> Vec<(String, &mut LayerParams<f64>)>;
}

/// Turns a layer into a scalar objective `sum(layer(x) * R)` with a fixed
/// random projection `R`.
pub struct Probe<L> {
    pub layer: L,
    pub mode: Mode,
    projection: Tensor<f64>,
}

impl<L: Layer<f64>> Probe<L> {
    pub fn new(layer: L, output_shape: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Probe {
            layer,
            mode: Mode::Train,
            projection: Tensor::randn(output_shape, 1.0, &mut rng),
        }
    }
}

impl<L: Layer<f64>> Objective for Probe<L> {
    fn value(&mut self, input: &Tensor<f64>) -> Result<f64> {
        let out = self.layer.forward(input, self.mode)?;
        out.ensure_shape(self.projection.shape(), "probe output")?;
        Ok(out.data().iter().zip(self.projection.data()).map(|(a, b)| a * b).sum())
    }

    fn gradient(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        for (_, p) in self.layer.params_mut() {
            p.zero_grad();
        }
        self.layer.forward(input, self.mode)?;
        self.layer.backward(&self.projection)
    }

    fn parameters(&mut self) -> Vec<(String, &mut LayerParams<f64>)> {
        self.layer.params_mut()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub seed: u64,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_entries: Option<usize>,
    /// Lower bound on the relative-error denominator. Gradients smaller than
    /// this are effectively held to an absolute error of `tolerance * floor`,
    /// which keeps analytically-zero entries (e.g. a bias followed by batch
    /// normalization) from being judged on finite-difference noise alone.
    pub floor: f64,
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            seed: 0x5eed,
            max_entries: None,
            floor: 1e-4,
            check_input: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check {} (max rel error {:.3e}, tolerance {:.1e})",
            if self.passed { "passed" } else { "FAILED" },
            self.max_rel_error,
            self.tolerance
        )?;
        for e in &self.entries {
            writeln!(f, "  {:<24} {:>7} entries  {:.3e}", e.name, e.checked, e.max_rel_error)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn pick(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_entries {
        Some(k) if k < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut idx = sample(&mut rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Weights,
    Bias,
}

fn param_slot(p: &mut LayerParams<f64>, slot: Slot) -> &mut [f64] {
    match slot {
        Slot::Weights => p.weights.data_mut(),
        Slot::Bias => p.bias.data_mut(),
    }
}

/// Compare analytic gradients of `target` against central differences at a
/// random standard-normal input of `input_shape`.
pub fn grad_check<O: Objective>(
    target: &mut O,
    input_shape: &[usize],
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let input = Tensor::<f64>::randn(input_shape, 1.0, &mut rng);
    grad_check_at(target, &input, tolerance, opts)
}

/// [`grad_check`] at a caller-supplied input.
pub fn grad_check_at<O: Objective>(
    target: &mut O,
    input: &Tensor<f64>,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let h = opts.step;
    let grad_in = target.gradient(input)?;
    let analytic: Vec<(String, Vec<f64>, Vec<f64>)> = target
        .parameters()
        .into_iter()
        .map(|(name, p)| (name, p.grad_w.data().to_vec(), p.grad_b.data().to_vec()))
        .collect();

    let mut entries = Vec::new();
    if opts.check_input {
        let mut worst = 0.0f64;
        let idx = pick(input.len(), opts, 0);
        let mut x = input.clone();
        for &i in &idx {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let fp = target.value(&x)?;
            x.data_mut()[i] = orig - h;
            let fm = target.value(&x)?;
            x.data_mut()[i] = orig;
            worst = worst.max(relative_error(grad_in.data()[i], (fp - fm) / (2.0 * h), opts.floor));
        }
        entries.push(GradCheckEntry {
            name: "input".into(),
            checked: idx.len(),
            max_rel_error: worst,
        });
    }

    for (pi, (name, gw, gb)) in analytic.iter().enumerate() {
        let frozen = target.parameters()[pi].1.frozen;
        if frozen {
            continue;
        }
        for (slot, grads, suffix) in [(Slot::Weights, gw, "w"), (Slot::Bias, gb, "b")] {
            let idx = pick(
                grads.len(),
                opts,
                (pi as u64 + 1) * 2 + matches!(slot, Slot::Bias) as u64,
            );
            let mut worst = 0.0f64;
            for &i in &idx {
                let orig = param_slot(target.parameters()[pi].1, slot)[i];
                param_slot(target.parameters()[pi].1, slot)[i] = orig + h;
                let fp = target.value(input)?;
                param_slot(target.parameters()[pi].1, slot)[i] = orig - h;
                let fm = target.value(input)?;
                param_slot(target.parameters()[pi].1, slot)[i] = orig;
                worst = worst.max(relative_error(grads[i], (fp - fm) / (2.0 * h), opts.floor));
            }
            entries.push(GradCheckEntry {
                name: format!("{name}.{suffix}"),
                checked: idx.len(),
                max_rel_error: worst,
            });
        }
    }

    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BatchNorm, Conv2d, Linear, Relu, Sequential};

    /// Wraps a layer and negates every gradient it produces.
    struct SignFlipped<L>(L);

    impl<L: Layer<f64>> Layer<f64> for SignFlipped<L> {
        fn forward(&mut self, input: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
            self.0.forward(input, mode)
        }

        fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
            let g = self.0.backward(grad_out)?;
            for (_, p) in self.0.params_mut() {
                p.grad_w = p.grad_w.map(|v| -v);
                p.grad_b = p.grad_b.map(|v| -v);
            }
            Ok(g.map(|v| -v))
        }

        fn params_mut(&mut self) -> Vec<(String, &mut LayerParams<f64>)> {
            self.0.params_mut()
        }
    }

    fn linear(rng: &mut ChaCha8Rng) -> Linear<f64> {
        Linear::new(LayerParams::new(
            Tensor::randn(&[8, 3], 0.5, rng),
            Tensor::randn(&[3], 0.5, rng),
        ))
    }

    #[test]
    fn sign_flip_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut probe = Probe::new(SignFlipped(linear(&mut rng)), &[2, 3], 3);
        let report = grad_check(&mut probe, &[2, 8], 1e-6, &GradCheckOptions::default()).unwrap();
        assert!(!report.passed);
        assert!((report.max_rel_error - 2.0).abs() < 1e-6, "{report}");
    }

    #[test]
    fn conv_bn_relu_block_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = Conv2d::new(LayerParams::new(
            Tensor::randn(&[3, 3, 2, 4], 0.5, &mut rng),
            Tensor::randn(&[4], 0.1, &mut rng),
        ));
        let mut bn = BatchNorm::new(4);
        bn.affine.weights = Tensor::randn(&[4], 1.0, &mut rng);
        bn.affine.bias = Tensor::randn(&[4], 1.0, &mut rng);
        let block = Sequential::new(vec![Box::new(conv), Box::new(bn), Box::new(Relu::new())]);
        let mut probe = Probe::new(block, &[2, 4, 4, 4], 8);
        let report = grad_check(&mut probe, &[2, 4, 4, 2], 1e-5, &GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn entry_subsampling_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut probe = Probe::new(linear(&mut rng), &[2, 3], 3);
        let opts = GradCheckOptions {
            max_entries: Some(5),
            ..Default::default()
        };
        let report = grad_check(&mut probe, &[2, 8], 1e-6, &opts).unwrap();
        assert!(report.entries.iter().all(|e| e.checked <= 5));
        assert!(report.passed);
    }
}
