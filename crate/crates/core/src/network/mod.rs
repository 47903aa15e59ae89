//! The patch classifier: seven 3x3 convolution blocks (the last five pooled),
//! a 2048-unit fully connected layer with dropout, and a three-way softmax.

mod checkpoint;
mod report;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_frozen_weights, random_frozen_weights, read_frozen_weights, write_frozen_weights, Checkpoint, FrozenWeights,
    CHECKPOINT_VERSION, FROZEN_NAMES,
};
pub use report::{export_filters, weight_variance_report, write_variance_csv};
pub use train::{patch_accuracy, train, EpochStats, LabeledPatches, NetLoss, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::imageops::ImageRGB8;
use crate::label::OriginLabel;
use crate::tensor::{
    conv2d_forward, linear_forward, maxpool2x2, relu, BatchNorm, Conv2d, Dropout, Layer, LayerParams, Linear,
    MaxPool2x2, Mode, Relu, Scalar, Tensor, NUM_CLASSES,
};
use crate::vote::Prediction;

/// Filters per convolution layer.
pub const FILTERS: [usize; 7] = [64, 64, 32, 32, 64, 64, 128];
/// Index of the first block followed by 2x2 max pooling.
const FIRST_POOLED: usize = 2;
pub const FC_WIDTH: usize = 2048;
pub const DEFAULT_RETENTION: f64 = 0.2;
/// Standard deviation of the classifier head's initial weights.
const HEAD_INIT_STD: f64 = 0.001;
/// Patches per inference batch.
const INFER_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// First two convolutions imported and frozen, without batch norm.
    Vgg,
    /// Every layer trained from scratch.
    Ada,
}

impl Scenario {
    pub fn code(self) -> u8 {
        match self {
            Scenario::Vgg => 0,
            Scenario::Ada => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Scenario::Vgg),
            1 => Ok(Scenario::Ada),
            other => Err(Error::MalformedWeights(format!("unknown scenario code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Vgg => "vgg",
            Scenario::Ada => "ada",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg" => Ok(Scenario::Vgg),
            "ada" => Ok(Scenario::Ada),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected vgg or ada)"
            ))),
        }
    }
}

/// conv -> [batch norm] -> ReLU -> [2x2 max pool]
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm<T>>,
    relu: Relu,
    pool: Option<MaxPool2x2>,
}

impl<T: Scalar> ConvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.conv.forward(x, mode)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, mode)?;
        }
        h = self.relu.forward(&h, mode)?;
        if let Some(pool) = &mut self.pool {
            h = Layer::<T>::forward(pool, &h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = conv2d_forward(x, &self.conv.params)?;
        if let Some(bn) = &self.bn {
            h = bn.infer(&h)?;
        }
        h = relu(&h);
        if self.pool.is_some() {
            h = maxpool2x2(&h)?.0;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>> {
        let mut g = match &mut self.pool {
            Some(pool) => Layer::<T>::backward(pool, grad)?,
            None => grad.clone(),
        };
        g = self.relu.backward(&g)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.skip_input_grad = !want_input;
        self.conv.backward_opt(&g)
    }

    fn trainable(&self) -> bool {
        !self.conv.params.frozen || self.bn.is_some()
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        if let Some(bn) = &mut self.bn {
            bn.clear_cache();
        }
        self.relu = Relu::new();
        if let Some(pool) = &mut self.pool {
            pool.clear_cache();
        }
    }
}

#[derive(Debug, Clone)]
pub struct OriginNet<T: Scalar> {
    scenario: Scenario,
    patch_side: usize,
    pub blocks: Vec<ConvBlock<T>>,
    pub fc1: Linear<T>,
    fc_relu: Relu,
    pub dropout: Dropout<T>,
    pub fc_out: Linear<T>,
    trained: bool,
}

pub fn check_patch_side(side: usize) -> Result<()> {
    if side < 32 || side % 32 != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch side {side} must be a positive multiple of 32"
        )));
    }
    Ok(())
}

/// Length of the flattened activation entering the first FC layer.
pub fn feature_len(side: usize) -> usize {
    let s = side / 32;
    s * s * FILTERS[6]
}

fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

impl<T: Scalar> OriginNet<T> {
    /// Freshly initialised network. Under [`Scenario::Vgg`] the first two
    /// convolutions are frozen and carry no batch norm; their weights are
    /// expected to be replaced by [`load_frozen_weights`].
    pub fn new(scenario: Scenario, patch_side: usize, seed: u64) -> Result<Self> {
        check_patch_side(patch_side)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(FILTERS.len());
        for (i, &cout) in FILTERS.iter().enumerate() {
            let frozen = scenario == Scenario::Vgg && i < 2;
            let mut params = LayerParams::new(he_normal(&[3, 3, cin, cout], 9 * cin, &mut rng), Tensor::zeros(&[cout]));
            params.frozen = frozen;
            blocks.push(ConvBlock {
                conv: Conv2d::new(params),
                bn: (!frozen).then(|| BatchNorm::new(cout)),
                relu: Relu::new(),
                pool: (i >= FIRST_POOLED).then(MaxPool2x2::new),
            });
            cin = cout;
        }
        let flat = feature_len(patch_side);
        let fc1 = Linear::new(LayerParams::new(
            he_normal(&[flat, FC_WIDTH], flat, &mut rng),
            Tensor::zeros(&[FC_WIDTH]),
        ));
        let fc_out = Linear::new(LayerParams::new(
            Tensor::randn(&[FC_WIDTH, NUM_CLASSES], HEAD_INIT_STD, &mut rng),
            Tensor::zeros(&[NUM_CLASSES]),
        ));
        Ok(OriginNet {
            scenario,
            patch_side,
            blocks,
            fc1,
            fc_relu: Relu::new(),
            dropout: Dropout::new(DEFAULT_RETENTION)?,
            fc_out,
            trained: false,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Allow prediction; set by training and checkpoint loading.
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn set_retention(&mut self, retention: f64) -> Result<()> {
        self.dropout = Dropout::new(retention)?;
        Ok(())
    }

    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout.seed = seed;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = x.dims4("network input")?;
        if h != self.patch_side || w != self.patch_side {
            return Err(Error::shape(
                "network input",
                "patch side",
                self.patch_side,
                if h != self.patch_side { h } else { w },
            ));
        }
        if c != 3 {
            return Err(Error::shape("network input", "channels", 3, c));
        }
        Ok(())
    }

    /// Logits for a B x P x P x 3 batch. Train mode caches activations for
    /// [`OriginNet::backward`]; infer mode is the same as [`OriginNet::infer`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        h = self.fc1.forward(&h, mode)?;
        h = self.fc_relu.forward(&h, mode)?;
        h = self.dropout.forward(&h, mode)?;
        self.fc_out.forward(&h, mode)
    }

    /// Inference with running batch-norm statistics and no dropout.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        h = relu(&linear_forward(&h, &self.fc1.params)?);
        linear_forward(&h, &self.fc_out.params)
    }

    /// Activation entering the first FC layer (inference path).
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        Ok(h)
    }

    /// Accumulate parameter gradients from `grad_logits`. The input gradient
    /// is only computed when `want_input` is set; otherwise the pass stops at
    /// the lowest layer that still has trainable parameters.
    pub fn backward(&mut self, grad_logits: &Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>> {
        let mut g = self.fc_out.backward(grad_logits)?;
        g = self.dropout.backward(&g)?;
        g = self.fc_relu.backward(&g)?;
        g = self.fc1.backward(&g)?;
        let lowest = self.blocks.iter().position(ConvBlock::trainable);
        for i in (0..self.blocks.len()).rev() {
            let need = want_input || lowest.is_some_and(|l| l < i);
            match self.blocks[i].backward(&g, need)? {
                Some(next) if need => g = next,
                _ => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            b.clear_cache();
        }
        self.fc1.clear_cache();
        self.fc_relu = Relu::new();
        self.dropout.clear_cache();
        self.fc_out.clear_cache();
    }

    /// Named parameter groups in a fixed order: conv1, bn1, ..., conv7, bn7, fc1, fc_out.
    pub fn params(&self) -> Vec<(String, &LayerParams<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}", i + 1), &b.conv.params));
            if let Some(bn) = &b.bn {
                out.push((format!("bn{}", i + 1), &bn.affine));
            }
        }
        out.push(("fc1".into(), &self.fc1.params));
        out.push(("fc_out".into(), &self.fc_out.params));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut LayerParams<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("conv{}", i + 1), &mut b.conv.params));
            if let Some(bn) = &mut b.bn {
                out.push((format!("bn{}", i + 1), &mut bn.affine));
            }
        }
        out.push(("fc1".into(), &mut self.fc1.params));
        out.push(("fc_out".into(), &mut self.fc_out.params));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.param_count()).sum()
    }

    /// SHA-256 over the little-endian weight and bias bytes of the named groups.
    pub fn digest(&self, names: &[&str]) -> Result<[u8; 32]> {
        let params = self.params();
        let mut h = Sha256::new();
        for name in names {
            let (_, p) = params
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("no parameter group named {name}")))?;
            let mut bytes = Vec::new();
            for v in p.weights.data().iter().chain(p.bias.data()) {
                v.write_le(&mut bytes);
            }
            h.update(&bytes);
        }
        Ok(h.finalize().into())
    }

    /// Classify a batch of patches, processed in fixed-size chunks.
    pub fn predict(&self, patches: &[ImageRGB8]) -> Result<Vec<Prediction>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(INFER_CHUNK) {
            let x = patches_to_tensor::<T>(chunk, self.patch_side)?;
            let logits = self.infer(&x)?;
            for row in logits.data().chunks(NUM_CLASSES) {
                out.push(Prediction::from_logits(row));
            }
        }
        Ok(out)
    }

    pub fn predict_patch(&self, patch: &ImageRGB8) -> Result<Prediction> {
        Ok(self.predict(std::slice::from_ref(patch))?.remove(0))
    }
}

/// Stack square patches into a B x P x P x 3 tensor scaled to [0, 1].
pub fn patches_to_tensor<T: Scalar>(patches: &[ImageRGB8], side: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(patches.len() * side * side * 3);
    for p in patches {
        if p.width() != side || p.height() != side {
            return Err(Error::shape(
                "patch batch",
                "patch side",
                side,
                p.width().max(p.height()),
            ));
        }
        data.extend(p.pixels().iter().map(|&v| T::lit(v as f64 / 255.0)));
    }
    Tensor::from_vec(&[patches.len(), side, side, 3], data)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn label_of(values: &[f64]) -> OriginLabel {
    OriginLabel::ALL[argmax(values)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax_cross_entropy;

    fn rand_batch(b: usize, side: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::<f32>::randn(&[b, side, side, 3], 1.0, &mut rng).map(|v| v.abs().min(1.0))
    }

    #[test]
    fn shape_chain_at_32_and_64() {
        let net = OriginNet::<f32>::new(Scenario::Ada, 32, 1).unwrap();
        let x = rand_batch(1, 32, 2);
        assert_eq!(net.features(&x).unwrap().shape(), &[1, 1, 1, 128]);
        assert_eq!(net.infer(&x).unwrap().shape(), &[1, 3]);
        let net = OriginNet::<f32>::new(Scenario::Ada, 64, 1).unwrap();
        assert_eq!(net.features(&rand_batch(2, 64, 2)).unwrap().shape(), &[2, 2, 2, 128]);
    }

    #[test]
    fn full_size_feature_length() {
        assert_eq!(feature_len(224), 6272);
        assert_eq!(feature_len(32), 128);
    }

    #[test]
    fn rejects_bad_sides_and_inputs() {
        assert!(OriginNet::<f32>::new(Scenario::Ada, 48, 0).is_err());
        assert!(OriginNet::<f32>::new(Scenario::Ada, 0, 0).is_err());
        let net = OriginNet::<f32>::new(Scenario::Ada, 32, 0).unwrap();
        assert!(net.infer(&Tensor::zeros(&[1, 32, 32, 4])).is_err());
        assert!(net.infer(&Tensor::zeros(&[1, 64, 64, 3])).is_err());
    }

    #[test]
    fn scenario_layout() {
        let vgg = OriginNet::<f32>::new(Scenario::Vgg, 32, 0).unwrap();
        assert!(vgg.blocks[0].conv.params.frozen && vgg.blocks[1].conv.params.frozen);
        assert!(vgg.blocks[0].bn.is_none() && vgg.blocks[1].bn.is_none());
        assert!(vgg.blocks[2..].iter().all(|b| b.bn.is_some() && !b.conv.params.frozen));
        let ada = OriginNet::<f32>::new(Scenario::Ada, 32, 0).unwrap();
        assert!(ada.blocks.iter().all(|b| b.bn.is_some() && !b.conv.params.frozen));
        let pooled: Vec<bool> = ada.blocks.iter().map(|b| b.pool.is_some()).collect();
        assert_eq!(pooled, vec![false, false, true, true, true, true, true]);
        assert_eq!(ada.params().len(), 7 * 2 + 2);
        assert_eq!(vgg.params().len(), 7 + 5 + 2);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let mut net = OriginNet::<f32>::new(Scenario::Ada, 32, 3).unwrap();
        let one = rand_batch(1, 32, 4);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let x = Tensor::from_vec(&[2, 32, 32, 3], data).unwrap();
        let y = net.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.data()[..3], y.data()[3..]);
    }

    #[test]
    fn initial_loss_is_near_ln3() {
        let mut net = OriginNet::<f32>::new(Scenario::Ada, 32, 5).unwrap();
        net.set_dropout_seed(1);
        let x = rand_batch(16, 32, 6);
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let logits = net.forward(&x, Mode::Train).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((loss - 3f64.ln()).abs() < 0.15, "loss {loss}");
    }

    #[test]
    fn untrained_net_refuses_to_predict() {
        let net = OriginNet::<f32>::new(Scenario::Ada, 32, 0).unwrap();
        let p = ImageRGB8::filled(32, 32, [1, 2, 3]);
        assert!(matches!(net.predict_patch(&p), Err(Error::Untrained)));
    }

    #[test]
    fn equal_logits_pick_first_label() {
        let p = Prediction::from_logits(&[0.5f32, 0.5, 0.5]);
        assert_eq!(p.label, OriginLabel::Npi);
        for c in p.confidences {
            assert!((c - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_are_distributions() {
        let mut net = OriginNet::<f32>::new(Scenario::Ada, 32, 8).unwrap();
        net.mark_trained();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patches: Vec<ImageRGB8> = (0..70)
            .map(|_| ImageRGB8::from_fn(32, 32, |_, _| rand::Rng::gen(&mut rng)))
            .collect();
        let preds = net.predict(&patches).unwrap();
        assert_eq!(preds.len(), 70);
        for p in preds {
            let s: f64 = p.confidences.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.confidences.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }

    #[test]
    fn vgg_backward_stops_above_frozen_layers() {
        let mut net = OriginNet::<f32>::new(Scenario::Vgg, 32, 2).unwrap();
        let x = rand_batch(2, 32, 3);
        let logits = net.forward(&x, Mode::Train).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[0, 1]).unwrap();
        assert!(net.backward(&g, false).unwrap().is_none());
        assert!(net.blocks[0].conv.params.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(net.blocks[2].conv.params.grad_w.data().iter().any(|&v| v != 0.0));
    }
}
