use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{argmax, Checkpoint, OriginNet, Scenario, DEFAULT_RETENTION};
use crate::error::{Error, Result};
use crate::imageops::ImageRGB8;
use crate::label::OriginLabel;
use crate::optim::{Adam, AdamConfig};
use crate::rng::derive_seed;
use crate::tensor::gradcheck::Objective;
use crate::tensor::{softmax_cross_entropy, LayerParams, Mode, Scalar, ScalarKind, Tensor, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub retention: f64,
    pub epochs: usize,
    pub seed: u64,
    pub scalar: ScalarKind,
    pub scenario: Scenario,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 128,
            retention: DEFAULT_RETENTION,
            epochs: 10,
            seed: 7,
            scalar: ScalarKind::F32,
            scenario: Scenario::Ada,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("ADAM betas must lie in [0, 1)".into()));
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "retention {} outside (0, 1]",
                self.retention
            )));
        }
        Ok(())
    }
}

/// Square RGB patches with labels, stored as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPatches {
    side: usize,
    pixels: Vec<u8>,
    labels: Vec<OriginLabel>,
}

impl LabeledPatches {
    pub fn new(side: usize) -> Self {
        LabeledPatches {
            side,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[OriginLabel] {
        &self.labels
    }

    pub fn push(&mut self, patch: &ImageRGB8, label: OriginLabel) -> Result<()> {
        if patch.width() != self.side || patch.height() != self.side {
            return Err(Error::shape(
                "labeled patches",
                "patch side",
                self.side,
                patch.width().max(patch.height()),
            ));
        }
        self.pixels.extend_from_slice(patch.pixels());
        self.labels.push(label);
        Ok(())
    }

    fn stride(&self) -> usize {
        self.side * self.side * 3
    }

    pub fn patch(&self, i: usize) -> ImageRGB8 {
        let s = self.stride();
        ImageRGB8::new(self.side, self.side, self.pixels[i * s..(i + 1) * s].to_vec())
            .expect("stored patch is well formed")
    }

    /// Gather the listed patches into a network input scaled to [0, 1].
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let s = self.stride();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend(
                self.pixels[i * s..(i + 1) * s]
                    .iter()
                    .map(|&v| T::lit(v as f64 / 255.0)),
            );
        }
        Tensor::from_vec(&[indices.len(), self.side, self.side, 3], data).expect("batch extents match")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions seen during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome<T: Scalar> {
    /// Checkpoint from the epoch with the best validation accuracy (the last
    /// epoch when there is no validation data).
    pub best: Checkpoint<T>,
    pub history: Vec<EpochStats>,
}

/// Fraction of patches whose inference-mode prediction matches the label.
pub fn patch_accuracy<T: Scalar>(net: &OriginNet<T>, patches: &LabeledPatches) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::EmptyDataset("no patches to score".into()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..patches.len()).collect();
    for chunk in idx.chunks(64) {
        let logits = net.infer(&patches.batch::<T>(chunk))?;
        for (row, &i) in logits.data().chunks(NUM_CLASSES).zip(chunk) {
            let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            correct += (argmax(&row) == patches.labels[i].index()) as usize;
        }
    }
    Ok(correct as f64 / patches.len() as f64)
}

/// Minibatch ADAM on mean cross-entropy. Patches are reshuffled every epoch
/// from a seed derived from `(config.seed, epoch)`; dropout masks are seeded
/// per minibatch the same way, so a run is fully reproducible.
/// Minibatch activations are allocated and freed every step, and the largest
/// ones exceed glibc's mmap threshold, so each step would page-fault its way
/// through freshly mapped memory. Keep freed blocks on the heap instead.
fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        // SAFETY: mallopt only adjusts allocator tuning parameters.
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_MAX, 0);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        });
    }
}

pub fn train<T: Scalar>(
    mut net: OriginNet<T>,
    train: &LabeledPatches,
    val: &LabeledPatches,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set has no patches".into()));
    }
    retain_freed_memory();
    if train.side() != net.patch_side() || (!val.is_empty() && val.side() != net.patch_side()) {
        return Err(Error::shape("train", "patch side", net.patch_side(), train.side()));
    }
    if net.scenario() != config.scenario {
        return Err(Error::InvalidArgument(format!(
            "network scenario {} does not match configured scenario {}",
            net.scenario(),
            config.scenario
        )));
    }
    if T::KIND != config.scalar {
        return Err(Error::InvalidArgument(format!(
            "network scalar {:?} does not match configured scalar {:?}",
            T::KIND,
            config.scalar
        )));
    }
    net.set_retention(config.retention)?;
    let mut adam = {
        let params = net.params();
        let refs: Vec<&LayerParams<T>> = params.iter().map(|(_, p)| *p).collect();
        Adam::new(config.adam(), &refs)
    };
    let digest = config.digest();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Option<f64>, Checkpoint<T>)> = None;
    let n = train.len();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            "shuffle",
            &[epoch as u64],
        )));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train.batch::<T>(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i].index()).collect();
            net.set_dropout_seed(derive_seed(config.seed, "dropout", &[epoch as u64, bi as u64]));
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            for (row, &l) in logits.data().chunks(NUM_CLASSES).zip(&labels) {
                let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                correct += (argmax(&row) == l) as usize;
            }
            net.backward(&grad, false)?;
            let mut params: Vec<&mut LayerParams<T>> = net.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.step(&mut params)?;
        }
        net.clear_caches();
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(patch_accuracy(&net, val)?)
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy,
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, train acc {:.4}, val acc {}",
            stats.epoch,
            config.epochs,
            stats.train_loss,
            stats.train_accuracy,
            val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        history.push(stats);

        let improved = match (&best, val_accuracy) {
            (None, _) => true,
            (Some((Some(b), _)), Some(a)) => a > *b,
            (Some(_), None) => true,
            (Some((None, _)), Some(_)) => true,
        };
        if improved {
            let mut snapshot = net.clone();
            snapshot.mark_trained();
            best = Some((
                val_accuracy,
                Checkpoint {
                    net: snapshot,
                    optimizer: adam.clone(),
                    epoch: epoch + 1,
                    rng_seed: config.seed,
                    config_digest: digest,
                },
            ));
        }
    }

    let best = match best {
        Some((_, ckpt)) => ckpt,
        None => {
            // zero epochs: the untouched network
            net.mark_trained();
            Checkpoint {
                net,
                optimizer: adam,
                epoch: 0,
                rng_seed: config.seed,
                config_digest: digest,
            }
        }
    };
    Ok(TrainOutcome { best, history })
}

/// Mean cross-entropy of a network on a fixed labeled batch in training mode,
/// as an objective for gradient checking.
pub struct NetLoss {
    pub net: OriginNet<f64>,
    pub labels: Vec<usize>,
    pub dropout_seed: u64,
}

impl Objective for NetLoss {
    fn value(&mut self, input: &Tensor<f64>) -> Result<f64> {
        self.net.set_dropout_seed(self.dropout_seed);
        let logits = self.net.forward(input, Mode::Train)?;
        Ok(softmax_cross_entropy(&logits, &self.labels)?.0)
    }

    fn gradient(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        for (_, p) in self.net.params_mut() {
            p.zero_grad();
        }
        self.net.set_dropout_seed(self.dropout_seed);
        let logits = self.net.forward(input, Mode::Train)?;
        let (_, g) = softmax_cross_entropy(&logits, &self.labels)?;
        Ok(self.net.backward(&g, true)?.expect("input gradient requested"))
    }

    fn parameters(&mut self) -> Vec<(String, &mut LayerParams<f64>)> {
        self.net.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::GradCheckOptions;
    use rand::Rng;

    /// Class 0 dark, class 1 mid, class 2 bright, with noise.
    fn toy_patches(n: usize, seed: u64) -> LabeledPatches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = LabeledPatches::new(32);
        for i in 0..n {
            let label = OriginLabel::ALL[i % 3];
            let base = [40.0, 128.0, 215.0][i % 3];
            let p = ImageRGB8::from_fn(32, 32, |_, _| {
                let v = (base + rng.gen_range(-30.0..30.0f64)).clamp(0.0, 255.0) as u8;
                [v, v, v]
            });
            out.push(&p, label).unwrap();
        }
        out
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn labeled_patches_round_trip() {
        let p = toy_patches(5, 1);
        assert_eq!(p.len(), 5);
        let x = p.batch::<f64>(&[3]);
        assert_eq!(x.shape(), &[1, 32, 32, 3]);
        assert_eq!((x.data()[0] * 255.0).round() as u8, p.patch(3).pixels()[0]);
        let mut q = LabeledPatches::new(32);
        assert!(q.push(&ImageRGB8::filled(16, 16, [0; 3]), OriginLabel::Npi).is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let net = OriginNet::<f32>::new(Scenario::Ada, 32, 0).unwrap();
        let empty = LabeledPatches::new(32);
        assert!(matches!(
            train(net, &empty, &empty, &small_config()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let net = OriginNet::<f32>::new(Scenario::Ada, 32, 0).unwrap();
        let data = toy_patches(24, 2);
        let cfg = TrainConfig {
            lr: 0.0,
            retention: 1.0,
            batch_size: 24,
            epochs: 3,
            ..Default::default()
        };
        let out = train(net.clone(), &data, &LabeledPatches::new(32), &cfg).unwrap();
        for ((name, a), (_, b)) in net.params().iter().zip(out.best.net.params()) {
            assert_eq!(a.weights, b.weights, "{name}");
            assert_eq!(a.bias, b.bias, "{name}");
        }
        let l0 = out.history[0].train_loss;
        assert!(
            out.history.iter().all(|h| (h.train_loss - l0).abs() < 1e-6),
            "{:?}",
            out.history
        );
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let data = toy_patches(48, 3);
        let val = toy_patches(12, 4);
        let run = || {
            let net = OriginNet::<f32>::new(Scenario::Ada, 32, 9).unwrap();
            train(net, &data, &val, &small_config()).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss + 0.5);
        assert!(a.best.net.is_trained());
    }

    #[test]
    fn scenario_and_scalar_must_match() {
        let data = toy_patches(6, 5);
        let net = OriginNet::<f32>::new(Scenario::Vgg, 32, 0).unwrap();
        assert!(train(net, &data, &data, &small_config()).is_err());
        let net = OriginNet::<f64>::new(Scenario::Ada, 32, 0).unwrap();
        assert!(train(net, &data, &data, &small_config()).is_err());
    }

    #[test]
    fn end_to_end_gradients_small_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = OriginNet::<f64>::new(Scenario::Ada, 32, 13).unwrap();
        let mut obj = NetLoss {
            net,
            labels: vec![0, 2],
            dropout_seed: 5,
        };
        let x = Tensor::<f64>::randn(&[2, 32, 32, 3], 1.0, &mut rng);
        let opts = GradCheckOptions {
            max_entries: Some(4),
            ..Default::default()
        };
        let report = crate::tensor::gradcheck::grad_check_at(&mut obj, &x, 1e-4, &opts).unwrap();
        assert!(report.passed, "{report}");
    }
}
