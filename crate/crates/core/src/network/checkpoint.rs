//! Little-endian binary persistence.
//!
//! Checkpoint: `"ORGN"`, u32 version, 32-byte config digest, u8 scenario,
//! u8 scalar width, u32 patch side, u32 epoch, u64 seed, u32 optimizer state
//! count followed by one u64 step counter each, u32 record count, records.
//!
//! Frozen weights: `"ORGF"`, u32 version, u32 record count, records (always
//! f32).
//!
//! Record: u32 name length, UTF-8 name, u32 rank, rank x u32 extents, data.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OriginNet, Scenario};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamState};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"ORGN";
const FROZEN_MAGIC: &[u8; 4] = b"ORGF";
const FROZEN_VERSION: u32 = 1;
pub const FROZEN_NAMES: [&str; 4] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b"];

/// Serialized training state: network, optimizer moments and bookkeeping.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub net: OriginNet<T>,
    pub optimizer: Adam<T>,
    pub epoch: usize,
    pub rng_seed: u64,
    pub config_digest: [u8; 32],
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedWeights(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::MalformedWeights(format!(
                "{} trailing bytes after last record",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_record<T: Scalar, U: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<U>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        T::lit(v.as_f64()).write_le(out);
    }
}

/// Parsed record: extents and values widened to f64 (lossless for f32).
type Record = (Vec<usize>, Vec<f64>);

fn read_records(r: &mut ByteReader, width: usize) -> Result<Vec<(String, Record)>> {
    let count = r.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| Error::MalformedWeights("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        if rank > 8 {
            return Err(Error::MalformedWeights(format!(
                "record {name} has implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("record extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.saturating_mul(width), &format!("data of {name}"))?;
        let values = raw
            .chunks(width)
            .map(|c| {
                if width == 4 {
                    f32::read_le(c) as f64
                } else {
                    f64::read_le(c)
                }
            })
            .collect();
        out.push((name, (shape, values)));
    }
    Ok(out)
}

fn take_tensor<T: Scalar>(records: &mut HashMap<String, Record>, name: &str, expected: &[usize]) -> Result<Tensor<T>> {
    let (shape, values) = records
        .remove(name)
        .ok_or_else(|| Error::MalformedWeights(format!("missing record {name}")))?;
    if shape.len() != expected.len() {
        return Err(Error::shape(name, "rank", expected.len(), shape.len()));
    }
    for (axis, (&e, &f)) in expected.iter().zip(&shape).enumerate() {
        if e != f {
            return Err(Error::shape(name, format!("extent of axis {axis}"), e, f));
        }
    }
    Tensor::from_vec(&shape, values.into_iter().map(T::lit).collect())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.extend_from_slice(&self.config_digest);
        out.push(self.net.scenario().code());
        out.push(T::KIND.width() as u8);
        put_u32(&mut out, self.net.patch_side() as u32);
        put_u32(&mut out, self.epoch as u32);
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        put_u32(&mut out, self.optimizer.states.len() as u32);
        for s in &self.optimizer.states {
            out.extend_from_slice(&s.t.to_le_bytes());
        }

        let params = self.net.params();
        let mut body = Vec::new();
        let mut count = 0u32;
        let mut rec = |name: String, t: &Tensor<T>| {
            write_record::<T, T>(&mut body, &name, t);
            count += 1;
        };
        for (name, p) in &params {
            rec(format!("{name}.w"), &p.weights);
            rec(format!("{name}.b"), &p.bias);
        }
        for (i, b) in self.net.blocks.iter().enumerate() {
            if let Some(bn) = &b.bn {
                rec(format!("bn{}.mean", i + 1), &bn.running_mean);
                rec(format!("bn{}.var", i + 1), &bn.running_var);
            }
        }
        for ((name, _), s) in params.iter().zip(&self.optimizer.states) {
            rec(format!("adam.{name}.m_w"), &s.m_w);
            rec(format!("adam.{name}.v_w"), &s.v_w);
            rec(format!("adam.{name}.m_b"), &s.m_b);
            rec(format!("adam.{name}.v_b"), &s.v_b);
        }
        put_u32(&mut out, count);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::MalformedWeights("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::MalformedWeights(format!(
                "checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config_digest: [u8; 32] = r.take(32, "config digest")?.try_into().expect("32 bytes");
        let scenario = Scenario::from_code(r.u8("scenario")?)?;
        let width = r.u8("scalar width")? as usize;
        if width != 4 && width != 8 {
            return Err(Error::MalformedWeights(format!("unsupported scalar width {width}")));
        }
        let side = r.u32("patch side")? as usize;
        let epoch = r.u32("epoch")? as usize;
        let rng_seed = r.u64("seed")?;
        let n_states = r.u32("optimizer state count")? as usize;
        let mut steps = Vec::with_capacity(n_states.min(64));
        for _ in 0..n_states {
            steps.push(r.u64("optimizer step")?);
        }
        let mut records: HashMap<String, Record> = read_records(&mut r, width)?.into_iter().collect();
        r.done()?;

        let mut net = OriginNet::<T>::new(scenario, side, 0)
            .map_err(|e| Error::MalformedWeights(format!("bad network header: {e}")))?;
        let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != n_states {
            return Err(Error::MalformedWeights(format!(
                "{n_states} optimizer states for {} parameter groups",
                names.len()
            )));
        }
        let mut states = Vec::with_capacity(names.len());
        for ((name, p), t) in net.params_mut().into_iter().zip(steps) {
            let ws = p.weights.shape().to_vec();
            let bs = p.bias.shape().to_vec();
            p.weights = take_tensor(&mut records, &format!("{name}.w"), &ws)?;
            p.bias = take_tensor(&mut records, &format!("{name}.b"), &bs)?;
            states.push(AdamState {
                m_w: take_tensor(&mut records, &format!("adam.{name}.m_w"), &ws)?,
                v_w: take_tensor(&mut records, &format!("adam.{name}.v_w"), &ws)?,
                m_b: take_tensor(&mut records, &format!("adam.{name}.m_b"), &bs)?,
                v_b: take_tensor(&mut records, &format!("adam.{name}.v_b"), &bs)?,
                t,
            });
        }
        for (i, b) in net.blocks.iter_mut().enumerate() {
            if let Some(bn) = &mut b.bn {
                let c = [bn.channels()];
                bn.running_mean = take_tensor(&mut records, &format!("bn{}.mean", i + 1), &c)?;
                bn.running_var = take_tensor(&mut records, &format!("bn{}.var", i + 1), &c)?;
            }
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::MalformedWeights(format!("unexpected record {extra}")));
        }
        net.mark_trained();
        Ok(Checkpoint {
            net,
            optimizer: Adam {
                config: Default::default(),
                states,
            },
            epoch,
            rng_seed,
            config_digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Imported first-two-layer filters, in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeights {
    pub records: Vec<(String, Tensor<f32>)>,
}

impl FrozenWeights {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FROZEN_MAGIC);
        put_u32(&mut out, FROZEN_VERSION);
        put_u32(&mut out, self.records.len() as u32);
        for (name, t) in &self.records {
            write_record::<f32, f32>(&mut out, name, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4, "magic")? != FROZEN_MAGIC {
            return Err(Error::MalformedWeights("not a frozen-weight file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FROZEN_VERSION {
            return Err(Error::MalformedWeights(format!(
                "frozen-weight version {version} (expected {FROZEN_VERSION})"
            )));
        }
        let records = read_records(&mut r, 4)?
            .into_iter()
            .map(|(name, (shape, values))| {
                let t = Tensor::from_vec(&shape, values.into_iter().map(|v| v as f32).collect())?;
                Ok((name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        r.done()?;
        Ok(FrozenWeights { records })
    }
}

pub fn write_frozen_weights(path: impl AsRef<Path>, weights: &FrozenWeights) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_frozen_weights(path: impl AsRef<Path>) -> Result<FrozenWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FrozenWeights::from_bytes(&bytes)
}

/// Random stand-in for imported filters (He-normal weights, small biases).
pub fn random_frozen_weights(seed: u64) -> FrozenWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1_w = Tensor::randn(&[3, 3, 3, 64], (2.0f64 / 27.0).sqrt(), &mut rng);
    let conv1_b = Tensor::from_vec(&[64], (0..64).map(|_| rng.gen_range(-0.1..0.1)).collect()).expect("64 values");
    let conv2_w = Tensor::randn(&[3, 3, 64, 64], (2.0f64 / 576.0).sqrt(), &mut rng);
    let conv2_b = Tensor::from_vec(&[64], (0..64).map(|_| rng.gen_range(-0.1..0.1)).collect()).expect("64 values");
    FrozenWeights {
        records: vec![
            ("conv1.w".into(), conv1_w),
            ("conv1.b".into(), conv1_b),
            ("conv2.w".into(), conv2_w),
            ("conv2.b".into(), conv2_b),
        ],
    }
}

/// Install imported conv1/conv2 filters into a `vgg` network and freeze them.
pub fn load_frozen_weights<T: Scalar>(net: &mut OriginNet<T>, weights: &FrozenWeights) -> Result<()> {
    if net.scenario() != Scenario::Vgg {
        return Err(Error::InvalidArgument(
            "frozen weights only apply to the vgg scenario".into(),
        ));
    }
    for (layer, block) in net.blocks.iter_mut().take(2).enumerate() {
        let conv = format!("conv{}", layer + 1);
        for (suffix, target) in [
            ("w", &mut block.conv.params.weights),
            ("b", &mut block.conv.params.bias),
        ] {
            let name = format!("{conv}.{suffix}");
            let src = weights
                .get(&name)
                .ok_or_else(|| Error::MalformedWeights(format!("frozen-weight file lacks {name}")))?;
            if src.shape() != target.shape() {
                let axis = src
                    .shape()
                    .iter()
                    .zip(target.shape())
                    .position(|(a, b)| a != b)
                    .unwrap_or(0);
                return Err(Error::ShapeMismatch {
                    context: format!("frozen {name}"),
                    dimension: if src.shape().len() != target.shape().len() {
                        "rank".into()
                    } else {
                        format!("extent of axis {axis}")
                    },
                    expected: if src.shape().len() != target.shape().len() {
                        target.shape().len()
                    } else {
                        target.shape()[axis]
                    },
                    found: if src.shape().len() != target.shape().len() {
                        src.shape().len()
                    } else {
                        src.shape()[axis]
                    },
                });
            }
            *target = src.cast();
        }
        block.conv.params.frozen = true;
    }
    Ok(())
}
