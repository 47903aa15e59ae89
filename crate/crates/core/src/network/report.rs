use std::path::{Path, PathBuf};

use super::OriginNet;
use crate::error::{Error, Result};
use crate::imageops::{write_pgm, GrayImage};
use crate::tensor::Scalar;

const FILTER_UPSCALE: usize = 16;

/// Population variance of the first-layer weights feeding each input
/// channel (all taps and output filters pooled).
pub fn weight_variance_report<T: Scalar>(net: &OriginNet<T>) -> Vec<f64> {
    let w = &net.blocks[0].conv.params.weights;
    let (cin, cout) = (w.shape()[2], w.shape()[3]);
    (0..cin)
        .map(|c| {
            // Welford: exact zero for constant weights
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for i in (0..9).flat_map(|tap| (0..cout).map(move |o| (tap * cin + c) * cout + o)) {
                let v = w.data()[i].as_f64();
                n += 1.0;
                let d = v - mean;
                mean += d / n;
                m2 += d * (v - mean);
            }
            m2 / n
        })
        .collect()
}

pub fn write_variance_csv(path: impl AsRef<Path>, variances: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["channel", "variance"])?;
    for (c, v) in variances.iter().enumerate() {
        let name = ["R", "G", "B"]
            .get(c)
            .map(|s| s.to_string())
            .unwrap_or_else(|| c.to_string());
        w.write_record([name, format!("{v:.12e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write every 3x3 filter slice of convolution `layer` (1-based) at input
/// channel `channel` as a min-max normalised, nearest-neighbour enlarged PGM.
/// A constant filter becomes uniform gray 128.
pub fn export_filters<T: Scalar>(
    net: &OriginNet<T>,
    layer: usize,
    channel: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let block = layer
        .checked_sub(1)
        .and_then(|i| net.blocks.get(i))
        .ok_or_else(|| Error::InvalidArgument(format!("no convolution layer {layer} (valid: 1..=7)")))?;
    let w = &block.conv.params.weights;
    let (cin, cout) = (w.shape()[2], w.shape()[3]);
    if channel >= cin {
        return Err(Error::InvalidArgument(format!(
            "conv{layer} has {cin} input channels; channel {channel} is out of range"
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let side = 3 * FILTER_UPSCALE;
    let mut paths = Vec::with_capacity(cout);
    for o in 0..cout {
        let taps: Vec<f64> = (0..9)
            .map(|t| w.data()[(t * cin + channel) * cout + o].as_f64())
            .collect();
        let lo = taps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = taps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let levels: Vec<u8> = taps
            .iter()
            .map(|&v| {
                if hi > lo {
                    (255.0 * (v - lo) / (hi - lo)).round() as u8
                } else {
                    128
                }
            })
            .collect();
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                pixels.push(levels[(y / FILTER_UPSCALE) * 3 + x / FILTER_UPSCALE]);
            }
        }
        let path = out_dir.join(format!("conv{layer}_ch{channel}_f{o:03}.pgm"));
        write_pgm(&path, &GrayImage::new(side, side, pixels)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Scenario;
    use crate::tensor::Tensor;

    fn read_pgm(path: &Path) -> Vec<u8> {
        let bytes = std::fs::read(path).unwrap();
        bytes[bytes.len() - 48 * 48..].to_vec()
    }

    #[test]
    fn constant_weights_have_zero_variance() {
        let mut net = OriginNet::<f64>::new(Scenario::Ada, 32, 0).unwrap();
        net.blocks[0].conv.params.weights.fill(0.3);
        let v = weight_variance_report(&net);
        assert!(v.iter().all(|&v| v.abs() < 1e-30), "{v:?}");
    }

    #[test]
    fn plus_minus_one_has_unit_variance() {
        let mut net = OriginNet::<f64>::new(Scenario::Ada, 32, 0).unwrap();
        let w = net.blocks[0].conv.params.weights.map(|_| 0.0);
        let mut data = w.into_data();
        for (i, v) in data.iter_mut().enumerate() {
            *v = if (i / 64 / 3 + i % 64) % 2 == 0 { 1.0 } else { -1.0 };
        }
        net.blocks[0].conv.params.weights = Tensor::from_vec(&[3, 3, 3, 64], data).unwrap();
        for v in weight_variance_report(&net) {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let net = OriginNet::<f64>::new(Scenario::Ada, 32, 17).unwrap();
        let w = &net.blocks[0].conv.params.weights;
        let got = weight_variance_report(&net);
        for c in 0..3 {
            let mut vals = Vec::new();
            for ky in 0..3 {
                for kx in 0..3 {
                    for o in 0..64 {
                        vals.push(w.data()[((ky * 3 + kx) * 3 + c) * 64 + o]);
                    }
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((got[c] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = OriginNet::<f32>::new(Scenario::Ada, 32, 3).unwrap();
        let paths = export_filters(&net, 1, 0, dir.path()).unwrap();
        assert_eq!(paths.len(), 64);
        let px = read_pgm(&paths[5]);
        assert_eq!(*px.iter().min().unwrap(), 0);
        assert_eq!(*px.iter().max().unwrap(), 255);

        net.blocks[0].conv.params.weights.fill(0.7);
        let paths = export_filters(&net, 1, 2, dir.path()).unwrap();
        assert!(read_pgm(&paths[0]).iter().all(|&v| v == 128));

        assert!(export_filters(&net, 0, 0, dir.path()).is_err());
        assert!(export_filters(&net, 8, 0, dir.path()).is_err());
        assert!(export_filters(&net, 1, 3, dir.path()).is_err());
    }
}
