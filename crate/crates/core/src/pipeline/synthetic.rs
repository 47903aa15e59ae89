//! Procedural three-class texture set: white noise (npi), 8x8 block noise
//! (cgg) and sinusoidal gratings (dgi). Every channel of every image spans
//! exactly 0..=255.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::{write_image, ImageRGB8};
use crate::label::OriginLabel;
use crate::rng::derive_seed;

pub const SYNTHETIC_PER_CLASS: usize = 100;
pub const SYNTHETIC_SIDE: usize = 64;
pub const SYNTHETIC_SEED: u64 = 7;
const BLOCK: usize = 8;

/// Min-max map each channel of a planar float image onto 0..=255.
fn normalise(side: usize, planes: [Vec<f64>; 3]) -> ImageRGB8 {
    let scaled: Vec<Vec<u8>> = planes
        .iter()
        .map(|p| {
            let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            p.iter()
                .map(|&v| {
                    if hi > lo {
                        ((v - lo) * 255.0 / (hi - lo)).round() as u8
                    } else {
                        128
                    }
                })
                .collect()
        })
        .collect();
    ImageRGB8::from_fn(side, side, |x, y| {
        let i = y * side + x;
        [scaled[0][i], scaled[1][i], scaled[2][i]]
    })
}

pub fn synthetic_image(label: OriginLabel, side: usize, seed: u64) -> ImageRGB8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = side * side;
    let planes: [Vec<f64>; 3] = match label {
        OriginLabel::Npi => std::array::from_fn(|_| (0..n).map(|_| rng.gen::<f64>()).collect()),
        OriginLabel::Cgg => {
            let blocks = side.div_ceil(BLOCK);
            std::array::from_fn(|_| {
                let b: Vec<f64> = (0..blocks * blocks).map(|_| rng.gen::<f64>()).collect();
                (0..n)
                    .map(|i| b[(i / side / BLOCK) * blocks + (i % side) / BLOCK])
                    .collect()
            })
        }
        OriginLabel::Dgi => {
            let period = rng.gen_range(6.0..16.0);
            let theta = rng.gen_range(0.0..PI);
            let (c, s) = (theta.cos(), theta.sin());
            std::array::from_fn(|_| {
                let phase = rng.gen_range(0.0..2.0 * PI);
                (0..n)
                    .map(|i| {
                        let (x, y) = ((i % side) as f64, (i / side) as f64);
                        (2.0 * PI * (x * c + y * s) / period + phase).sin()
                    })
                    .collect()
            })
        }
    };
    normalise(side, planes)
}

/// Write `per_class` PNGs per class under `root/{npi,cgg,dgi}/NNNN.png`.
pub fn make_synthetic(root: impl AsRef<Path>, per_class: usize, side: usize, seed: u64) -> Result<usize> {
    if per_class == 0 || side < 8 {
        return Err(Error::InvalidArgument(
            "synthetic set needs at least one image of side >= 8".into(),
        ));
    }
    let root = root.as_ref();
    for label in OriginLabel::ALL {
        let dir = root.join(label.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let img = synthetic_image(
                label,
                side,
                derive_seed(seed, "synthetic", &[label.index() as u64, i as u64]),
            );
            write_image(dir.join(format!("{i:04}.png")), &img)?;
        }
    }
    Ok(per_class * 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::contrast_stretch;

    #[test]
    fn channels_span_full_range() {
        for label in OriginLabel::ALL {
            for seed in 0..5 {
                let img = synthetic_image(label, 64, seed);
                for c in 0..3 {
                    let ch = img.channel(c);
                    assert_eq!(*ch.iter().min().unwrap(), 0, "{label} {seed}");
                    assert_eq!(*ch.iter().max().unwrap(), 255, "{label} {seed}");
                }
                assert_eq!(contrast_stretch(&img, 0.0).unwrap(), img);
            }
        }
    }

    #[test]
    fn blocks_are_constant() {
        let img = synthetic_image(OriginLabel::Cgg, 64, 3);
        for by in 0..8 {
            for bx in 0..8 {
                let p = img.pixel(bx * 8, by * 8);
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(img.pixel(bx * 8 + x, by * 8 + y), p);
                    }
                }
            }
        }
    }

    #[test]
    fn files_are_written_deterministically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(make_synthetic(a.path(), 2, 16, 7).unwrap(), 6);
        make_synthetic(b.path(), 2, 16, 7).unwrap();
        for label in OriginLabel::ALL {
            for i in 0..2 {
                let rel = format!("{}/{i:04}.png", label.name());
                assert_eq!(
                    std::fs::read(a.path().join(&rel)).unwrap(),
                    std::fs::read(b.path().join(&rel)).unwrap()
                );
            }
        }
    }
}
