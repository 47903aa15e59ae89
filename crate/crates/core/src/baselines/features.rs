use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{to_grayscale, ImageRGB8};

pub const HISTOGRAM_BINS: usize = 7;
pub const SATURATION_DIM: usize = 8;
/// 27 triples per direction, two directions, three channels.
pub const COOCCURRENCE_DIM: usize = 162;
const TRIPLE_BINS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Histogram,
    Saturation,
    Cooccurrence,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::Histogram,
        FeatureKind::Saturation,
        FeatureKind::Cooccurrence,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Histogram => HISTOGRAM_BINS,
            FeatureKind::Saturation => SATURATION_DIM,
            FeatureKind::Cooccurrence => COOCCURRENCE_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Histogram => "histogram",
            FeatureKind::Saturation => "saturation",
            FeatureKind::Cooccurrence => "cooccurrence",
        }
    }

    /// Feature vectors extracted per image: one per channel for the
    /// histogram, a single one otherwise.
    pub fn extract(self, img: &ImageRGB8) -> Result<Vec<FeatureVector>> {
        match self {
            FeatureKind::Histogram => (0..3).map(|c| histogram_feature(img, c)).collect(),
            FeatureKind::Saturation => Ok(vec![saturation_feature(img)]),
            FeatureKind::Cooccurrence => Ok(vec![cooccurrence_feature(img)?]),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "histogram" | "hist" => Ok(FeatureKind::Histogram),
            "saturation" | "sat" => Ok(FeatureKind::Saturation),
            "cooccurrence" | "co-occurrence" | "cooc" => Ok(FeatureKind::Cooccurrence),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline {other:?} (expected histogram, saturation or cooccurrence)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Normalised 7-bin histogram of one channel, bin = floor(v * 7 / 256).
pub fn histogram_feature(img: &ImageRGB8, channel: usize) -> Result<FeatureVector> {
    if channel >= 3 {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} is not one of R, G, B"
        )));
    }
    let mut counts = [0u64; HISTOGRAM_BINS];
    for v in img.channel(channel) {
        counts[v as usize * HISTOGRAM_BINS / 256] += 1;
    }
    let n = (img.width() * img.height()) as f64;
    Ok(FeatureVector {
        kind: FeatureKind::Histogram,
        values: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Grayscale frequencies of levels 0..=3 then 252..=255.
pub fn saturation_feature(img: &ImageRGB8) -> FeatureVector {
    let gray = to_grayscale(img);
    let mut counts = [0u64; SATURATION_DIM];
    for &v in &gray.pixels {
        match v {
            0..=3 => counts[v as usize] += 1,
            252..=255 => counts[v as usize - 248] += 1,
            _ => {}
        }
    }
    let n = gray.pixels.len() as f64;
    FeatureVector {
        kind: FeatureKind::Saturation,
        values: counts.iter().map(|&c| c as f64 / n).collect(),
    }
}

fn truncated_diff(a: u8, b: u8) -> usize {
    ((b as i32 - a as i32).clamp(-1, 1) + 1) as usize
}

fn triple_bin(d: [usize; 3]) -> usize {
    d[0] * 9 + d[1] * 3 + d[2]
}

/// Per channel: order-3 co-occurrence of truncated horizontal differences
/// along rows, then of truncated vertical differences along columns.
/// Each 27-bin block sums to one.
pub fn cooccurrence_feature(img: &ImageRGB8) -> Result<FeatureVector> {
    let (w, h) = (img.width(), img.height());
    if w < 4 || h < 4 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 4,
        });
    }
    let mut values = Vec::with_capacity(COOCCURRENCE_DIM);
    for c in 0..3 {
        let ch = img.channel(c);
        let at = |x: usize, y: usize| ch[y * w + x];

        let mut block = [0u64; TRIPLE_BINS];
        for y in 0..h {
            let d: Vec<usize> = (0..w - 1).map(|x| truncated_diff(at(x, y), at(x + 1, y))).collect();
            for t in d.windows(3) {
                block[triple_bin([t[0], t[1], t[2]])] += 1;
            }
        }
        let n = (h * (w - 3)) as f64;
        values.extend(block.iter().map(|&k| k as f64 / n));

        let mut block = [0u64; TRIPLE_BINS];
        for x in 0..w {
            let d: Vec<usize> = (0..h - 1).map(|y| truncated_diff(at(x, y), at(x, y + 1))).collect();
            for t in d.windows(3) {
                block[triple_bin([t[0], t[1], t[2]])] += 1;
            }
        }
        let n = (w * (h - 3)) as f64;
        values.extend(block.iter().map(|&k| k as f64 / n));
    }
    Ok(FeatureVector {
        kind: FeatureKind::Cooccurrence,
        values,
    })
}
