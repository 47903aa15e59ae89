use super::ImageRGB8;
use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four taps per output coordinate: (first source index, weights).
fn taps(src_len: usize, dst_len: usize, factor: f64) -> Vec<([usize; 4], [f64; 4])> {
    (0..dst_len)
        .map(|o| {
            let s = (o as f64 + 0.5) / factor - 0.5;
            let base = s.floor();
            let frac = s - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let off = k as isize - 1;
                idx[k] = (base as isize + off).clamp(0, src_len as isize - 1) as usize;
                w[k] = keys_cubic(frac - off as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling; output extents are `round(extent * factor)`.
pub fn bicubic_resize(img: &ImageRGB8, factor: f64) -> Result<ImageRGB8> {
    if !(0.1..=10.0).contains(&factor) {
        return Err(Error::InvalidArgument(format!(
            "scale factor {factor} outside [0.1, 10]"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let nw = (w as f64 * factor).round() as usize;
    let nh = (h as f64 * factor).round() as usize;
    if nw < 1 || nh < 1 {
        return Err(Error::InvalidArgument(format!(
            "resizing {w}x{h} by {factor} gives an empty image"
        )));
    }
    let tx = taps(w, nw, factor);
    let ty = taps(h, nh, factor);

    let src = img.pixels();
    let mut horiz = vec![0f64; nw * h * 3];
    for y in 0..h {
        for (x, (idx, wt)) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * src[(y * w + idx[k]) * 3 + c] as f64;
                }
                horiz[(y * nw + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; nw * nh * 3];
    for (y, (idx, wt)) in ty.iter().enumerate() {
        for x in 0..nw {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * horiz[(idx[k] * nw + x) * 3 + c];
                }
                out[(y * nw + x) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageRGB8::new(nw, nh, out)
}
