//! Baseline JPEG loss without the entropy coder: color transform, 4:2:0
//! chroma averaging, 8x8 DCT quantization and reconstruction.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::ImageRGB8;
use crate::error::{Error, Result};

#[rustfmt::skip]
pub const LUMINANCE_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
pub const CHROMINANCE_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn check_quality(quality: u8) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!(
            "JPEG quality {quality} outside [1, 100]"
        )));
    }
    Ok(())
}

/// Quality-scaled quantization table, IJG convention.
pub fn scaled_quant_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    check_quality(quality)?;
    let q = quality as u32;
    let s = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * s + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

/// Orthonormal DCT-II basis, `basis[u][x]`.
fn basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0f64; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0f64; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0f64; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0f64; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Quantize and reconstruct a plane whose extents are multiples of 8.
fn requantize_plane(plane: &mut [u8], w: usize, h: usize, table: &[u16; 64]) {
    debug_assert!(w % 8 == 0 && h % 8 == 0);
    let mut block = [0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] as f64 - 128.0;
                }
            }
            let mut coef = dct2(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = q as f64;
                *c = (*c / q).round() * q;
            }
            let rec = idct2(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = (rec[y * 8 + x] + 128.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Pixel-level effect of baseline JPEG encoding at `quality` followed by decoding.
pub fn jpeg_compress(img: &ImageRGB8, quality: u8) -> Result<ImageRGB8> {
    let lq = scaled_quant_table(&LUMINANCE_BASE, quality)?;
    let cq = scaled_quant_table(&CHROMINANCE_BASE, quality)?;
    let (w, h) = (img.width(), img.height());
    // pad to whole 16x16 macroblocks by edge replication
    let pw = w.div_ceil(16) * 16;
    let ph = h.div_ceil(16) * 16;
    let mut yp = vec![0u8; pw * ph];
    let mut cb = vec![0f64; pw * ph];
    let mut cr = vec![0f64; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let [r, g, b] = img.pixel(x.min(w - 1), y.min(h - 1));
            let (r, g, b) = (r as f64, g as f64, b as f64);
            let i = y * pw + x;
            yp[i] = to_u8(0.299 * r + 0.587 * g + 0.114 * b);
            cb[i] = to_u8(-0.168736 * r - 0.331264 * g + 0.5 * b + 128.0) as f64;
            cr[i] = to_u8(0.5 * r - 0.418688 * g - 0.081312 * b + 128.0) as f64;
        }
    }
    let (cw, ch) = (pw / 2, ph / 2);
    let subsample = |full: &[f64]| -> Vec<u8> {
        let mut out = vec![0u8; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let s = full[2 * y * pw + 2 * x]
                    + full[2 * y * pw + 2 * x + 1]
                    + full[(2 * y + 1) * pw + 2 * x]
                    + full[(2 * y + 1) * pw + 2 * x + 1];
                out[y * cw + x] = to_u8(s / 4.0);
            }
        }
        out
    };
    let mut cbs = subsample(&cb);
    let mut crs = subsample(&cr);

    requantize_plane(&mut yp, pw, ph, &lq);
    requantize_plane(&mut cbs, cw, ch, &cq);
    requantize_plane(&mut crs, cw, ch, &cq);

    Ok(ImageRGB8::from_fn(w, h, |x, y| {
        let yy = yp[y * pw + x] as f64;
        let cbv = cbs[(y / 2) * cw + x / 2] as f64 - 128.0;
        let crv = crs[(y / 2) * cw + x / 2] as f64 - 128.0;
        [
            to_u8(yy + 1.402 * crv),
            to_u8(yy - 0.344136 * cbv - 0.714136 * crv),
            to_u8(yy + 1.772 * cbv),
        ]
    }))
}

/// Peak signal-to-noise ratio in dB; infinite for identical images.
pub fn psnr(a: &ImageRGB8, b: &ImageRGB8) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            "psnr",
            "image extents",
            a.width() * a.height(),
            b.width() * b.height(),
        ));
    }
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}
