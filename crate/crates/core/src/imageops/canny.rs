use super::GrayImage;
use crate::error::{Error, Result};

pub const DEFAULT_LOW_THRESHOLD: f32 = 50.0;
pub const DEFAULT_HIGH_THRESHOLD: f32 = 100.0;

const SIGMA: f32 = 1.4;
const RADIUS: usize = 2;
const TIE_TOLERANCE: f32 = 1e-5;

/// Binary edge mask plus a summed-area table of edge counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    /// `(height + 1) x (width + 1)`; entry `(y, x)` counts edges in rows `< y`, columns `< x`.
    integral: Vec<u32>,
}

impl EdgeMap {
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), width * height);
        let stride = width + 1;
        let mut integral = vec![0u32; (height + 1) * stride];
        for y in 0..height {
            let mut row_sum = 0u32;
            for x in 0..width {
                row_sum += mask[y * width + x] as u32;
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row_sum;
            }
        }
        EdgeMap {
            width,
            height,
            mask,
            integral,
        }
    }

    /// Edge pixels strictly above-left of `(x, y)`.
    pub fn integral_at(&self, x: usize, y: usize) -> u32 {
        self.integral[y * (self.width + 1) + x]
    }

    /// Edge pixels in the `w x h` rectangle with top-left corner `(x, y)`.
    pub fn count(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        self.integral_at(x + w, y + h) + self.integral_at(x, y)
            - self.integral_at(x + w, y)
            - self.integral_at(x, y + h)
    }

    pub fn edge_count(&self) -> u32 {
        self.integral_at(self.width, self.height)
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }
}

fn gaussian_kernel() -> [f32; 2 * RADIUS + 1] {
    let mut k = [0f32; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f32 - RADIUS as f32;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable 5x5 Gaussian blur with clamp-to-edge borders.
fn blur(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width, img.height);
    let k = gaussian_kernel();
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - RADIUS as isize).clamp(0, w as isize - 1) as usize;
                acc += kv * img.pixels[y * w + xx] as f32;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - RADIUS as isize).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Canny edge detection: Gaussian blur (5x5, sigma 1.4), Sobel gradients,
/// non-maximum suppression along the quantized gradient direction, then
/// double-threshold hysteresis with 8-connectivity.
pub fn canny(gray: &GrayImage, low: f32, high: f32) -> Result<EdgeMap> {
    let (w, h) = (gray.width, gray.height);
    let min = 2 * RADIUS + 1;
    if w < min || h < min {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min,
        });
    }
    if !(low <= high) {
        return Err(Error::InvalidArgument(format!(
            "low threshold {low} exceeds high threshold {high}"
        )));
    }
    let blurred = blur(gray);
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        blurred[yy * w + xx]
    };
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    let mut mag = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }

    // Non-maximum suppression; the one-pixel frame is never an edge.
    let mut thin = vec![0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (a, b) = if !(22.5..157.5).contains(&angle) {
                (mag[i - 1], mag[i + 1])
            } else if angle < 67.5 {
                (mag[i - w - 1], mag[i + w + 1])
            } else if angle < 112.5 {
                (mag[i - w], mag[i + w])
            } else {
                (mag[i - w + 1], mag[i + w - 1])
            };
            // Mathematically equal neighbours (both sides of a symmetric step)
            // must tie, whatever the float rounding did to them.
            let m_tol = m * (1.0 + TIE_TOLERANCE);
            if m_tol >= a && m_tol >= b {
                thin[i] = m;
            }
        }
    }

    let mut mask = vec![false; w * h];
    let mut stack = Vec::new();
    for start in 0..w * h {
        if thin[start] >= high && !mask[start] {
            mask[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if !mask[j] && thin[j] >= low {
                            mask[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    Ok(EdgeMap::from_mask(w, h, mask))
}
