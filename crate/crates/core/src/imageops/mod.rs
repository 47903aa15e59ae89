//! Raster primitives: color conversion, edges, geometry, resampling, lossy
//! compression and contrast stretching.

mod canny;
mod contrast;
mod geometry;
mod io;
mod jpeg;
mod resize;

pub use canny::{canny, EdgeMap, DEFAULT_HIGH_THRESHOLD, DEFAULT_LOW_THRESHOLD};
pub use contrast::contrast_stretch;
pub use geometry::{flip, rotate, Flip, Rotation};
pub use io::{read_image, write_image, write_pgm};
pub use jpeg::{jpeg_compress, psnr, scaled_quant_table, CHROMINANCE_BASE, LUMINANCE_BASE};
pub use resize::{bicubic_resize, keys_cubic};

use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageRGB8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageRGB8 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageRGB8({}x{})", self.width, self.height)
    }
}

impl ImageRGB8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive: {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape("image", "pixel bytes", width * height * 3, pixels.len()));
        }
        Ok(ImageRGB8 { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        ImageRGB8 {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        ImageRGB8 { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// One channel as a plane of bytes.
    pub fn channel(&self, c: usize) -> Vec<u8> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }

    /// Copy of the `side_w x side_h` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<ImageRGB8> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h} at ({x},{y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(ImageRGB8 {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Per-channel 256-bin histogram.
    pub fn histogram(&self) -> [[u64; 256]; 3] {
        let mut h = [[0u64; 256]; 3];
        for px in self.pixels.chunks(3) {
            for c in 0..3 {
                h[c][px[c] as usize] += 1;
            }
        }
        h
    }
}

/// Single-channel 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape("gray image", "pixel bytes", width * height, pixels.len()));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// `Y = round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &ImageRGB8) -> GrayImage {
    let pixels = img.pixels().chunks(3).map(|p| luma(p[0], p[1], p[2])).collect();
    GrayImage {
        width: img.width(),
        height: img.height(),
        pixels,
    }
}

#[inline]
pub(crate) fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}
