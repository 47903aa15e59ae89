//! PNG and binary PPM (P6) reading and writing, plus a PGM (P5) writer for
//! single-channel output.

use std::io::{Cursor, Write};
use std::path::Path;

use super::{GrayImage, ImageRGB8};
use crate::error::{Error, Result};

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read a PNG or P6 PPM; the format is chosen by the file's magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageRGB8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else {
        Err(malformed(path, "not a PNG or binary PPM file"))
    }
}

/// Write as PNG or P6 PPM according to the extension (`.png`, `.ppm`).
pub fn write_image(path: impl AsRef<Path>, img: &ImageRGB8) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(path, img)?,
        "ppm" => encode_ppm(img),
        other => {
            return Err(Error::InvalidArgument(format!(
                "cannot write image with extension `{other}` (use .png or .ppm)"
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageRGB8> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| malformed(path, e.to_string()))?;
    let depth = reader.info().bit_depth;
    if depth == png::BitDepth::Sixteen {
        return Err(Error::UnsupportedDepth {
            path: path.to_path_buf(),
            detail: "16-bit PNG samples".into(),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| malformed(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let n = w * h;
    let buf = &buf[..info.buffer_size()];
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf[..n * 3].to_vec(),
        png::ColorType::Rgba => buf.chunks(4).take(n).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf[..n].iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks(2).take(n).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(malformed(path, "palette was not expanded")),
    };
    ImageRGB8::new(w, h, pixels).map_err(|e| malformed(path, e.to_string()))
}

fn encode_png(path: &Path, img: &ImageRGB8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fail = |e: png::EncodingError| malformed(path, e.to_string());
        let mut writer = enc.write_header().map_err(fail)?;
        writer.write_image_data(img.pixels()).map_err(fail)?;
        writer.finish().map_err(fail)?;
    }
    Ok(out)
}

fn encode_ppm(img: &ImageRGB8) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels().len() + 20);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).expect("writing to a Vec cannot fail");
    out.extend_from_slice(img.pixels());
    out
}

/// Netpbm header scanner: whitespace-separated decimal fields with `#` comments.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderScanner<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<ImageRGB8> {
    let mut s = HeaderScanner { bytes, pos: 2 };
    let width = s.number().ok_or_else(|| malformed(path, "bad or missing width"))?;
    let height = s.number().ok_or_else(|| malformed(path, "bad or missing height"))?;
    let maxval = s.number().ok_or_else(|| malformed(path, "bad or missing maxval"))?;
    if maxval != 255 {
        return Err(Error::UnsupportedDepth {
            path: path.to_path_buf(),
            detail: format!("PPM maxval {maxval} (only 255 is supported)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(malformed(path, format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(s.pos) {
        Some(c) if c.is_ascii_whitespace() => s.pos += 1,
        _ => return Err(malformed(path, "missing separator after header")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed(path, "image extents overflow"))?;
    let data = &bytes[s.pos..];
    if data.len() < need {
        return Err(malformed(
            path,
            format!("truncated raster: expected {need} bytes, found {}", data.len()),
        ));
    }
    ImageRGB8::new(width, height, data[..need].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> ImageRGB8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageRGB8::from_fn(w, h, |_, _| rng.gen())
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(1, 37, 23);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img, "{name}");
        }
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# made by hand\n2 1\n# depth\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn truncated_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(2, 10, 10);
        for name in ["t.png", "t.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let bytes = std::fs::read(&p).unwrap();
            std::fs::write(&p, &bytes[..bytes.len() - 40]).unwrap();
            assert!(matches!(read_image(&p), Err(Error::MalformedImage { .. })), "{name}");
        }
    }

    #[test]
    fn ppm_maxval_other_than_255_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ppm");
        let mut bytes = b"P6 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0; 6]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_image(&p), Err(Error::UnsupportedDepth { .. })));
    }

    #[test]
    fn sixteen_bit_png_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[7u8; 24]).unwrap();
        }
        std::fs::write(&p, out).unwrap();
        assert!(matches!(read_image(&p), Err(Error::UnsupportedDepth { .. })));
    }

    #[test]
    fn gray_and_alpha_pngs_become_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::GrayscaleAlpha);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[10, 255, 200, 0]).unwrap();
        }
        std::fs::write(&p, out).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.pixels(), &[10, 10, 10, 200, 200, 200]);
    }

    #[test]
    fn unknown_magic_and_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"hello").unwrap();
        assert!(matches!(read_image(&p), Err(Error::MalformedImage { .. })));
        assert!(write_image(dir.path().join("x.gif"), &random_image(3, 2, 2)).is_err());
    }

    #[test]
    fn pgm_writer_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        write_pgm(&p, &GrayImage::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 1, 2, 3, 4, 5]);
    }
}
