use super::ImageRGB8;
use crate::error::{Error, Result};

/// Per-channel linear stretch: the channel range is narrowed to
/// `[(1 + alpha) min, (1 - alpha) max]` and that interval is mapped onto
/// `[0, 255]` with clipping. A channel whose narrowed range is empty is left
/// as it is.
pub fn contrast_stretch(img: &ImageRGB8, alpha: f64) -> Result<ImageRGB8> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("contrast alpha {alpha} outside [0, 1)")));
    }
    let mut luts: [Option<[u8; 256]>; 3] = [None; 3];
    for (c, lut) in luts.iter_mut().enumerate() {
        let (lo, hi) = img
            .pixels()
            .iter()
            .skip(c)
            .step_by(3)
            .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let new_lo = (1.0 + alpha) * lo as f64;
        let new_hi = (1.0 - alpha) * hi as f64;
        if new_lo >= new_hi {
            log::warn!("contrast stretch: channel {c} is degenerate (range {lo}..{hi}, alpha {alpha}); left unchanged");
            continue;
        }
        let mut table = [0u8; 256];
        for (p, t) in table.iter_mut().enumerate() {
            *t = (255.0 * (p as f64 - new_lo) / (new_hi - new_lo))
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        *lut = Some(table);
    }
    let mut pixels = img.pixels().to_vec();
    for px in pixels.chunks_mut(3) {
        for c in 0..3 {
            if let Some(t) = &luts[c] {
                px[c] = t[px[c] as usize];
            }
        }
    }
    ImageRGB8::new(img.width(), img.height(), pixels)
}
