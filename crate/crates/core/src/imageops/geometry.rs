use serde::{Deserialize, Serialize};

use super::ImageRGB8;

/// Clockwise rotation by a multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Rotation> {
        match deg {
            90 => Some(Rotation::R90),
            180 => Some(Rotation::R180),
            270 => Some(Rotation::R270),
            _ => None,
        }
    }

    pub fn inverse(self) -> Rotation {
        match self {
            Rotation::R90 => Rotation::R270,
            Rotation::R180 => Rotation::R180,
            Rotation::R270 => Rotation::R90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flip {
    Horizontal,
    Vertical,
}

fn rotate90(img: &ImageRGB8) -> ImageRGB8 {
    let (w, h) = (img.width(), img.height());
    // source (x, y) lands at (h - 1 - y, x) in a h x w output
    ImageRGB8::from_fn(h, w, |nx, ny| img.pixel(ny, h - 1 - nx))
}

pub fn rotate(img: &ImageRGB8, rotation: Rotation) -> ImageRGB8 {
    let (w, h) = (img.width(), img.height());
    match rotation {
        Rotation::R90 => rotate90(img),
        Rotation::R180 => ImageRGB8::from_fn(w, h, |x, y| img.pixel(w - 1 - x, h - 1 - y)),
        Rotation::R270 => ImageRGB8::from_fn(h, w, |nx, ny| img.pixel(w - 1 - ny, nx)),
    }
}

pub fn flip(img: &ImageRGB8, axis: Flip) -> ImageRGB8 {
    let (w, h) = (img.width(), img.height());
    match axis {
        Flip::Horizontal => ImageRGB8::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y)),
        Flip::Vertical => ImageRGB8::from_fn(w, h, |x, y| img.pixel(x, h - 1 - y)),
    }
}
