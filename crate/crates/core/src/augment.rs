//! Six-fold geometric expansion of training patches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{flip, rotate, Flip, ImageRGB8, Rotation};

pub const VARIANT_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    HFlip,
    VFlip,
}

impl Variant {
    pub const ALL: [Variant; VARIANT_COUNT] = [
        Variant::Identity,
        Variant::Rot90,
        Variant::Rot180,
        Variant::Rot270,
        Variant::HFlip,
        Variant::VFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Identity => "identity",
            Variant::Rot90 => "rot90",
            Variant::Rot180 => "rot180",
            Variant::Rot270 => "rot270",
            Variant::HFlip => "hflip",
            Variant::VFlip => "vflip",
        }
    }

    pub fn apply(self, img: &ImageRGB8) -> ImageRGB8 {
        match self {
            Variant::Identity => img.clone(),
            Variant::Rot90 => rotate(img, Rotation::R90),
            Variant::Rot180 => rotate(img, Rotation::R180),
            Variant::Rot270 => rotate(img, Rotation::R270),
            Variant::HFlip => flip(img, Flip::Horizontal),
            Variant::VFlip => flip(img, Flip::Vertical),
        }
    }

    pub fn inverse(self) -> Variant {
        match self {
            Variant::Rot90 => Variant::Rot270,
            Variant::Rot270 => Variant::Rot90,
            other => other,
        }
    }
}

/// The six variants of a square patch, in [`Variant::ALL`] order.
pub fn expand(patch: &ImageRGB8) -> Result<Vec<(Variant, ImageRGB8)>> {
    if patch.width() != patch.height() {
        return Err(Error::InvalidArgument(format!(
            "augmentation needs a square patch, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    Ok(Variant::ALL.iter().map(|&v| (v, v.apply(patch))).collect())
}

/// Number of training samples produced from `images` images with `m` patches each.
pub fn training_sample_count(images: usize, m: usize) -> usize {
    images * m * VARIANT_COUNT
}
