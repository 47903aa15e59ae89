//! Edge-weighted patch sampling: enumerate a grid of candidate windows, score
//! each by its edge-pixel count, and draw patches by roulette-wheel selection
//! without replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageops::{canny, to_grayscale, EdgeMap, ImageRGB8, DEFAULT_HIGH_THRESHOLD, DEFAULT_LOW_THRESHOLD};

pub const DEFAULT_PATCH_SIDE: usize = 224;
/// Candidate pool must hold at least this many patches per requested patch.
pub const POOL_FACTOR: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub x: usize,
    pub y: usize,
    /// Edge pixels inside the window.
    pub fitness: u32,
}

impl Candidate {
    pub fn weight(&self) -> u64 {
        self.fitness as u64 + 1
    }
}

fn grid_count(w: usize, h: usize, side: usize, stride: usize) -> usize {
    ((w - side) / stride + 1) * ((h - side) / stride + 1)
}

/// Largest stride whose grid still has `POOL_FACTOR * m` windows; 1 if none does.
pub fn choose_stride(w: usize, h: usize, side: usize, m: usize) -> Result<usize> {
    choose_stride_with(w, h, side, m, POOL_FACTOR)
}

/// [`choose_stride`] with an explicit candidate multiplier.
pub fn choose_stride_with(w: usize, h: usize, side: usize, m: usize, pool_factor: usize) -> Result<usize> {
    if w < side || h < side {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: side,
        });
    }
    if pool_factor == 0 {
        return Err(Error::InvalidArgument("candidate multiplier must be at least 1".into()));
    }
    let need = pool_factor.saturating_mul(m);
    let mut stride = 1;
    // grid_count is non-increasing in the stride
    while stride <= w.max(h) && grid_count(w, h, side, stride + 1) >= need {
        stride += 1;
    }
    Ok(stride)
}

/// All grid windows of side `side` at the chosen stride, with their fitness.
pub fn enumerate_candidates(edges: &EdgeMap, side: usize, m: usize) -> Result<(usize, Vec<Candidate>)> {
    enumerate_candidates_with(edges, side, m, POOL_FACTOR)
}

pub fn enumerate_candidates_with(
    edges: &EdgeMap,
    side: usize,
    m: usize,
    pool_factor: usize,
) -> Result<(usize, Vec<Candidate>)> {
    let (w, h) = (edges.width, edges.height);
    let stride = choose_stride_with(w, h, side, m, pool_factor)?;
    let mut out = Vec::with_capacity(grid_count(w, h, side, stride));
    for y in (0..=h - side).step_by(stride) {
        for x in (0..=w - side).step_by(stride) {
            out.push(Candidate {
                x,
                y,
                fitness: edges.count(x, y, side, side),
            });
        }
    }
    Ok((stride, out))
}

/// Binary indexed tree over u64 weights supporting point updates and
/// prefix-sum search.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Fenwick { tree }
    }

    fn total(&self) -> u64 {
        let mut i = self.tree.len() - 1;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    fn sub(&mut self, idx: usize, amount: u64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] -= amount;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `r`.
    fn find(&self, mut r: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= r {
                r -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Indices into the candidate list, in draw order.
    pub indices: Vec<usize>,
    /// Set when the pool was smaller than the request and some draws repeat.
    pub with_replacement: bool,
}

/// Draw `m` candidates with probability proportional to `fitness + 1`,
/// each draw excluding those already taken. If fewer than `m` candidates
/// exist, all are taken and the rest are drawn from the full wheel.
pub fn roulette_select(candidates: &[Candidate], m: usize, seed: u64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("roulette selection over an empty pool".into()));
    }
    let weights: Vec<u64> = candidates.iter().map(Candidate::weight).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wheel = Fenwick::new(&weights);
    let mut indices = Vec::with_capacity(m);
    let distinct = m.min(candidates.len());
    for _ in 0..distinct {
        let r = rng.gen_range(0..wheel.total());
        let i = wheel.find(r);
        wheel.sub(i, weights[i]);
        indices.push(i);
    }
    let with_replacement = m > candidates.len();
    if with_replacement {
        let full = Fenwick::new(&weights);
        let total = full.total();
        for _ in distinct..m {
            indices.push(full.find(rng.gen_range(0..total)));
        }
    }
    Ok(Selection {
        indices,
        with_replacement,
    })
}

/// Copy `side x side` windows at the given corners, in order.
pub fn crop_patches(img: &ImageRGB8, side: usize, corners: &[Candidate]) -> Result<Vec<ImageRGB8>> {
    corners.iter().map(|c| img.crop(c.x, c.y, side, side)).collect()
}

/// Per-image RNG seed: the first eight bytes (little-endian) of
/// SHA-256(global seed as LE bytes || image id).
pub fn image_seed(global_seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub candidate: Candidate,
    pub pixels: ImageRGB8,
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub source_id: String,
    pub side: usize,
    pub stride: usize,
    pub pool_size: usize,
    pub with_replacement: bool,
    pub patches: Vec<Patch>,
}

/// Full pipeline for one image: grayscale, Canny, candidate grid, roulette
/// draw, crop.
pub fn sample_patches(img: &ImageRGB8, image_id: &str, side: usize, m: usize, global_seed: u64) -> Result<PatchSet> {
    sample_patches_with(img, image_id, side, m, POOL_FACTOR, global_seed)
}

/// [`sample_patches`] with an explicit candidate multiplier.
pub fn sample_patches_with(
    img: &ImageRGB8,
    image_id: &str,
    side: usize,
    m: usize,
    pool_factor: usize,
    global_seed: u64,
) -> Result<PatchSet> {
    if m == 0 {
        return Err(Error::InvalidArgument("patch count must be positive".into()));
    }
    if img.width() < side || img.height() < side {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: side,
        });
    }
    let edges = canny(&to_grayscale(img), DEFAULT_LOW_THRESHOLD, DEFAULT_HIGH_THRESHOLD)?;
    let (stride, candidates) = enumerate_candidates_with(&edges, side, m, pool_factor)?;
    let sel = roulette_select(&candidates, m, image_seed(global_seed, image_id))?;
    let chosen: Vec<Candidate> = sel.indices.iter().map(|&i| candidates[i]).collect();
    let pixels = crop_patches(img, side, &chosen)?;
    if sel.with_replacement {
        log::warn!(
            "image {image_id}: only {} candidate windows for {m} patches; sampling with replacement",
            candidates.len()
        );
    }
    Ok(PatchSet {
        source_id: image_id.to_string(),
        side,
        stride,
        pool_size: candidates.len(),
        with_replacement: sel.with_replacement,
        patches: chosen
            .into_iter()
            .zip(pixels)
            .map(|(candidate, pixels)| Patch { candidate, pixels })
            .collect(),
    })
}
