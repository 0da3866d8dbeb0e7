//! Global and per-patch feature extraction for both modalities, region
//! pooling, and the on-disk feature cache.
//!
//! The encoders here are deliberately small stand-ins for the usual frozen
//! vision backbones: patchify, one linear projection per patch, and a
//! learned linear map of the mean patch embedding as the global summary.
//! They are pure functions of their (seeded, frozen) weights, which is what
//! makes the cache-vs-recompute equivalence testable to the last bit.

pub mod cache;

use crate::error::{Error, Result};
use crate::masks::{PatchGrid, RegionIndexSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix used for frozen (non-tape) feature math.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Rgb,
    Depth,
}

/// Geometry and width of one modality branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityEncoderConfig {
    pub modality: Modality,
    /// Square input resolution in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
}

impl ModalityEncoderConfig {
    pub fn rgb_default() -> Self {
        Self { modality: Modality::Rgb, image_size: 224, patch_size: 14, embed_dim: 32 }
    }

    pub fn depth_default() -> Self {
        Self { modality: Modality::Depth, image_size: 384, patch_size: 16, embed_dim: 32 }
    }

    /// Patches per side; 16 for the RGB default, 24 for the depth default.
    pub fn grid_side(&self) -> usize {
        debug_assert!(self.image_size.is_multiple_of(self.patch_size));
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_grid(&self) -> PatchGrid {
        PatchGrid::square(self.grid_side(), self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0
            || self.patch_size == 0
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }
}

/// A raw image plane stack: `channels × height × width`, channel-major.
#[derive(Clone, Debug)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }
}

/// Frozen weights of one toy encoder branch. Biases are zero, so the
/// encoder is an exactly linear (homogeneous) map of the image.
#[derive(Clone, Debug)]
pub struct EncoderWeights {
    pub config: ModalityEncoderConfig,
    w_patch: Matrix,
    w_global: Matrix,
}

/// Both frozen branches, derived deterministically from a seed.
#[derive(Clone, Debug)]
pub struct ToyEncoders {
    pub rgb: EncoderWeights,
    pub depth: EncoderWeights,
}

const ENCODER_RNG_STREAM: u64 = 0xEC;

impl ToyEncoders {
    pub fn seeded(rgb: ModalityEncoderConfig, depth: ModalityEncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENCODER_RNG_STREAM);
        Self {
            rgb: EncoderWeights::init(rgb, &mut rng),
            depth: EncoderWeights::init(depth, &mut rng),
        }
    }
}

impl EncoderWeights {
    fn init(config: ModalityEncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let patch_dim = 3 * config.patch_size * config.patch_size;
        Self {
            config,
            w_patch: random_matrix(rng, patch_dim, config.embed_dim),
            w_global: random_matrix(rng, config.embed_dim, config.embed_dim),
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    use rand::Rng;
    let scale = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            // Box-Muller keeps us off rand_distr for two lines of math
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * scale
        })
        .collect();
    Matrix { rows, cols, data }
}

/// `[CLS]`-style global summary of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeatures {
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
}

/// Last-layer patch embeddings of both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbeddings {
    pub rgb: Matrix,
    pub depth: Matrix,
}

/// Pooled features of one region in both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatures {
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
}

/// Everything the model needs per sample once images are out of the picture.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFeatures {
    pub global: GlobalFeatures,
    pub regions: Vec<RegionFeatures>,
}

/// Encode one modality: patchify, project each patch, and summarize.
///
/// RGB input must have 3 channels; depth input is single-channel and gets
/// replicated across three channels before patchification.
pub fn encode(image: &Image, enc: &EncoderWeights) -> Result<(Vec<f64>, Matrix)> {
    let cfg = &enc.config;
    cfg.validate()?;
    let expected_channels = match cfg.modality {
        Modality::Rgb => 3,
        Modality::Depth => 1,
    };
    if image.channels != expected_channels {
        return Err(Error::Config(format!(
            "{:?} encoder expects {} channel(s), image has {}",
            cfg.modality, expected_channels, image.channels
        )));
    }
    if image.height != cfg.image_size || image.width != cfg.image_size {
        return Err(Error::Config(format!(
            "{:?} encoder expects {}x{} pixels, image is {}x{}",
            cfg.modality, cfg.image_size, cfg.image_size, image.height, image.width
        )));
    }

    let p = cfg.patch_size;
    let g = cfg.grid_side();
    let n = g * g;
    let d = cfg.embed_dim;
    let patch_dim = 3 * p * p;

    let mut patches = Matrix::zeros(n, d);
    let mut flat = vec![0.0; patch_dim];
    for pr in 0..g {
        for pc in 0..g {
            // flatten the patch pixels channel-major, replicating depth to 3
            let mut k = 0;
            for c in 0..3 {
                let src_c = if image.channels == 1 { 0 } else { c };
                for r in pr * p..(pr + 1) * p {
                    for col in pc * p..(pc + 1) * p {
                        flat[k] = image.get(src_c, r, col);
                        k += 1;
                    }
                }
            }
            let out = &mut patches.data[(pr * g + pc) * d..(pr * g + pc + 1) * d];
            for (i, &x) in flat.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wrow = enc.w_patch.row(i);
                for j in 0..d {
                    out[j] += x * wrow[j];
                }
            }
        }
    }

    // global summary: mean patch embedding through the global projection
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += patches.data[r * d + j];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut global = vec![0.0; d];
    for (i, &m) in mean.iter().enumerate() {
        let wrow = enc.w_global.row(i);
        for (g, w) in global.iter_mut().zip(wrow) {
            *g += m * w;
        }
    }
    Ok((global, patches))
}

/// Exact arithmetic mean of the selected patch rows: sum in ascending index
/// order, then one division.
pub fn pool_region(patches: &Matrix, indices: &RegionIndexSet) -> Result<Vec<f64>> {
    if indices.indices.is_empty() {
        return Err(Error::EmptyIndexSet("pool_region"));
    }
    for &i in &indices.indices {
        if i >= patches.rows {
            return Err(Error::IndexOutOfRange {
                what: "pool_region",
                index: i,
                size: patches.rows,
            });
        }
    }
    let d = patches.cols;
    let mut out = vec![0.0; d];
    for &i in &indices.indices {
        let row = patches.row(i);
        for j in 0..d {
            out[j] += row[j];
        }
    }
    let n = indices.indices.len() as f64;
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}
