//! Run-length encoded region masks and their projection onto patch grids.
//!
//! RLE counts follow the COCO convention: alternating background/foreground
//! run lengths over the mask flattened in column-major order, first run
//! background (possibly zero-length).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// RLE-encoded binary mask. `size` is `(height, width)` in pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub size: (usize, usize),
    pub counts: Vec<u32>,
}

/// Decoded binary mask, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![false; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn count_foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Nearest-neighbor resize; keeps the mask binary.
    pub fn resize(&self, height: usize, width: usize) -> PixelMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = PixelMask::new(height, width);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }
}

/// A grid of non-overlapping patches over an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    /// (rows, cols) of patches.
    pub grid_size: (usize, usize),
    /// Native pixel resolution the grid tiles exactly: `grid · patch`.
    pub image_size: (usize, usize),
    /// (height, width) of one patch in pixels.
    pub patch_size: (usize, usize),
}

impl PatchGrid {
    /// Square grid: `n × n` patches of `p × p` pixels.
    pub fn square(n: usize, p: usize) -> Self {
        Self { grid_size: (n, n), image_size: (n * p, n * p), patch_size: (p, p) }
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size.0 * self.grid_size.1
    }
}

/// The patch indices a region occupies on one modality's grid,
/// sorted ascending in row-major grid order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionIndexSet {
    pub region_id: usize,
    pub indices: Vec<usize>,
}

/// Expand an RLE mask into pixels (column-major run order).
pub fn rle_decode(mask: &RleMask) -> Result<PixelMask> {
    let (h, w) = mask.size;
    let total: usize = mask.counts.iter().map(|&c| c as usize).sum();
    if total != h * w {
        return Err(Error::MalformedRle { got: total, expected: h * w, height: h, width: w });
    }
    let mut out = PixelMask::new(h, w);
    let mut pos = 0usize;
    let mut foreground = false;
    for &run in &mask.counts {
        for _ in 0..run {
            if foreground {
                // column-major: pos = col·H + row
                let col = pos / h;
                let row = pos % h;
                out.set(row, col, true);
            }
            pos += 1;
        }
        foreground = !foreground;
    }
    Ok(out)
}

/// Inverse of [`rle_decode`]: exact round-trip on any binary grid.
pub fn rle_encode(pixels: &PixelMask) -> RleMask {
    let (h, w) = (pixels.height, pixels.width);
    let mut counts = Vec::new();
    let mut current = false; // first run counts background
    let mut run = 0u32;
    for pos in 0..h * w {
        let col = pos / h;
        let row = pos % h;
        let v = pixels.get(row, col);
        if v == current {
            run += 1;
        } else {
            counts.push(run);
            current = v;
            run = 1;
        }
    }
    counts.push(run);
    if counts.is_empty() {
        counts.push(0);
    }
    RleMask { size: (h, w), counts }
}

/// Project a pixel mask onto a patch grid.
///
/// The mask is nearest-neighbor resized to the grid's native resolution,
/// then patch `i` is kept iff at least `threshold` of its pixels are
/// foreground. If no patch clears the threshold the single best-covered
/// patch is kept (ties broken toward the lowest index) so the result is
/// never empty. A mask with no foreground pixels at all cannot be grounded
/// and is an error.
pub fn downsample_mask(
    pixels: &PixelMask,
    region_id: usize,
    grid: &PatchGrid,
    threshold: f64,
) -> Result<RegionIndexSet> {
    if pixels.count_foreground() == 0 {
        return Err(Error::EmptyRegion);
    }
    let resized = pixels.resize(grid.image_size.0, grid.image_size.1);
    let (gr, gc) = grid.grid_size;
    let (ph, pw) = grid.patch_size;
    let patch_area = (ph * pw) as f64;

    let mut indices = Vec::new();
    let mut best = (0usize, -1.0f64);
    for pr in 0..gr {
        for pc in 0..gc {
            let mut fg = 0usize;
            for r in pr * ph..(pr + 1) * ph {
                for c in pc * pw..(pc + 1) * pw {
                    if resized.get(r, c) {
                        fg += 1;
                    }
                }
            }
            let coverage = fg as f64 / patch_area;
            let idx = pr * gc + pc;
            if coverage >= threshold {
                indices.push(idx);
            }
            if coverage > best.1 {
                best = (idx, coverage);
            }
        }
    }
    if indices.is_empty() {
        indices.push(best.0);
    }
    Ok(RegionIndexSet { region_id, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_full_mask() {
        let m = RleMask { size: (2, 2), counts: vec![0, 4] };
        let px = rle_decode(&m).unwrap();
        assert_eq!(px.count_foreground(), 4);
    }

    #[test]
    fn decode_hand_expanded_runs() {
        // [1,1,2,0]: bg 1, fg 1, bg 2, fg 0 → only column-major position 1 set
        let m = RleMask { size: (2, 2), counts: vec![1, 1, 2, 0] };
        let px = rle_decode(&m).unwrap();
        assert_eq!(px.pixels, vec![false, false, true, false]); // (1,0) is cm position 1
        // [1,1,0,2]: bg 1, fg 1, bg 0, fg 2 → positions 1, 2, 3 set
        let m = RleMask { size: (2, 2), counts: vec![1, 1, 0, 2] };
        let px = rle_decode(&m).unwrap();
        assert!(px.get(1, 0) && px.get(0, 1) && px.get(1, 1));
        assert!(!px.get(0, 0));
    }

    #[test]
    fn decode_all_background() {
        let m = RleMask { size: (3, 3), counts: vec![9] };
        let px = rle_decode(&m).unwrap();
        assert_eq!(px.count_foreground(), 0);
    }

    #[test]
    fn decode_rejects_bad_total() {
        let m = RleMask { size: (2, 2), counts: vec![1, 2] };
        assert!(matches!(rle_decode(&m), Err(Error::MalformedRle { .. })));
    }

    #[test]
    fn encode_empty_and_full() {
        let empty = PixelMask::new(3, 3);
        assert_eq!(rle_encode(&empty).counts, vec![9]);
        let mut full = PixelMask::new(3, 3);
        full.pixels.iter_mut().for_each(|p| *p = true);
        assert_eq!(rle_encode(&full).counts, vec![0, 9]);
    }

    #[test]
    fn column_major_order() {
        // pixel (row 1, col 0) of a 2x2 grid is column-major position 1
        let mut px = PixelMask::new(2, 2);
        px.set(1, 0, true);
        let m = rle_encode(&px);
        assert_eq!(m.counts, vec![1, 1, 2]);
    }

    #[test]
    fn downsample_aligned_patch() {
        // mask exactly covering patch (2, 3) of a 16x16 grid over 224x224
        let grid = PatchGrid::square(16, 14);
        let mut px = PixelMask::new(224, 224);
        for r in 2 * 14..3 * 14 {
            for c in 3 * 14..4 * 14 {
                px.set(r, c, true);
            }
        }
        let set = downsample_mask(&px, 0, &grid, 0.5).unwrap();
        assert_eq!(set.indices, vec![2 * 16 + 3]);
    }

    #[test]
    fn downsample_left_half() {
        let grid = PatchGrid::square(16, 14);
        let mut px = PixelMask::new(224, 224);
        for r in 0..224 {
            for c in 0..112 {
                px.set(r, c, true);
            }
        }
        let set = downsample_mask(&px, 0, &grid, 0.5).unwrap();
        assert_eq!(set.indices.len(), 128);
        // independent oracle: per-patch coverage by direct counting
        for pr in 0..16 {
            for pc in 0..8 {
                assert!(set.indices.contains(&(pr * 16 + pc)));
            }
        }
    }

    #[test]
    fn downsample_single_pixel_falls_back_to_best_patch() {
        let grid = PatchGrid::square(16, 14);
        let mut px = PixelMask::new(224, 224);
        px.set(100, 200, true); // patch row 100/14 = 7, col 200/14 = 14
        let set = downsample_mask(&px, 3, &grid, 0.5).unwrap();
        assert_eq!(set.indices, vec![7 * 16 + 14]);
        assert_eq!(set.region_id, 3);
    }

    #[test]
    fn downsample_empty_mask_is_error() {
        let grid = PatchGrid::square(4, 4);
        let px = PixelMask::new(16, 16);
        assert!(matches!(downsample_mask(&px, 0, &grid, 0.5), Err(Error::EmptyRegion)));
    }

    #[test]
    fn downsample_resizes_to_other_grid() {
        // left half of a 224x224 mask lands on the left half of a 24x24 depth grid
        let grid = PatchGrid::square(24, 16);
        let mut px = PixelMask::new(224, 224);
        for r in 0..224 {
            for c in 0..112 {
                px.set(r, c, true);
            }
        }
        let set = downsample_mask(&px, 0, &grid, 0.5).unwrap();
        assert_eq!(set.indices.len(), 12 * 24);
    }

    fn arb_mask() -> impl Strategy<Value = PixelMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |pixels| PixelMask { height: h, width: w, pixels })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn roundtrip_is_identity(px in arb_mask()) {
            let rle = rle_encode(&px);
            let back = rle_decode(&rle).unwrap();
            prop_assert_eq!(&back, &px);
            // and decode∘encode again from the RLE side
            let rle2 = rle_encode(&back);
            prop_assert_eq!(rle2, rle);
        }

        #[test]
        fn growing_mask_never_drops_indices(px in arb_mask(), extra in 0usize..30) {
            // monotone for fixed threshold when neither side takes the fallback branch
            prop_assume!(px.count_foreground() > 0);
            let grid = PatchGrid::square(3, 2);
            let before = downsample_mask(&px, 0, &grid, 0.5).unwrap();
            let before_thresholded =
                before.indices.iter().all(|&i| coverage_of(&px, &grid, i) >= 0.5);
            prop_assume!(before_thresholded);
            let mut grown = px.clone();
            let n = grown.pixels.len();
            for i in 0..extra {
                let idx = (i * 7919) % n;
                grown.pixels[idx] = true;
            }
            let after = downsample_mask(&grown, 0, &grid, 0.5).unwrap();
            for idx in &before.indices {
                prop_assert!(after.indices.contains(idx));
            }
        }

        #[test]
        fn indices_independent_of_rle_representation(px in arb_mask()) {
            prop_assume!(px.count_foreground() > 0);
            // two representations: canonical, and one with a zero-length run spliced in
            let rle = rle_encode(&px);
            let mut padded = rle.clone();
            padded.counts.push(0);
            let a = rle_decode(&rle).unwrap();
            let b = rle_decode(&padded).unwrap();
            prop_assert_eq!(&a, &b);
            let grid = PatchGrid::square(2, 3);
            let sa = downsample_mask(&a, 0, &grid, 0.5).unwrap();
            let sb = downsample_mask(&b, 0, &grid, 0.5).unwrap();
            prop_assert_eq!(sa, sb);
        }
    }

    fn coverage_of(px: &PixelMask, grid: &PatchGrid, idx: usize) -> f64 {
        let resized = px.resize(grid.image_size.0, grid.image_size.1);
        let (_, gc) = grid.grid_size;
        let (ph, pw) = grid.patch_size;
        let (pr, pc) = (idx / gc, idx % gc);
        let mut fg = 0usize;
        for r in pr * ph..(pr + 1) * ph {
            for c in pc * pw..(pc + 1) * pw {
                if resized.get(r, c) {
                    fg += 1;
                }
            }
        }
        fg as f64 / (ph * pw) as f64
    }
}
