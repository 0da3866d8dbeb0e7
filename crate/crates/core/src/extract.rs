//! Feature extraction pipeline: samples → pooled global/region features,
//! ready for the cache.

use crate::data::Sample;
use crate::error::Result;
use crate::features::{
    encode, pool_region, GlobalFeatures, RegionFeatures, SampleFeatures, ToyEncoders,
};
use crate::masks::{downsample_mask, rle_decode};
use crate::parallel;

/// Encode both modalities and pool every region on both patch grids.
pub fn compute_sample_features(
    sample: &Sample,
    encoders: &ToyEncoders,
    mask_threshold: f64,
) -> Result<SampleFeatures> {
    let (global_rgb, patches_rgb) = encode(&sample.rgb_image(), &encoders.rgb)?;
    let (global_depth, patches_depth) = encode(&sample.depth_image(), &encoders.depth)?;
    let rgb_grid = encoders.rgb.config.patch_grid();
    let depth_grid = encoders.depth.config.patch_grid();

    let mut regions = Vec::with_capacity(sample.regions.len());
    for (j, annotation) in sample.regions.iter().enumerate() {
        let pixels = rle_decode(&annotation.mask())?;
        let rgb_idx = downsample_mask(&pixels, j, &rgb_grid, mask_threshold)?;
        let depth_idx = downsample_mask(&pixels, j, &depth_grid, mask_threshold)?;
        regions.push(RegionFeatures {
            rgb: pool_region(&patches_rgb, &rgb_idx)?,
            depth: pool_region(&patches_depth, &depth_idx)?,
        });
    }
    Ok(SampleFeatures {
        global: GlobalFeatures { rgb: global_rgb, depth: global_depth },
        regions,
    })
}

/// Extract features for a whole dataset, in parallel when enabled.
/// Output order matches input order.
pub fn extract_features(
    samples: &[Sample],
    encoders: &ToyEncoders,
    mask_threshold: f64,
) -> Result<Vec<(String, SampleFeatures)>> {
    parallel::map_indexed(samples.len(), |i| {
        compute_sample_features(&samples[i], encoders, mask_threshold)
            .map(|f| (samples[i].id.clone(), f))
    })
    .into_iter()
    .collect()
}

/// Always-sequential counterpart of [`extract_features`]; same output.
pub fn extract_features_sequential(
    samples: &[Sample],
    encoders: &ToyEncoders,
    mask_threshold: f64,
) -> Result<Vec<(String, SampleFeatures)>> {
    parallel::seq_map_indexed(samples.len(), |i| {
        compute_sample_features(&samples[i], encoders, mask_threshold)
            .map(|f| (samples[i].id.clone(), f))
    })
    .into_iter()
    .collect()
}
