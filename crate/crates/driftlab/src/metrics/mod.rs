//! Drift measurement: chromaticity histograms compared by optimal transport,
//! and embedding-space statistics (KID, FID squared, cosine similarity,
//! diversity) computed through a frozen feature embedder.

pub mod color;
pub mod embedder;
pub mod emd;
pub mod fid;
pub mod histogram;
pub mod kid;
pub mod similarity;
pub mod sinkhorn;

pub use color::{image_to_xy, pixel_to_xy, ChromaPoints, CHROMA_SUM_FLOOR};
pub use embedder::{
    decode_embedder, load_embedder, save_embedder, train_embedder, EmbedderConfig, FeatureEmbedder,
};
pub use emd::{emd_exact, emd_points, TransportPlan};
pub use fid::{fid, frechet_from_moments, COV_REGULARIZER};
pub use histogram::{chroma_histogram, ChromaHistogram, DEFAULT_RESOLUTION, DOMAIN};
pub use kid::{kid, poly3_kernel};
pub use similarity::{
    cosine, diversity, median, nearest_reference_similarity, quantile, summarize,
    SimilarityDistribution,
};
pub use sinkhorn::{sinkhorn, sinkhorn_points, SinkhornConfig};

use crate::error::Result;

/// Color drift index between two image sets: exact transport distance
/// between their pooled chromaticity histograms. Zero means identical
/// chroma usage; larger values mean the palette moved.
pub fn color_drift_index(
    images_a: &[Vec<f64>],
    images_b: &[Vec<f64>],
    resolution: usize,
) -> Result<f64> {
    let ha = chroma_histogram(images_a, resolution)?;
    let hb = chroma_histogram(images_b, resolution)?;
    Ok(emd_exact(&ha, &hb)?.cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_image(rgb: (f64, f64, f64), px: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(px * 3);
        for _ in 0..px {
            v.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        v
    }

    #[test]
    fn identical_sets_have_zero_drift() {
        let imgs = vec![flat_image((0.8, 0.2, 0.1), 16), flat_image((0.1, 0.6, 0.9), 16)];
        let cdi = color_drift_index(&imgs, &imgs, 16).unwrap();
        assert!(cdi.abs() < 1e-12, "cdi {cdi}");
    }

    #[test]
    fn red_versus_blue_matches_the_bin_center_distance() {
        // Pure red and pure blue each land in a single histogram bin, so the
        // transport distance is just the distance between those bin centers.
        let red = vec![flat_image((1.0, 0.0, 0.0), 16)];
        let blue = vec![flat_image((0.0, 0.0, 1.0), 16)];
        let hr = chroma_histogram(&red, 32).unwrap();
        let hb = chroma_histogram(&blue, 32).unwrap();
        let pr = hr.nonzero_bins();
        let pb = hb.nonzero_bins();
        assert_eq!(pr.len(), 1);
        assert_eq!(pb.len(), 1);
        let d = ((pr[0].0 .0 - pb[0].0 .0).powi(2) + (pr[0].0 .1 - pb[0].0 .1).powi(2)).sqrt();
        let cdi = color_drift_index(&red, &blue, 32).unwrap();
        assert!((cdi - d).abs() < 1e-12);
        assert!((cdi - 0.5595).abs() < 0.02, "cdi {cdi}");
    }

    #[test]
    fn drift_grows_with_palette_shift() {
        let base = vec![flat_image((0.9, 0.1, 0.1), 16)];
        let near = vec![flat_image((0.9, 0.25, 0.1), 16)];
        let far = vec![flat_image((0.1, 0.1, 0.9), 16)];
        let d_near = color_drift_index(&base, &near, 32).unwrap();
        let d_far = color_drift_index(&base, &far, 32).unwrap();
        assert!(d_near > 0.0);
        assert!(d_far > d_near);
    }
}
