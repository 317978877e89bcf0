//! Chromaticity histograms over a fixed grid on the xy plane.

use serde::{Deserialize, Serialize};

use super::color::image_to_xy;
use crate::error::{Error, Result};

/// Domain covering the sRGB gamut with margin; the visible locus lives well
/// inside [0, 0.8] on both axes.
pub const DOMAIN: (f64, f64) = (0.0, 0.8);
pub const DEFAULT_RESOLUTION: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromaHistogram {
    pub resolution: usize,
    /// Row-major mass grid: index = iy * resolution + ix.
    pub mass: Vec<f64>,
    /// Pixels dropped for having no chromaticity (near-black).
    pub dropped: usize,
    /// Points outside the domain, clamped into edge bins.
    pub clamped: usize,
    pub total_points: usize,
}

impl ChromaHistogram {
    pub fn bin_center(&self, idx: usize) -> (f64, f64) {
        let (lo, hi) = DOMAIN;
        let w = (hi - lo) / self.resolution as f64;
        let ix = idx % self.resolution;
        let iy = idx / self.resolution;
        (lo + (ix as f64 + 0.5) * w, lo + (iy as f64 + 0.5) * w)
    }

    pub fn bins(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Occupied bins as (center, mass), in index order.
    pub fn nonzero_bins(&self) -> Vec<((f64, f64), f64)> {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, &m)| (self.bin_center(i), m))
            .collect()
    }
}

/// Pools every pixel of every image into one normalized histogram.
/// Out-of-domain chromaticities clamp to the nearest edge bin and are
/// counted; an input with no usable pixels at all is degenerate.
pub fn chroma_histogram(images: &[Vec<f64>], resolution: usize) -> Result<ChromaHistogram> {
    if resolution == 0 || resolution > 1024 {
        return Err(Error::config(format!(
            "histogram resolution {resolution} outside [1,1024]"
        )));
    }
    if images.is_empty() {
        return Err(Error::DegenerateInput("no images to histogram".into()));
    }
    let (lo, hi) = DOMAIN;
    let w = (hi - lo) / resolution as f64;
    let mut mass = vec![0.0f64; resolution * resolution];
    let mut dropped = 0usize;
    let mut clamped = 0usize;
    let mut total = 0usize;

    for img in images {
        let pts = image_to_xy(img)?;
        dropped += pts.dropped;
        for (x, y) in pts.points {
            let exact_in = (lo..hi).contains(&x) && (lo..hi).contains(&y);
            if !exact_in {
                clamped += 1;
            }
            let ix = (((x - lo) / w).floor() as i64).clamp(0, resolution as i64 - 1) as usize;
            let iy = (((y - lo) / w).floor() as i64).clamp(0, resolution as i64 - 1) as usize;
            mass[iy * resolution + ix] += 1.0;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::DegenerateInput(
            "every pixel was dropped; nothing to histogram".into(),
        ));
    }
    let norm = total as f64;
    for m in mass.iter_mut() {
        *m /= norm;
    }
    Ok(ChromaHistogram {
        resolution,
        mass,
        dropped,
        clamped,
        total_points: total,
    })
}
