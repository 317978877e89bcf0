//! sRGB to CIE xy chromaticity conversion (D65 reference).

use crate::error::{Error, Result};

/// Inverse sRGB companding: display-encoded value to linear intensity.
pub fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear RGB to XYZ, sRGB primaries with D65 white.
pub fn linear_rgb_to_xyz(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    (
        0.4124564 * r + 0.3575761 * g + 0.1804375 * b,
        0.2126729 * r + 0.7151522 * g + 0.0721750 * b,
        0.0193339 * r + 0.1191920 * g + 0.9503041 * b,
    )
}

/// Luminance floor below which a pixel has no meaningful chromaticity.
pub const CHROMA_SUM_FLOOR: f64 = 1e-6;

/// Chromaticity coordinates of one encoded sRGB pixel, or None for
/// near-black pixels whose x, y would be numerically meaningless.
pub fn pixel_to_xy(r: f64, g: f64, b: f64) -> Option<(f64, f64)> {
    let (x, y, z) = linear_rgb_to_xyz(srgb_decode(r), srgb_decode(g), srgb_decode(b));
    let s = x + y + z;
    if s < CHROMA_SUM_FLOOR {
        None
    } else {
        Some((x / s, y / s))
    }
}

#[derive(Clone, Debug, Default)]
pub struct ChromaPoints {
    pub points: Vec<(f64, f64)>,
    /// Near-black pixels dropped by the luminance floor.
    pub dropped: usize,
}

/// Converts a flat [r,g,b, r,g,b, ...] image in [0,1] to chromaticity
/// points. Values are expected display-encoded (as rendered or as loaded
/// back from PNG).
pub fn image_to_xy(pixels: &[f64]) -> Result<ChromaPoints> {
    if pixels.len() % 3 != 0 {
        return Err(Error::config(format!(
            "pixel buffer length {} is not a multiple of 3",
            pixels.len()
        )));
    }
    let mut out = ChromaPoints {
        points: Vec::with_capacity(pixels.len() / 3),
        dropped: 0,
    };
    for p in pixels.chunks_exact(3) {
        match pixel_to_xy(p[0], p[1], p[2]) {
            Some(xy) => out.points.push(xy),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}
