//! PNG round trip for generated images.
//!
//! Generation writes PNGs; every metric downstream reads pixels back from
//! those PNGs. The quantization to u8 therefore happens exactly once, and a
//! resumed run scores the same bytes a fresh run does.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Interleaved RGB, row major, clamped to [0,1] and rounded to u8.
pub fn save_png(path: &Path, pixels: &[f64], h: usize, w: usize) -> Result<()> {
    if pixels.len() != h * w * 3 {
        return Err(Error::config(format!(
            "image has {} values, expected {}x{}x3",
            pixels.len(),
            h,
            w
        )));
    }
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer length checked above");
    img.save(path)
        .map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("png read {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok((pixels, h, w))
}

fn frame_name(i: usize) -> String {
    format!("{i:05}.png")
}

/// Writes `images` as 00000.png, 00001.png, ... into `dir`.
pub fn save_image_set(dir: &Path, images: &[Tensor], h: usize, w: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        save_png(&dir.join(frame_name(i)), img.data(), h, w)?;
    }
    Ok(())
}

/// Loads every *.png in `dir` in name order. Index-named sets load in the
/// order they were written.
pub fn load_image_set(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Dependency(format!("image set {} missing: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dependency(format!(
            "image set {} contains no png files",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    let mut dims: Option<(usize, usize)> = None;
    for p in &paths {
        let (pix, h, w) = load_png(p)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Format(format!(
                    "mixed image sizes in {}: {}x{} vs {}x{}",
                    dir.display(),
                    d.0,
                    d.1,
                    h,
                    w
                )))
            }
            _ => {}
        }
        out.push(pix);
    }
    Ok(out)
}
