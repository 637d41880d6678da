use std::path::Path;

use image::{DynamicImage, ImageBuffer as RasterBuffer, Luma, Rgb};

use super::IoError;
use crate::matching::ImageBuffer;

/// Loads an 8- or 16-bit grayscale or colour raster as single-channel
/// intensities in `[0, 1]` (Rec. 709 luma for colour input).
pub fn load_image(path: &Path) -> Result<ImageBuffer<f64>, IoError> {
    let img = image::open(path).map_err(|e| IoError::invalid(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => {
            let rgb = other.to_rgb32f();
            rgb.pixels()
                .map(|p| (0.2126 * p.0[0] as f64 + 0.7152 * p.0[1] as f64 + 0.0722 * p.0[2] as f64).clamp(0.0, 1.0))
                .collect()
        }
    };
    ImageBuffer::new(w, h, 1, pixels).map_err(|e| IoError::invalid(path, e.to_string()))
}

/// Saves the first channel as a 16-bit grayscale PNG.
pub fn save_image_png16(path: &Path, img: &ImageBuffer<f64>) -> Result<(), IoError> {
    let gray = img.to_gray();
    let raw: Vec<u16> = gray.iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: RasterBuffer<Luma<u16>, Vec<u16>> = RasterBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| IoError::invalid(path, "buffer size"))?;
    ensure_parent(path)?;
    buf.save(path).map_err(|e| IoError::invalid(path, e.to_string()))
}

pub fn save_preview_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), IoError> {
    let buf: RasterBuffer<Rgb<u8>, Vec<u8>> = RasterBuffer::from_raw(width as u32, height as u32, rgb.to_vec())
        .ok_or_else(|| IoError::invalid(path, "buffer size"))?;
    ensure_parent(path)?;
    buf.save(path).map_err(|e| IoError::invalid(path, e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    Ok(())
}
