//! Decoding, center-crop/resize, `[0,255] <-> [-1,1]` conversion and PNG output.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use patchwork_autograd::Array;

use crate::batch::ImageBatch;
use crate::error::{Error, Result};

/// Raw CelebA frame size (width, height).
pub const CELEBA_SOURCE_SIZE: (u32, u32) = (178, 218);

pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn denormalize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))?;
    Ok(img.to_rgb8())
}

/// Center square crop of the short side, resized to `target × target`.
///
/// Upscaling is refused: a source whose short side is below `target` is a
/// data error attributed to `path`.
pub fn crop_resize_rgb(raw: &RgbImage, target: u32, path: &Path) -> Result<RgbImage> {
    let (w, h) = raw.dimensions();
    let side = w.min(h);
    if side == 0 || side < target {
        return Err(Error::data(
            path,
            format!("image {w}x{h} is smaller than the {target}px crop"),
        ));
    }
    let crop = imageops::crop_imm(raw, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side == target {
        return Ok(crop);
    }
    Ok(imageops::resize(&crop, target, target, FilterType::Triangle))
}

/// Cropped, resized and normalized `(target, target, 3)` array.
pub fn crop_resize(raw: &RgbImage, target: u32, path: &Path) -> Result<Array<f32>> {
    let img = crop_resize_rgb(raw, target, path)?;
    let t = target as usize;
    let data = img.as_raw().iter().map(|&v| normalize(v)).collect();
    Ok(Array::from_vec(vec![t, t, 3], data).unwrap())
}

/// Interleaved RGB bytes to a normalized `(3, H, W)` vector.
pub fn rgb_to_chw(img: &RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = normalize(px[c]);
        }
    }
    out
}

/// Image `i` of a 3-channel batch as an RGB raster.
pub fn batch_image_to_rgb(batch: &ImageBatch, i: usize) -> Result<RgbImage> {
    let [_, c, h, w] = batch.shape();
    if c != 3 {
        return Err(Error::Argument(format!("expected 3 channels, got {c}")));
    }
    let data = batch.image_data(i);
    let plane = h * w;
    let mut raw = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            raw.push(denormalize(data[ch * plane + p]));
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).unwrap())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot encode PNG: {e}")))
}

/// Tiles equally sized images into a `rows × cols` sheet, row-major.
pub fn tile(images: &[RgbImage], cols: usize) -> Result<RgbImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("nothing to tile".into()))?;
    let (w, h) = first.dimensions();
    let rows = images.len().div_ceil(cols);
    let mut sheet = RgbImage::new(w * cols as u32, h * rows as u32);
    for (k, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::Argument("tiled images must share a size".into()));
        }
        let (r, c) = ((k / cols) as i64, (k % cols) as i64);
        imageops::replace(&mut sheet, img, c * w as i64, r * h as i64);
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trips_every_byte() {
        for v in 0..=255u8 {
            let n = normalize(v);
            assert!((-1.0..=1.0).contains(&n));
            assert_eq!(denormalize(n), v);
        }
    }

    #[test]
    fn gray_and_shapes() {
        let p = Path::new("gray.png");
        let gray = RgbImage::from_pixel(178, 218, image::Rgb([128, 128, 128]));
        let out = crop_resize(&gray, 128, p).unwrap();
        assert_eq!(out.shape(), &[128, 128, 3]);
        let expect = 128.0 / 127.5 - 1.0;
        assert!(out.data().iter().all(|&v| (v - expect).abs() < 1e-6));
        assert_eq!(crop_resize(&gray, 64, p).unwrap().shape(), &[64, 64, 3]);
        assert!(matches!(
            crop_resize(&RgbImage::new(20, 40), 32, p),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn crop_is_centered_on_long_axis() {
        // rows above and below the central square are red, the square is blue
        let img = RgbImage::from_fn(10, 14, |_, y| {
            if (2..12).contains(&y) {
                image::Rgb([0, 0, 255])
            } else {
                image::Rgb([255, 0, 0])
            }
        });
        let out = crop_resize_rgb(&img, 10, Path::new("x")).unwrap();
        assert!(out.pixels().all(|p| p.0 == [0, 0, 255]));
    }

    #[test]
    fn tile_layout() {
        let a = RgbImage::from_pixel(2, 2, image::Rgb([1, 1, 1]));
        let b = RgbImage::from_pixel(2, 2, image::Rgb([2, 2, 2]));
        let s = tile(&[a.clone(), b, a], 2).unwrap();
        assert_eq!(s.dimensions(), (4, 4));
        assert_eq!(s.get_pixel(3, 0).0, [2, 2, 2]);
        assert_eq!(s.get_pixel(3, 3).0, [0, 0, 0]);
    }
}
