//! PNG image loading and saving as `3×H×W` tensors in `[0, 1]`.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loads an RGB image into a `3×H×W` tensor with values in `[0, 1]`.
pub fn load_rgb<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![S::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = S::from_f64(px.0[c] as f64 / 255.0);
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

/// Loads a single-channel thermal image, expanded to `3×H×W` so both
/// modality branches share the image contract.
pub fn load_thermal<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![S::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let v = S::from_f64(px.0[0] as f64 / 255.0);
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = v;
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a `3×H×W` tensor in `[0, 1]` as an RGB PNG.
pub fn save_rgb(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = t.dims3("save_rgb")?;
    if c != 3 {
        return Err(Error::shape("save_rgb", format!("expected 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [quantize(t.at3(0, y, x)), quantize(t.at3(1, y, x)), quantize(t.at3(2, y, x))];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Saves a `1×H×W` (or `C×H×W` channel 0) tensor in `[0, 1]` as a grayscale PNG.
pub fn save_gray(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (_c, h, w) = t.dims3("save_gray")?;
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([quantize(t.at3(0, y, x))]));
        }
    }
    img.save(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Min-max normalizes a map into `[0, 1]` for panel dumps; constant maps
/// become all-zero.
pub fn normalize_for_panel(t: &Tensor<f32>) -> Tensor<f32> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in t.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return Tensor::zeros(t.shape());
    }
    t.map(|v| (v - lo) / (hi - lo))
}
