//! Aspect-preserving resize plus centered constant padding to a square
//! input, with the exact inverse affine transform for mapping boxes back.

use crate::error::{Error, Result};
use crate::head::BBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Letterbox padding value (114/255, the usual detector gray).
pub const PAD_VALUE: f64 = 114.0 / 255.0;

/// Forward transform `dst = src·scale + pad`; the inverse is exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_w: usize,
    pub src_h: usize,
    pub target: usize,
}

impl LetterboxTransform {
    pub fn apply_box(&self, b: &BBox) -> BBox {
        BBox {
            x_min: b.x_min * self.scale + self.pad_x,
            y_min: b.y_min * self.scale + self.pad_y,
            x_max: b.x_max * self.scale + self.pad_x,
            y_max: b.y_max * self.scale + self.pad_y,
        }
    }

    pub fn invert_box(&self, b: &BBox) -> BBox {
        BBox {
            x_min: (b.x_min - self.pad_x) / self.scale,
            y_min: (b.y_min - self.pad_y) / self.scale,
            x_max: (b.x_max - self.pad_x) / self.scale,
            y_max: (b.y_max - self.pad_y) / self.scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.pad_x == 0.0 && self.pad_y == 0.0
    }
}

fn bilinear_sample<S: Scalar>(img: &Tensor<S>, c: usize, y: f64, x: f64) -> S {
    let (_, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = S::from_f64(x - x0 as f64);
    let fy = S::from_f64(y - y0 as f64);
    let v00 = img.at3(c, y0, x0);
    let v01 = img.at3(c, y0, x1);
    let v10 = img.at3(c, y1, x0);
    let v11 = img.at3(c, y1, x1);
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    top + (bottom - top) * fy
}

/// Resizes `3×H×W` to fit a `target×target` square (bilinear) and pads the
/// remainder with [`PAD_VALUE`], split evenly per side.
pub fn letterbox<S: Scalar>(image: &Tensor<S>, target: usize) -> Result<(Tensor<S>, LetterboxTransform)> {
    let (c, h, w) = image.dims3("letterbox")?;
    if h == 0 || w == 0 {
        return Err(Error::Input("zero-sized image".to_string()));
    }
    if target == 0 || target % 32 != 0 {
        return Err(Error::Input(format!("letterbox target must be a positive multiple of 32, got {target}")));
    }
    let scale = (target as f64 / w as f64).min(target as f64 / h as f64);
    let new_w = ((w as f64 * scale).round() as usize).clamp(1, target);
    let new_h = ((h as f64 * scale).round() as usize).clamp(1, target);
    let pad_x = (target - new_w) / 2;
    let pad_y = (target - new_h) / 2;

    let mut out = Tensor::full(&[c, target, target], S::from_f64(PAD_VALUE));
    let identity = new_w == w && new_h == h;
    for ch in 0..c {
        for oy in 0..new_h {
            for ox in 0..new_w {
                let v = if identity {
                    image.at3(ch, oy, ox)
                } else {
                    // pixel-center mapping: src = (dst + 0.5)/scale − 0.5
                    let sx = (ox as f64 + 0.5) * (w as f64 / new_w as f64) - 0.5;
                    let sy = (oy as f64 + 0.5) * (h as f64 / new_h as f64) - 0.5;
                    bilinear_sample(image, ch, sy, sx)
                };
                let idx = (ch * target + oy + pad_y) * target + ox + pad_x;
                out.data_mut()[idx] = v;
            }
        }
    }
    let transform = LetterboxTransform {
        scale,
        pad_x: pad_x as f64,
        pad_y: pad_y as f64,
        src_w: w,
        src_h: h,
        target,
    };
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_equal_to_target_is_identity() {
        let img = Tensor::<f32>::from_vec(&[3, 64, 64], (0..3 * 64 * 64).map(|i| (i % 256) as f32 / 255.0).collect())
            .unwrap();
        let (out, tf) = letterbox(&img, 64).unwrap();
        assert!(tf.is_identity());
        assert_eq!(out, img);
    }

    #[test]
    fn landscape_pads_vertically_evenly() {
        let img = Tensor::<f32>::full(&[3, 32, 64], 0.9);
        let (out, tf) = letterbox(&img, 64).unwrap();
        assert_eq!(tf.scale, 1.0);
        assert_eq!(tf.pad_y, 16.0);
        assert_eq!(tf.pad_x, 0.0);
        // top and bottom padding rows hold the pad value
        let pad = PAD_VALUE as f32;
        assert!((out.at3(0, 0, 0) - pad).abs() < 1e-6);
        assert!((out.at3(0, 63, 63) - pad).abs() < 1e-6);
        assert!((out.at3(0, 32, 10) - 0.9).abs() < 1e-6);
    }

    #[test]
    fn box_round_trip_is_exact() {
        let img = Tensor::<f32>::full(&[3, 48, 96], 0.5);
        let (_, tf) = letterbox(&img, 64).unwrap();
        let b = BBox::new(3.25, 7.5, 88.0, 41.0);
        let fwd = tf.apply_box(&b);
        let back = tf.invert_box(&fwd);
        for (got, want) in [(back.x_min, b.x_min), (back.y_min, b.y_min), (back.x_max, b.x_max), (back.y_max, b.y_max)] {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_sized_rejected() {
        // a zero extent cannot even be constructed; use target validation instead
        let img = Tensor::<f32>::full(&[3, 16, 16], 0.1);
        assert!(letterbox(&img, 63).is_err());
    }
}
