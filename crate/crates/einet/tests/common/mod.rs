//! Shared helpers and independent straight-line oracles for the
//! integration suites. Every oracle here recomputes its target operation
//! with explicit loops, separately from the library's kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use einet::scalar::Scalar;
use einet::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn assert_close<S: Scalar>(got: &Tensor<S>, want: &Tensor<S>, tol: f64, what: &str) {
    assert_eq!(got.shape(), want.shape(), "{what}: shape mismatch");
    let mut worst = 0.0f64;
    for (&g, &w) in got.data().iter().zip(want.data()) {
        worst = worst.max((Scalar::to_f64(g) - Scalar::to_f64(w)).abs());
    }
    assert!(worst <= tol, "{what}: max abs diff {worst} > {tol}");
}

/// Quadruple-loop direct cross-correlation with explicit bounds checks.
pub fn conv2d_oracle<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    for oc in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map(|b| b.data()[oc]).unwrap_or_else(S::zero);
                for ic in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            let xv = x.at3(ic, iy as usize, ix as usize);
                            let wv = w.data()[((oc * c_in + ic) * k + ky) * k + kx];
                            acc = acc + xv * wv;
                        }
                    }
                }
                out.data_mut()[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Two-pass per-channel mean/variance normalization oracle.
pub fn batch_norm_oracle<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Tensor<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ic in 0..c {
        let mut sum = 0.0f64;
        for y in 0..h {
            for xx in 0..w {
                sum += Scalar::to_f64(x.at3(ic, y, xx));
            }
        }
        let mean = sum / (h * w) as f64;
        let mut var_sum = 0.0f64;
        for y in 0..h {
            for xx in 0..w {
                let d = Scalar::to_f64(x.at3(ic, y, xx)) - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / (h * w) as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for y in 0..h {
            for xx in 0..w {
                let xv = Scalar::to_f64(x.at3(ic, y, xx));
                let v = Scalar::to_f64(gamma.data()[ic]) * ((xv - mean) * inv) + Scalar::to_f64(beta.data()[ic]);
                out.data_mut()[(ic * h + y) * w + xx] = S::from_f64(v);
            }
        }
    }
    out
}

pub fn gap_oracle<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, 1, 1]);
    for ic in 0..c {
        let mut sum = 0.0f64;
        for y in 0..h {
            for xx in 0..w {
                sum += Scalar::to_f64(x.at3(ic, y, xx));
            }
        }
        out.data_mut()[ic] = S::from_f64(sum / (h * w) as f64);
    }
    out
}

pub fn channel_max_oracle<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for xx in 0..w {
            let mut best = x.at3(0, y, xx);
            for ic in 1..c {
                if x.at3(ic, y, xx) > best {
                    best = x.at3(ic, y, xx);
                }
            }
            out.data_mut()[y * w + xx] = best;
        }
    }
    out
}

pub fn channel_mean_oracle<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for xx in 0..w {
            let mut sum = 0.0f64;
            for ic in 0..c {
                sum += Scalar::to_f64(x.at3(ic, y, xx));
            }
            out.data_mut()[y * w + xx] = S::from_f64(sum / c as f64);
        }
    }
    out
}

pub fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn neg_silu_f64(x: f64) -> f64 {
    x * sigmoid_f64(-x)
}

/// Straight-line TPE oracle: explicit GAP, channel max, broadcast product,
/// and sum, all in f64 loops.
pub fn tpe_oracle<S: Scalar>(frames: &[&Tensor<S>]) -> Tensor<S> {
    let (c, h, w) = (frames[0].shape()[0], frames[0].shape()[1], frames[0].shape()[2]);
    let mut out = Tensor::zeros(&[c, h, w]);
    for f in frames {
        let p = gap_oracle(*f);
        let v = channel_max_oracle(*f);
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let term = Scalar::to_f64(p.data()[ic])
                        * Scalar::to_f64(v.at3(0, y, xx))
                        * Scalar::to_f64(f.at3(ic, y, xx));
                    let idx = (ic * h + y) * w + xx;
                    out.data_mut()[idx] = out.data_mut()[idx] + S::from_f64(term);
                }
            }
        }
    }
    out
}

/// Straight-line fusion-weight oracle (sigmoid over the gated sum).
pub fn fusion_weight_oracle<S: Scalar>(
    f_rgb: &Tensor<S>,
    f_t_inact: &Tensor<S>,
    w_fore: &Tensor<S>,
    w_ch: &Tensor<S>,
) -> Tensor<S> {
    let (c, h, w) = (f_rgb.shape()[0], f_rgb.shape()[1], f_rgb.shape()[2]);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ic in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let fore = Scalar::to_f64(w_fore.at3(0, y, xx));
                let ch = Scalar::to_f64(w_ch.data()[ic]);
                let rgb = Scalar::to_f64(f_rgb.at3(ic, y, xx));
                let t = Scalar::to_f64(f_t_inact.at3(ic, y, xx));
                let v = sigmoid_f64(fore * ch * rgb + (1.0 - fore) * ch * neg_silu_f64(t));
                out.data_mut()[(ic * h + y) * w + xx] = S::from_f64(v);
            }
        }
    }
    out
}
