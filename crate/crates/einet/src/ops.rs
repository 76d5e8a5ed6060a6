//! Forward and backward kernels for the tensor operations.
//!
//! Kernels are pure functions over [`Tensor`] values. The autograd tape
//! records which kernel produced which node and replays the matching
//! backward kernel in reverse order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// activations

pub fn silu<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.check_finite("silu")?;
    Ok(x.map(|v| v * v.stable_sigmoid()))
}

pub fn silu_grad<S: Scalar>(x: &Tensor<S>, go: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for (o, &g) in out.data_mut().iter_mut().zip(go.data()) {
        let s = o.stable_sigmoid();
        *o = g * s * (S::one() + *o * (S::one() - s));
    }
    out
}

/// `x * sigmoid(-x)`: nearly identity on negative inputs, vanishing on
/// large positive ones.
pub fn neg_silu<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.check_finite("neg_silu")?;
    Ok(x.map(|v| v * (-v).stable_sigmoid()))
}

pub fn neg_silu_grad<S: Scalar>(x: &Tensor<S>, go: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for (o, &g) in out.data_mut().iter_mut().zip(go.data()) {
        let s = (-*o).stable_sigmoid();
        *o = g * s * (S::one() - *o * (S::one() - s));
    }
    out
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.check_finite("sigmoid")?;
    Ok(x.map(|v| v.stable_sigmoid()))
}

pub fn sigmoid_grad<S: Scalar>(x: &Tensor<S>, go: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for (o, &g) in out.data_mut().iter_mut().zip(go.data()) {
        let s = o.stable_sigmoid();
        *o = g * s * (S::one() - s);
    }
    out
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.check_finite("relu")?;
    Ok(x.map(|v| if v > S::zero() { v } else { S::zero() }))
}

pub fn relu_grad<S: Scalar>(x: &Tensor<S>, go: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for (o, &g) in out.data_mut().iter_mut().zip(go.data()) {
        *o = if *o > S::zero() { g } else { S::zero() };
    }
    out
}

pub fn exp<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.check_finite("exp")?;
    Ok(x.map(|v| v.exp()))
}

// ---------------------------------------------------------------------------
// convolution

pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let (c_in, h, w) = x.dims3("conv2d")?;
    let ws = weight.shape();
    if ws.len() != 4 {
        return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {ws:?}")));
    }
    let (c_out, kc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kc != c_in {
        return Err(Error::shape("conv2d", format!("kernel expects {kc} input channels, input has {c_in}")));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size must be odd, got {kh}")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
    }
    let k = kh;
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("conv2d", format!("input {h}x{w} too small for kernel {k} pad {pad}")));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    Ok(ConvDims { c_in, c_out, k, h, w, oh, ow })
}

fn pad_input<S: Scalar>(x: &Tensor<S>, c: usize, h: usize, w: usize, pad: usize) -> (Vec<S>, usize, usize) {
    let ph = h + 2 * pad;
    let pw = w + 2 * pad;
    if pad == 0 {
        return (x.data().to_vec(), ph, pw);
    }
    let mut buf = vec![S::zero(); c * ph * pw];
    for ic in 0..c {
        for y in 0..h {
            let src = (ic * h + y) * w;
            let dst = (ic * ph + y + pad) * pw + pad;
            buf[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
        }
    }
    (buf, ph, pw)
}

/// Standard cross-correlation over a `C×H×W` input.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let d = conv_dims(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != d.c_out {
            return Err(Error::shape("conv2d", format!("bias has {} entries, expected {}", b.len(), d.c_out)));
        }
    }
    let (xp, _ph, pw) = pad_input(x, d.c_in, d.h, d.w, pad);
    let mut out = vec![S::zero(); d.c_out * d.oh * d.ow];
    let wdat = weight.data();
    let osz = d.oh * d.ow;
    for oc in 0..d.c_out {
        let out_ch = &mut out[oc * osz..(oc + 1) * osz];
        if let Some(b) = bias {
            let bv = b.data()[oc];
            out_ch.iter_mut().for_each(|v| *v = bv);
        }
        for ic in 0..d.c_in {
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wv = wdat[((oc * d.c_in + ic) * d.k + ky) * d.k + kx];
                    for oy in 0..d.oh {
                        let row = (ic * (d.h + 2 * pad) + oy * stride + ky) * pw + kx;
                        let orow = &mut out_ch[oy * d.ow..(oy + 1) * d.ow];
                        if stride == 1 {
                            let xrow = &xp[row..row + d.ow];
                            for (o, &xv) in orow.iter_mut().zip(xrow) {
                                *o = *o + wv * xv;
                            }
                        } else {
                            for (o, xv) in orow.iter_mut().zip(xp[row..].iter().step_by(stride)) {
                                *o = *o + wv * *xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.c_out, d.oh, d.ow], out))
}

/// Gradients of `conv2d` wrt input, kernel, and bias.
pub fn conv2d_grad<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    go: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_gx: bool,
    with_bias: bool,
) -> Result<(Option<Tensor<S>>, Tensor<S>, Option<Tensor<S>>)> {
    let d = conv_dims(x, weight, stride, pad)?;
    let (xp, ph, pw) = pad_input(x, d.c_in, d.h, d.w, pad);
    let godat = go.data();
    let wdat = weight.data();
    let osz = d.oh * d.ow;

    let mut gw = vec![S::zero(); weight.len()];
    for oc in 0..d.c_out {
        let go_ch = &godat[oc * osz..(oc + 1) * osz];
        for ic in 0..d.c_in {
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let mut acc = S::zero();
                    for oy in 0..d.oh {
                        let row = (ic * ph + oy * stride + ky) * pw + kx;
                        let gorow = &go_ch[oy * d.ow..(oy + 1) * d.ow];
                        if stride == 1 {
                            let xrow = &xp[row..row + d.ow];
                            for (&g, &xv) in gorow.iter().zip(xrow) {
                                acc = acc + g * xv;
                            }
                        } else {
                            for (&g, xv) in gorow.iter().zip(xp[row..].iter().step_by(stride)) {
                                acc = acc + g * *xv;
                            }
                        }
                    }
                    gw[((oc * d.c_in + ic) * d.k + ky) * d.k + kx] = acc;
                }
            }
        }
    }

    let gb = if with_bias {
        let mut gb = vec![S::zero(); d.c_out];
        for oc in 0..d.c_out {
            gb[oc] = godat[oc * osz..(oc + 1) * osz].iter().copied().sum();
        }
        Some(Tensor::from_parts(vec![d.c_out], gb))
    } else {
        None
    };

    let gx = if need_gx {
        let mut gxp = vec![S::zero(); d.c_in * ph * pw];
        for ic in 0..d.c_in {
            for oc in 0..d.c_out {
                let go_ch = &godat[oc * osz..(oc + 1) * osz];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wdat[((oc * d.c_in + ic) * d.k + ky) * d.k + kx];
                        for oy in 0..d.oh {
                            let row = (ic * ph + oy * stride + ky) * pw + kx;
                            let gorow = &go_ch[oy * d.ow..(oy + 1) * d.ow];
                            if stride == 1 {
                                let grow = &mut gxp[row..row + d.ow];
                                for (gx, &g) in grow.iter_mut().zip(gorow) {
                                    *gx = *gx + wv * g;
                                }
                            } else {
                                for (ox, &g) in gorow.iter().enumerate() {
                                    gxp[row + ox * stride] = gxp[row + ox * stride] + wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        // unpad
        let mut gx = vec![S::zero(); d.c_in * d.h * d.w];
        for ic in 0..d.c_in {
            for y in 0..d.h {
                let src = (ic * ph + y + pad) * pw + pad;
                let dst = (ic * d.h + y) * d.w;
                gx[dst..dst + d.w].copy_from_slice(&gxp[src..src + d.w]);
            }
        }
        Some(Tensor::from_parts(vec![d.c_in, d.h, d.w], gx))
    } else {
        None
    };

    Ok((gx, Tensor::from_parts(weight.shape().to_vec(), gw), gb))
}

// ---------------------------------------------------------------------------
// batch normalization

pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel mean and (biased) variance over the spatial extent.
pub fn channel_stats<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let (c, h, w) = x.dims3("batch_norm")?;
    let n = S::from_usize(h * w);
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ic in 0..c {
        let ch = &x.data()[ic * h * w..(ic + 1) * h * w];
        let m: S = ch.iter().copied().sum::<S>() / n;
        let v: S = ch.iter().map(|&x| (x - m) * (x - m)).sum::<S>() / n;
        mean[ic] = m;
        var[ic] = v;
    }
    Ok((Tensor::from_parts(vec![c, 1, 1], mean), Tensor::from_parts(vec![c, 1, 1], var)))
}

/// Normalizes with the given per-channel statistics: `γ·(x−μ)/√(σ²+ε)+β`.
pub fn batch_norm_apply<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    mean: &Tensor<S>,
    var: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let (c, h, w) = x.dims3("batch_norm")?;
    for (t, what) in [(gamma, "scale"), (beta, "shift"), (mean, "mean"), (var, "var")] {
        if t.len() != c {
            return Err(Error::shape("batch_norm", format!("{what} has {} entries, expected {c}", t.len())));
        }
    }
    let mut out = vec![S::zero(); x.len()];
    for ic in 0..c {
        let inv = S::one() / (var.data()[ic] + eps).sqrt();
        let g = gamma.data()[ic] * inv;
        let b = beta.data()[ic] - mean.data()[ic] * g;
        let src = &x.data()[ic * h * w..(ic + 1) * h * w];
        let dst = &mut out[ic * h * w..(ic + 1) * h * w];
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = g * v + b;
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Backward for train-mode batch norm (statistics computed from `x`).
pub fn batch_norm_train_grad<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &Tensor<S>,
    var: &Tensor<S>,
    eps: S,
    go: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = S::from_usize(h * w);
    let mut gx = vec![S::zero(); x.len()];
    let mut ggamma = vec![S::zero(); c];
    let mut gbeta = vec![S::zero(); c];
    for ic in 0..c {
        let inv = S::one() / (var.data()[ic] + eps).sqrt();
        let m = mean.data()[ic];
        let xs = &x.data()[ic * h * w..(ic + 1) * h * w];
        let gs = &go.data()[ic * h * w..(ic + 1) * h * w];
        let mut sum_g = S::zero();
        let mut sum_gx = S::zero();
        for (&g, &xv) in gs.iter().zip(xs) {
            sum_g += g;
            sum_gx += g * (xv - m) * inv;
        }
        ggamma[ic] = sum_gx;
        gbeta[ic] = sum_g;
        let gsc = gamma.data()[ic] * inv;
        let mean_g = sum_g / n;
        let mean_gx = sum_gx / n;
        let dst = &mut gx[ic * h * w..(ic + 1) * h * w];
        for ((o, &g), &xv) in dst.iter_mut().zip(gs).zip(xs) {
            let xhat = (xv - m) * inv;
            *o = gsc * (g - mean_g - xhat * mean_gx);
        }
    }
    (
        Tensor::from_parts(vec![c, h, w], gx),
        Tensor::from_parts(vec![c, 1, 1], ggamma),
        Tensor::from_parts(vec![c, 1, 1], gbeta),
    )
}

/// Backward for inference-mode batch norm (fixed running statistics).
pub fn batch_norm_infer_grad<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &Tensor<S>,
    var: &Tensor<S>,
    eps: S,
    go: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut gx = vec![S::zero(); x.len()];
    let mut ggamma = vec![S::zero(); c];
    let mut gbeta = vec![S::zero(); c];
    for ic in 0..c {
        let inv = S::one() / (var.data()[ic] + eps).sqrt();
        let m = mean.data()[ic];
        let gsc = gamma.data()[ic] * inv;
        let xs = &x.data()[ic * h * w..(ic + 1) * h * w];
        let gs = &go.data()[ic * h * w..(ic + 1) * h * w];
        let dst = &mut gx[ic * h * w..(ic + 1) * h * w];
        for ((o, &g), &xv) in dst.iter_mut().zip(gs).zip(xs) {
            *o = gsc * g;
            ggamma[ic] += g * (xv - m) * inv;
            gbeta[ic] += g;
        }
    }
    (
        Tensor::from_parts(vec![c, h, w], gx),
        Tensor::from_parts(vec![c, 1, 1], ggamma),
        Tensor::from_parts(vec![c, 1, 1], gbeta),
    )
}

// ---------------------------------------------------------------------------
// pooling and spatial reductions

/// Per-channel arithmetic mean: `C×H×W → C×1×1`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = x.dims3("global_avg_pool")?;
    let n = S::from_usize(h * w);
    let mut out = Vec::with_capacity(c);
    for ic in 0..c {
        out.push(x.data()[ic * h * w..(ic + 1) * h * w].iter().copied().sum::<S>() / n);
    }
    Ok(Tensor::from_parts(vec![c, 1, 1], out))
}

pub fn global_avg_pool_grad<S: Scalar>(x_shape: &[usize], go: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let n = S::from_usize(h * w);
    let mut gx = vec![S::zero(); c * h * w];
    for ic in 0..c {
        let g = go.data()[ic] / n;
        gx[ic * h * w..(ic + 1) * h * w].iter_mut().for_each(|v| *v = g);
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

/// Per-position maximum across channels: `C×H×W → 1×H×W`.
/// Returns the winning channel per position (first channel on ties).
pub fn channel_max<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let (c, h, w) = x.dims3("channel_max")?;
    let hw = h * w;
    let mut out = x.data()[..hw].to_vec();
    let mut arg = vec![0usize; hw];
    for ic in 1..c {
        let ch = &x.data()[ic * hw..(ic + 1) * hw];
        for (i, &v) in ch.iter().enumerate() {
            if v > out[i] {
                out[i] = v;
                arg[i] = ic;
            }
        }
    }
    Ok((Tensor::from_parts(vec![1, h, w], out), arg))
}

pub fn channel_max_grad<S: Scalar>(x_shape: &[usize], arg: &[usize], go: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let hw = h * w;
    let mut gx = vec![S::zero(); c * hw];
    for (i, (&a, &g)) in arg.iter().zip(go.data()).enumerate() {
        gx[a * hw + i] = g;
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

/// Per-position mean across channels: `C×H×W → 1×H×W`.
pub fn channel_mean<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = x.dims3("channel_mean")?;
    let hw = h * w;
    let n = S::from_usize(c);
    let mut out = vec![S::zero(); hw];
    for ic in 0..c {
        let ch = &x.data()[ic * hw..(ic + 1) * hw];
        for (o, &v) in out.iter_mut().zip(ch) {
            *o = *o + v;
        }
    }
    out.iter_mut().for_each(|v| *v = *v / n);
    Ok(Tensor::from_parts(vec![1, h, w], out))
}

pub fn channel_mean_grad<S: Scalar>(x_shape: &[usize], go: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let hw = h * w;
    let n = S::from_usize(c);
    let mut gx = vec![S::zero(); c * hw];
    for ic in 0..c {
        for (o, &g) in gx[ic * hw..(ic + 1) * hw].iter_mut().zip(go.data()) {
            *o = g / n;
        }
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

/// 2×2 max pooling with stride 2. Requires even spatial extents.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let (c, h, w) = x.dims3("max_pool")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("max_pool", format!("spatial extents must be even, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ic * h + oy * 2) * w + ox * 2;
                let mut best = x.data()[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ic * h + oy * 2 + dy) * w + ox * 2 + dx;
                    if x.data()[idx] > best {
                        best = x.data()[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, oh, ow], out), arg))
}

pub fn max_pool2_grad<S: Scalar>(x_shape: &[usize], arg: &[usize], go: &Tensor<S>) -> Tensor<S> {
    let mut gx = vec![S::zero(); x_shape.iter().product()];
    for (&a, &g) in arg.iter().zip(go.data()) {
        gx[a] = gx[a] + g;
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_nearest2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = x.dims3("nearest_upsample")?;
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![S::zero(); c * oh * ow];
    for ic in 0..c {
        for y in 0..h {
            let src = &x.data()[(ic * h + y) * w..(ic * h + y + 1) * w];
            for sub in 0..2 {
                let dst = &mut out[(ic * oh + y * 2 + sub) * ow..(ic * oh + y * 2 + sub + 1) * ow];
                for (xd, &v) in dst.chunks_exact_mut(2).zip(src) {
                    xd[0] = v;
                    xd[1] = v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub fn upsample_nearest2_grad<S: Scalar>(x_shape: &[usize], go: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (oh, ow) = (h * 2, w * 2);
    let mut gx = vec![S::zero(); c * h * w];
    for ic in 0..c {
        for y in 0..oh {
            let src = &go.data()[(ic * oh + y) * ow..(ic * oh + y + 1) * ow];
            let dst = &mut gx[(ic * h + y / 2) * w..(ic * h + y / 2 + 1) * w];
            for (i, &g) in src.iter().enumerate() {
                dst[i / 2] = dst[i / 2] + g;
            }
        }
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

/// Concatenation along the channel axis.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ca, ha, wa) = a.dims3("concat")?;
    let (cb, hb, wb) = b.dims3("concat")?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape("concat", format!("spatial mismatch {ha}x{wa} vs {hb}x{wb}")));
    }
    let mut data = Vec::with_capacity((ca + cb) * ha * wa);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_parts(vec![ca + cb, ha, wa], data))
}

pub fn concat_channels_grad<S: Scalar>(ca: usize, hw: usize, go: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let cb = go.shape()[0] - ca;
    let (h, w) = (go.shape()[1], go.shape()[2]);
    let ga = Tensor::from_parts(vec![ca, h, w], go.data()[..ca * hw].to_vec());
    let gb = Tensor::from_parts(vec![cb, h, w], go.data()[ca * hw..].to_vec());
    (ga, gb)
}

// ---------------------------------------------------------------------------
// fully connected (on C×1×1 descriptors)

pub fn fully_connected<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let (c_in, h, w) = x.dims3("fully_connected")?;
    if (h, w) != (1, 1) {
        return Err(Error::shape("fully_connected", format!("expected C×1×1 input, got {c_in}x{h}x{w}")));
    }
    let ws = weight.shape();
    if ws.len() != 2 || ws[1] != c_in {
        return Err(Error::shape("fully_connected", format!("weight {ws:?} incompatible with input {c_in}")));
    }
    let c_out = ws[0];
    let mut out = Vec::with_capacity(c_out);
    for o in 0..c_out {
        let row = &weight.data()[o * c_in..(o + 1) * c_in];
        let mut acc = bias.map(|b| b.data()[o]).unwrap_or_else(S::zero);
        for (&wv, &xv) in row.iter().zip(x.data()) {
            acc = acc + wv * xv;
        }
        out.push(acc);
    }
    Ok(Tensor::from_parts(vec![c_out, 1, 1], out))
}

pub fn fully_connected_grad<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    go: &Tensor<S>,
    with_bias: bool,
) -> (Tensor<S>, Tensor<S>, Option<Tensor<S>>) {
    let c_in = x.len();
    let c_out = weight.shape()[0];
    let mut gx = vec![S::zero(); c_in];
    let mut gw = vec![S::zero(); weight.len()];
    for o in 0..c_out {
        let g = go.data()[o];
        let row = &weight.data()[o * c_in..(o + 1) * c_in];
        for i in 0..c_in {
            gx[i] = gx[i] + g * row[i];
            gw[o * c_in + i] = g * x.data()[i];
        }
    }
    let gb = with_bias.then(|| Tensor::from_parts(vec![c_out], go.data().to_vec()));
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(weight.shape().to_vec(), gw),
        gb,
    )
}

// ---------------------------------------------------------------------------
// losses

/// Sum of the numerically stable binary cross entropy with logits:
/// `Σ max(x,0) − x·z + ln(1+e^{−|x|})`.
pub fn bce_with_logits_sum<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>) -> Result<S> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "bce_with_logits",
            format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        ));
    }
    let mut acc = S::zero();
    for (&x, &z) in logits.data().iter().zip(targets.data()) {
        let pos = if x > S::zero() { x } else { S::zero() };
        acc = acc + pos - x * z + (S::one() + (-x.abs()).exp()).ln();
    }
    Ok(acc)
}

/// Gradient of `bce_with_logits_sum` wrt logits: `σ(x) − z`.
pub fn bce_with_logits_sum_grad<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>, go: S) -> Tensor<S> {
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &z)| go * (x.stable_sigmoid() - z))
        .collect();
    Tensor::from_parts(logits.shape().to_vec(), data)
}
