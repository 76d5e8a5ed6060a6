//! Erasure-based interaction between RGB and thermal features.
//!
//! The inactive (pre-activation) thermal map is passed through the negative
//! SiLU so background responses survive as negatives and foreground
//! responses vanish; adding that onto the RGB map cancels background noise.
//! Spatial and channel attention computed from the denoised map gate the
//! fusion weight, and a residual concat + 1×1 conv merges the two streams.
//! Erasure is one-directional: thermal features are never written back.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::net::Net;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{Init, ModelWeights, WeightSpec};

/// Channel-attention bottleneck ratio. SE's default 16 is too coarse for
/// the tiny channel counts used here.
pub const CHANNEL_REDUCTION: usize = 4;
pub const SPATIAL_KERNEL: usize = 7;

/// Spatial and channel attention weights on one level.
#[derive(Clone, Debug)]
pub struct AttentionWeights<S> {
    /// `1×H×W`, in (0,1); high on foreground.
    pub foreground: Tensor<S>,
    /// `1 − foreground`, exactly.
    pub background: Tensor<S>,
    /// `C×1×1`, in (0,1).
    pub channel: Tensor<S>,
}

/// Eq.-style fusion weight `C×H×W`, strictly inside (0,1).
#[derive(Clone, Debug)]
pub struct FusionWeight<S>(pub Tensor<S>);

/// sigmoid(conv7×7(concat(channel_mean, channel_max))) → `1×H×W`.
pub fn spatial_attention_var<S: Scalar>(net: &mut Net<S>, x: Var, prefix: &str) -> Result<Var> {
    let mean = net.tape.channel_mean(x)?;
    let max = net.tape.channel_max(x)?;
    let stacked = net.tape.concat_channels(mean, max)?;
    let conv = net.conv(stacked, prefix, 1, SPATIAL_KERNEL / 2)?;
    net.tape.sigmoid(conv)
}

/// sigmoid(FC2(relu(FC1(GAP(x))))) → `C×1×1`.
pub fn channel_attention_var<S: Scalar>(net: &mut Net<S>, x: Var, prefix: &str) -> Result<Var> {
    let c = net.tape.value(x).shape()[0];
    if c % CHANNEL_REDUCTION != 0 {
        return Err(Error::Config(format!(
            "channel attention needs channels divisible by {CHANNEL_REDUCTION}, got {c}"
        )));
    }
    let pooled = net.tape.global_avg_pool(x)?;
    let squeezed = net.fc(pooled, &format!("{prefix}.fc1"))?;
    let act = net.tape.relu(squeezed)?;
    let expanded = net.fc(act, &format!("{prefix}.fc2"))?;
    net.tape.sigmoid(expanded)
}

/// `F_rgb + neg_silu(F_T_inact)`: the noise-erased RGB map.
pub fn erase_noise_var<S: Scalar>(net: &mut Net<S>, f_rgb: Var, f_t_inact: Var) -> Result<Var> {
    if net.tape.value(f_rgb).shape() != net.tape.value(f_t_inact).shape() {
        return Err(Error::shape(
            "erase_noise",
            format!("{:?} vs {:?}", net.tape.value(f_rgb).shape(), net.tape.value(f_t_inact).shape()),
        ));
    }
    let background = net.tape.neg_silu(f_t_inact)?;
    net.tape.add(f_rgb, background)
}

/// Fusion weight: `σ(W_fore·W_ch·F_RGB + W_back·W_ch·neg_silu(F_T_inact))`.
pub fn fusion_weight_var<S: Scalar>(
    net: &mut Net<S>,
    f_rgb: Var,
    f_t_inact: Var,
    w_fore: Var,
    w_ch: Var,
) -> Result<Var> {
    let ones = net.tape.constant(Tensor::full(net.tape.value(w_fore).shape(), S::one()));
    let w_back = net.tape.sub(ones, w_fore)?;
    let fore_ch = net.tape.mul(w_fore, w_ch)?;
    let rgb_term = net.tape.mul(fore_ch, f_rgb)?;
    let background = net.tape.neg_silu(f_t_inact)?;
    let back_ch = net.tape.mul(w_back, w_ch)?;
    let t_term = net.tape.mul(back_ch, background)?;
    let sum = net.tape.add(rgb_term, t_term)?;
    net.tape.sigmoid(sum)
}

/// Residual fusion: `Conv[Cat(F_RGB + W·F_RGB, F_RGB + W·F_T)]` with a 1×1
/// conv 2C→C plus batch norm and SiLU.
pub fn erasure_fuse_var<S: Scalar>(
    net: &mut Net<S>,
    f_rgb: Var,
    f_t: Var,
    w_fusion: Var,
    prefix: &str,
) -> Result<Var> {
    let rgb_scaled = net.tape.mul(w_fusion, f_rgb)?;
    let rgb_branch = net.tape.add(f_rgb, rgb_scaled)?;
    let t_scaled = net.tape.mul(w_fusion, f_t)?;
    let t_branch = net.tape.add(f_rgb, t_scaled)?;
    let stacked = net.tape.concat_channels(rgb_branch, t_branch)?;
    let (out, _) = net.conv_bn_silu(stacked, prefix, 1, 0)?;
    Ok(out)
}

/// Full per-level composition: attentions from the denoised map, then the
/// fusion weight, then the residual merge.
pub fn fuse_level_var<S: Scalar>(
    net: &mut Net<S>,
    level: usize,
    f_rgb: Var,
    f_t: Var,
    f_t_inact: Var,
) -> Result<Var> {
    let denoised = erase_noise_var(net, f_rgb, f_t_inact)?;
    let w_fore = spatial_attention_var(net, denoised, &format!("fuse.l{level}.spatial"))?;
    let w_ch = channel_attention_var(net, denoised, &format!("fuse.l{level}.channel"))?;
    let w_fusion = fusion_weight_var(net, f_rgb, f_t_inact, w_fore, w_ch)?;
    erasure_fuse_var(net, f_rgb, f_t, w_fusion, &format!("fuse.l{level}.out"))
}

/// Plain concatenation fusion: `Conv1×1(Cat(F_RGB, F_T))`, the "+MI(cat)"
/// ablation path.
pub fn cat_fuse_level_var<S: Scalar>(net: &mut Net<S>, level: usize, f_rgb: Var, f_t: Var) -> Result<Var> {
    let stacked = net.tape.concat_channels(f_rgb, f_t)?;
    let (out, _) = net.conv_bn_silu(stacked, &format!("cat.l{level}.out"), 1, 0)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// tensor-level entry points (build a throwaway tape)

pub fn erase_noise<S: Scalar>(f_rgb: &Tensor<S>, f_t_inact: &Tensor<S>) -> Result<Tensor<S>> {
    if f_rgb.shape() != f_t_inact.shape() {
        return Err(Error::shape("erase_noise", format!("{:?} vs {:?}", f_rgb.shape(), f_t_inact.shape())));
    }
    f_rgb.add(&ops::neg_silu(f_t_inact)?)
}

pub fn spatial_attention<S: Scalar>(f: &Tensor<S>, weights: &ModelWeights<S>, prefix: &str) -> Result<Tensor<S>> {
    let mut net = Net::new(weights, false);
    let x = net.input(f.clone());
    let out = spatial_attention_var(&mut net, x, prefix)?;
    Ok(net.tape.value(out).clone())
}

pub fn channel_attention<S: Scalar>(f: &Tensor<S>, weights: &ModelWeights<S>, prefix: &str) -> Result<Tensor<S>> {
    let mut net = Net::new(weights, false);
    let x = net.input(f.clone());
    let out = channel_attention_var(&mut net, x, prefix)?;
    Ok(net.tape.value(out).clone())
}

/// Builds [`AttentionWeights`] from a (typically denoised) feature map.
pub fn attention_weights<S: Scalar>(
    f: &Tensor<S>,
    weights: &ModelWeights<S>,
    level: usize,
) -> Result<AttentionWeights<S>> {
    let foreground = spatial_attention(f, weights, &format!("fuse.l{level}.spatial"))?;
    let channel = channel_attention(f, weights, &format!("fuse.l{level}.channel"))?;
    let background = Tensor::full(foreground.shape(), S::one()).sub(&foreground)?;
    Ok(AttentionWeights { foreground, background, channel })
}

/// Literal fusion-weight equation over tensors.
pub fn fusion_weight<S: Scalar>(
    f_rgb: &Tensor<S>,
    f_t_inact: &Tensor<S>,
    att: &AttentionWeights<S>,
) -> Result<FusionWeight<S>> {
    let rgb_term = att.foreground.mul(&att.channel)?.mul(f_rgb)?;
    let t_term = att.background.mul(&att.channel)?.mul(&ops::neg_silu(f_t_inact)?)?;
    Ok(FusionWeight(ops::sigmoid(&rgb_term.add(&t_term)?)?))
}

/// Tensor-level Eq.-4 merge with the level's fusion conv weights.
pub fn erasure_fuse<S: Scalar>(
    f_rgb: &Tensor<S>,
    f_t: &Tensor<S>,
    w_fusion: &FusionWeight<S>,
    weights: &ModelWeights<S>,
    level: usize,
) -> Result<Tensor<S>> {
    let mut net = Net::new(weights, false);
    let rgb = net.input(f_rgb.clone());
    let t = net.input(f_t.clone());
    let w = net.input(w_fusion.0.clone());
    let out = erasure_fuse_var(&mut net, rgb, t, w, &format!("fuse.l{level}.out"))?;
    Ok(net.tape.value(out).clone())
}

/// Tensor-level full per-level fusion.
pub fn fuse_level<S: Scalar>(
    f_rgb: &Tensor<S>,
    f_t: &Tensor<S>,
    f_t_inact: &Tensor<S>,
    weights: &ModelWeights<S>,
    level: usize,
) -> Result<Tensor<S>> {
    let mut net = Net::new(weights, false);
    let rgb = net.input(f_rgb.clone());
    let t = net.input(f_t.clone());
    let inact = net.input(f_t_inact.clone());
    let out = fuse_level_var(&mut net, level, rgb, t, inact)?;
    Ok(net.tape.value(out).clone())
}

// ---------------------------------------------------------------------------
// noise-erasure diagnostics

/// Channel-mean panels of the stride-8 maps feeding the erasure step.
#[derive(Clone, Debug)]
pub struct FeaturePanels<S> {
    /// Channel mean of the RGB input image (`1×H×W`).
    pub rgb_input: Tensor<S>,
    /// Channel mean of the raw RGB stride-8 feature map.
    pub rgb_feature: Tensor<S>,
    /// Channel mean of the thermal stride-8 inactive (pre-activation) map.
    pub thermal_inactive: Tensor<S>,
    /// Channel mean of the noise-erased RGB map.
    pub denoised: Tensor<S>,
}

/// Computes the diagnostic panels for one RGBT pair at the stride-8 level.
pub fn feature_panels<S: Scalar>(
    rgb_image: &Tensor<S>,
    thermal_image: &Tensor<S>,
    weights: &ModelWeights<S>,
    backbone: &crate::backbone::BackboneConfig,
) -> Result<FeaturePanels<S>> {
    use crate::backbone::{extract_features, Branch};
    let rgb_pyr = extract_features(rgb_image, weights, backbone, Branch::Rgb, false)?;
    let t_pyr = extract_features(thermal_image, weights, backbone, Branch::Thermal, true)?;
    let rgb_l0 = &rgb_pyr.levels[0].activated;
    let t_inact_l0 = t_pyr.levels[0].inactive.as_ref().expect("inactive maps requested");
    let denoised = erase_noise(rgb_l0, t_inact_l0)?;
    Ok(FeaturePanels {
        rgb_input: ops::channel_mean(rgb_image)?,
        rgb_feature: ops::channel_mean(rgb_l0)?,
        thermal_inactive: ops::channel_mean(t_inact_l0)?,
        denoised: ops::channel_mean(&denoised)?,
    })
}

/// Background mask on the stride-8 grid: a cell is background when its
/// 8×8 pixel square intersects no ground-truth box.
pub fn background_mask_level0(boxes: &[crate::head::BBox], input_size: usize) -> Vec<bool> {
    let cells = input_size / 8;
    let mut mask = vec![true; cells * cells];
    for b in boxes {
        let x0 = (b.x_min / 8.0).floor().max(0.0) as usize;
        let y0 = (b.y_min / 8.0).floor().max(0.0) as usize;
        let x1 = ((b.x_max / 8.0).ceil() as usize).min(cells);
        let y1 = ((b.y_max / 8.0).ceil() as usize).min(cells);
        for y in y0..y1 {
            for x in x0..x1 {
                mask[y * cells + x] = false;
            }
        }
    }
    mask
}

/// Mean absolute value of a `1×H×W` panel over masked-true cells.
pub fn masked_mean_abs<S: Scalar>(panel: &Tensor<S>, mask: &[bool]) -> Result<f64> {
    if panel.len() != mask.len() {
        return Err(Error::shape("masked_mean_abs", format!("panel {} vs mask {}", panel.len(), mask.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (&v, &keep) in panel.data().iter().zip(mask) {
        if keep {
            total += Scalar::to_f64(v).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("background mask is empty".to_string()));
    }
    Ok(total / count as f64)
}

/// Weight specifications for the erasure-fusion blocks of all three levels.
pub fn fusion_weight_specs(level_channels: &[usize; 3]) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    for (l, &c) in level_channels.iter().enumerate() {
        let k = SPATIAL_KERNEL;
        specs.push(WeightSpec::new(
            format!("fuse.l{l}.spatial.conv.w"),
            &[1, 2, k, k],
            Init::KaimingUniform { fan_in: 2 * k * k },
        ));
        specs.push(WeightSpec::new(format!("fuse.l{l}.spatial.conv.b"), &[1], Init::Const(0.0)));
        let cr = c / CHANNEL_REDUCTION;
        specs.push(WeightSpec::new(format!("fuse.l{l}.channel.fc1.fc.w"), &[cr, c], Init::KaimingUniform { fan_in: c }));
        specs.push(WeightSpec::new(format!("fuse.l{l}.channel.fc1.fc.b"), &[cr], Init::Const(0.0)));
        specs.push(WeightSpec::new(format!("fuse.l{l}.channel.fc2.fc.w"), &[c, cr], Init::KaimingUniform { fan_in: cr }));
        specs.push(WeightSpec::new(format!("fuse.l{l}.channel.fc2.fc.b"), &[c], Init::Const(0.0)));
        specs.extend(crate::backbone::conv_bn_specs(&format!("fuse.l{l}.out"), c, 2 * c, 1));
    }
    specs
}

/// Weight specifications for the concatenation-fusion ablation path.
pub fn cat_fusion_weight_specs(level_channels: &[usize; 3]) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    for (l, &c) in level_channels.iter().enumerate() {
        specs.extend(crate::backbone::conv_bn_specs(&format!("cat.l{l}.out"), c, 2 * c, 1));
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::materialize;

    fn fusion_test_weights(ch: [usize; 3]) -> ModelWeights<f32> {
        materialize(&fusion_weight_specs(&ch), 11)
    }

    #[test]
    fn erase_with_zero_thermal_is_identity() {
        let rgb = Tensor::<f32>::from_vec(&[2, 2, 2], (0..8).map(|i| i as f32 * 0.25).collect()).unwrap();
        let t = Tensor::zeros(&[2, 2, 2]);
        assert_eq!(erase_noise(&rgb, &t).unwrap(), rgb);
    }

    #[test]
    fn erase_passes_foreground_untouched() {
        let rgb = Tensor::<f32>::full(&[2, 3, 3], 0.7);
        let t = Tensor::full(&[2, 3, 3], 20.0);
        let out = erase_noise(&rgb, &t).unwrap();
        for (&o, &r) in out.data().iter().zip(rgb.data()) {
            assert!((o - r).abs() < 1e-5);
        }
    }

    #[test]
    fn erase_negative_thermal_scalar_value() {
        let rgb = Tensor::<f32>::zeros(&[1, 1, 1]);
        let t = Tensor::full(&[1, 1, 1], -3.0);
        let out = erase_noise(&rgb, &t).unwrap();
        assert!((out.data()[0] - (-2.857722)).abs() < 1e-5);
    }

    #[test]
    fn erase_shape_mismatch() {
        let rgb = Tensor::<f32>::zeros(&[2, 2, 2]);
        let t = Tensor::<f32>::zeros(&[2, 2, 4]);
        assert!(erase_noise(&rgb, &t).is_err());
    }

    #[test]
    fn zero_everything_gives_half_attention() {
        // zero conv/fc weights, neutral bn
        let mut w = ModelWeights::<f32>::new();
        for spec in fusion_weight_specs(&[4, 8, 8]) {
            let v = if spec.name.ends_with(".bn.gamma") || spec.name.ends_with(".bn.running_var") { 1.0 } else { 0.0 };
            w.insert(spec.name.clone(), Tensor::full(&spec.shape, v));
        }
        let f = Tensor::<f32>::zeros(&[4, 4, 4]);
        let sa = spatial_attention(&f, &w, "fuse.l0.spatial").unwrap();
        assert_eq!(sa.shape(), &[1, 4, 4]);
        assert!(sa.data().iter().all(|&v| v == 0.5));
        let ca = channel_attention(&f, &w, "fuse.l0.channel").unwrap();
        assert_eq!(ca.shape(), &[4, 1, 1]);
        assert!(ca.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fusion_weight_zero_inputs_is_half() {
        let f = Tensor::<f32>::zeros(&[4, 2, 2]);
        let att = AttentionWeights {
            foreground: Tensor::full(&[1, 2, 2], 0.5),
            background: Tensor::full(&[1, 2, 2], 0.5),
            channel: Tensor::full(&[4, 1, 1], 0.5),
        };
        let wf = fusion_weight(&f, &f, &att).unwrap();
        assert!(wf.0.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fusion_weight_foreground_one_suppresses_thermal() {
        let rgb = Tensor::<f32>::from_vec(&[4, 1, 1], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let t_inact = Tensor::full(&[4, 1, 1], -5.0);
        let att = AttentionWeights {
            foreground: Tensor::full(&[1, 1, 1], 1.0),
            background: Tensor::zeros(&[1, 1, 1]),
            channel: Tensor::full(&[4, 1, 1], 0.75),
        };
        let wf = fusion_weight(&rgb, &t_inact, &att).unwrap();
        let expect = ops::sigmoid(&rgb.scale(0.75)).unwrap();
        for (a, b) in wf.0.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn background_weight_is_exact_complement() {
        let w = fusion_test_weights([4, 8, 8]);
        let f = Tensor::<f32>::from_vec(&[4, 4, 4], (0..64).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let att = attention_weights(&f, &w, 0).unwrap();
        for (&fg, &bg) in att.foreground.data().iter().zip(att.background.data()) {
            assert_eq!(fg + bg, 1.0);
            assert!(fg > 0.0 && fg < 1.0);
        }
    }

    #[test]
    fn erasure_fuse_zero_weight_limit() {
        // identity-like 1x1 conv selecting the first C channels, W_fusion = 0
        let c = 4;
        let mut w = ModelWeights::<f32>::new();
        let mut conv = Tensor::zeros(&[c, 2 * c, 1, 1]);
        for i in 0..c {
            conv.data_mut()[i * 2 * c + i] = 1.0;
        }
        w.insert("fuse.l0.out.conv.w", conv);
        for spec in crate::backbone::bn_specs("fuse.l0.out", c) {
            let v = if spec.name.ends_with("gamma") || spec.name.ends_with("running_var") { 1.0 } else { 0.0 };
            w.insert(spec.name.clone(), Tensor::full(&spec.shape, v));
        }
        let rgb = Tensor::<f32>::from_vec(&[c, 2, 2], (0..16).map(|i| i as f32 * 0.1).collect()).unwrap();
        let t = Tensor::full(&[c, 2, 2], 5.0);
        let zero_w = FusionWeight(Tensor::zeros(&[c, 2, 2]));
        let out = erasure_fuse(&rgb, &t, &zero_w, &w, 0).unwrap();
        // conv(cat(rgb, rgb)) with identity rows -> bn(eps) -> silu; undo silu+bn approximately
        // instead check against the same pipeline computed directly:
        let manual = {
            let stacked = ops::concat_channels(&rgb, &rgb).unwrap();
            let conv = ops::conv2d(&stacked, w.get("fuse.l0.out.conv.w").unwrap(), None, 1, 0).unwrap();
            let (mean, var) = ops::channel_stats(&conv).unwrap();
            let bn = ops::batch_norm_apply(
                &conv,
                w.get("fuse.l0.out.bn.gamma").unwrap(),
                w.get("fuse.l0.out.bn.beta").unwrap(),
                &mean,
                &var,
                1e-5,
            )
            .unwrap();
            ops::silu(&bn).unwrap()
        };
        assert_eq!(out, manual);
    }

    #[test]
    fn fuse_level_deterministic_and_shape_preserving() {
        let w = fusion_test_weights([4, 8, 8]);
        let rgb = Tensor::<f32>::from_vec(&[4, 4, 4], (0..64).map(|i| (i as f32 * 0.11).cos()).collect()).unwrap();
        let t = Tensor::<f32>::from_vec(&[4, 4, 4], (0..64).map(|i| (i as f32 * 0.07).sin()).collect()).unwrap();
        let inact = Tensor::<f32>::from_vec(&[4, 4, 4], (0..64).map(|i| (i as f32 * 0.05) - 1.5).collect()).unwrap();
        let a = fuse_level(&rgb, &t, &inact, &w, 0).unwrap();
        let b = fuse_level(&rgb, &t, &inact, &w, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), rgb.shape());
    }
}
