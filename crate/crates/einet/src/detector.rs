//! Full detector assembly: backbone(s) + temporal enhancement + modality
//! fusion + neck + heads, with the ablation variants and cost accounting.

use std::collections::BTreeMap;

use crate::autograd::Var;
use crate::backbone::{backbone_forward, backbone_weight_specs, BackboneConfig, Branch};
use crate::error::{Error, Result};
use crate::fusion::{cat_fuse_level_var, cat_fusion_weight_specs, fuse_level_var, fusion_weight_specs};
use crate::head::{decode, heads_forward, nms, Detection, HeadConfig, RawLevel, RawLevelVars, RawPrediction};
use crate::neck::{neck_weight_specs, pafpn_forward};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tpe::{tpe_enhance, TemporalWindow};
use crate::weights::{materialize, ModelWeights, WeightSpec};

pub const DEFAULT_EVAL_CONF: f64 = 0.01;
pub const DEFAULT_DEMO_CONF: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.65;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    BaselineRgb,
    BaselineT,
    TpeOnly,
    MiCat,
    MiErasure,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::BaselineRgb, Variant::BaselineT, Variant::TpeOnly, Variant::MiCat, Variant::MiErasure, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaselineRgb => "baseline_rgb",
            Variant::BaselineT => "baseline_t",
            Variant::TpeOnly => "tpe_only",
            Variant::MiCat => "mi_cat",
            Variant::MiErasure => "mi_erasure",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }

    pub fn uses_tpe(self) -> bool {
        matches!(self, Variant::TpeOnly | Variant::Full)
    }

    pub fn uses_thermal(self) -> bool {
        matches!(self, Variant::BaselineT | Variant::MiCat | Variant::MiErasure | Variant::Full)
    }

    pub fn uses_rgb(self) -> bool {
        !matches!(self, Variant::BaselineT)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct VariantConfig {
    pub variant: Variant,
    pub window: TemporalWindow,
    pub include_current_residual: bool,
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        VariantConfig { variant, window: TemporalWindow::default(), include_current_residual: false }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

/// Frame offsets each modality must provide for a variant. Offset 0 is the
/// current frame.
pub fn required_offsets(vc: &VariantConfig) -> (Vec<i32>, Vec<i32>) {
    let mut rgb = Vec::new();
    let mut thermal = Vec::new();
    match vc.variant {
        Variant::BaselineRgb => rgb.push(0),
        Variant::BaselineT => thermal.push(0),
        Variant::MiCat | Variant::MiErasure => {
            rgb.push(0);
            thermal.push(0);
        }
        Variant::TpeOnly => {
            rgb.extend(vc.window.offsets());
            if vc.include_current_residual {
                rgb.push(0);
            }
        }
        Variant::Full => {
            rgb.extend(vc.window.offsets());
            thermal.extend(vc.window.offsets());
            thermal.push(0);
            if vc.include_current_residual {
                rgb.push(0);
            }
        }
    }
    rgb.sort_unstable();
    thermal.sort_unstable();
    (rgb, thermal)
}

pub fn model_weight_specs(mc: &ModelConfig, vc: &VariantConfig) -> Vec<WeightSpec> {
    let ch = mc.backbone.stage_channels;
    let mut specs = Vec::new();
    if vc.variant.uses_rgb() {
        specs.extend(backbone_weight_specs(&mc.backbone, Branch::Rgb));
    }
    if vc.variant.uses_thermal() {
        specs.extend(backbone_weight_specs(&mc.backbone, Branch::Thermal));
    }
    match vc.variant {
        Variant::MiCat => specs.extend(cat_fusion_weight_specs(&ch)),
        Variant::MiErasure | Variant::Full => specs.extend(fusion_weight_specs(&ch)),
        _ => {}
    }
    specs.extend(neck_weight_specs(ch));
    specs.extend(crate::head::head_weight_specs(ch, &mc.head));
    specs
}

pub fn init_model_weights<S: Scalar>(mc: &ModelConfig, vc: &VariantConfig, seed: u64) -> Result<ModelWeights<S>> {
    mc.backbone.validate()?;
    Ok(materialize(&model_weight_specs(mc, vc), seed))
}

fn check_frames<S: Scalar>(
    frames: &BTreeMap<i32, Var>,
    needed: &[i32],
    modality: &str,
    net: &Net<S>,
) -> Result<()> {
    for o in needed {
        let var = frames
            .get(o)
            .ok_or_else(|| Error::Window(format!("{modality} frame at offset {o:+} is required but missing")))?;
        net.tape.value(*var).dims3("infer")?;
    }
    Ok(())
}

/// Builds the variant's dataflow on the tape and returns the raw per-level
/// head outputs.
pub fn detector_forward<S: Scalar>(
    net: &mut Net<S>,
    mc: &ModelConfig,
    vc: &VariantConfig,
    rgb_frames: &BTreeMap<i32, Var>,
    t_frames: &BTreeMap<i32, Var>,
) -> Result<Vec<RawLevelVars>> {
    let (need_rgb, need_t) = required_offsets(vc);
    check_frames(rgb_frames, &need_rgb, "rgb", net)?;
    check_frames(t_frames, &need_t, "thermal", net)?;
    let cfg = &mc.backbone;

    let fused: [Var; 3] = match vc.variant {
        Variant::BaselineRgb => {
            let pyr = backbone_forward(net, rgb_frames[&0], cfg, Branch::Rgb, false)?;
            [pyr.levels[0].activated, pyr.levels[1].activated, pyr.levels[2].activated]
        }
        Variant::BaselineT => {
            let pyr = backbone_forward(net, t_frames[&0], cfg, Branch::Thermal, false)?;
            [pyr.levels[0].activated, pyr.levels[1].activated, pyr.levels[2].activated]
        }
        Variant::TpeOnly => {
            let enhanced = tpe_branch(net, cfg, Branch::Rgb, rgb_frames, vc)?;
            [enhanced[0], enhanced[1], enhanced[2]]
        }
        Variant::MiCat => {
            let rgb = backbone_forward(net, rgb_frames[&0], cfg, Branch::Rgb, false)?;
            let t = backbone_forward(net, t_frames[&0], cfg, Branch::Thermal, false)?;
            let mut out = Vec::with_capacity(3);
            for l in 0..3 {
                out.push(cat_fuse_level_var(net, l, rgb.levels[l].activated, t.levels[l].activated)?);
            }
            [out[0], out[1], out[2]]
        }
        Variant::MiErasure => {
            let rgb = backbone_forward(net, rgb_frames[&0], cfg, Branch::Rgb, false)?;
            let t = backbone_forward(net, t_frames[&0], cfg, Branch::Thermal, true)?;
            let mut out = Vec::with_capacity(3);
            for l in 0..3 {
                let inact = t.levels[l].inactive.expect("emit_inactive was requested");
                out.push(fuse_level_var(net, l, rgb.levels[l].activated, t.levels[l].activated, inact)?);
            }
            [out[0], out[1], out[2]]
        }
        Variant::Full => {
            let rgb_enhanced = tpe_branch(net, cfg, Branch::Rgb, rgb_frames, vc)?;
            let t_current = backbone_forward(net, t_frames[&0], cfg, Branch::Thermal, true)?;
            let t_enhanced = tpe_branch_with_current(net, cfg, Branch::Thermal, t_frames, vc, &t_current)?;
            let mut out = Vec::with_capacity(3);
            for l in 0..3 {
                let inact = t_current.levels[l].inactive.expect("emit_inactive was requested");
                out.push(fuse_level_var(net, l, rgb_enhanced[l], t_enhanced[l], inact)?);
            }
            [out[0], out[1], out[2]]
        }
    };

    let necked = pafpn_forward(net, fused, cfg.stage_channels)?;
    heads_forward(net, necked, &mc.head)
}

/// Per-level TPE over one modality branch.
fn tpe_branch<S: Scalar>(
    net: &mut Net<S>,
    cfg: &BackboneConfig,
    branch: Branch,
    frames: &BTreeMap<i32, Var>,
    vc: &VariantConfig,
) -> Result<Vec<Var>> {
    let current = if vc.include_current_residual {
        Some(backbone_forward(net, frames[&0], cfg, branch, false)?)
    } else {
        None
    };
    tpe_levels(net, cfg, branch, frames, vc, current.as_ref())
}

/// Like [`tpe_branch`] but reusing an already-computed current-frame
/// pyramid (the thermal branch computes it anyway for the inactive maps).
fn tpe_branch_with_current<S: Scalar>(
    net: &mut Net<S>,
    cfg: &BackboneConfig,
    branch: Branch,
    frames: &BTreeMap<i32, Var>,
    vc: &VariantConfig,
    current: &crate::backbone::Pyramid,
) -> Result<Vec<Var>> {
    let current = vc.include_current_residual.then_some(current);
    tpe_levels(net, cfg, branch, frames, vc, current)
}

fn tpe_levels<S: Scalar>(
    net: &mut Net<S>,
    cfg: &BackboneConfig,
    branch: Branch,
    frames: &BTreeMap<i32, Var>,
    vc: &VariantConfig,
    current: Option<&crate::backbone::Pyramid>,
) -> Result<Vec<Var>> {
    let mut neighbor_pyramids = BTreeMap::new();
    for &o in vc.window.offsets() {
        let frame = frames
            .get(&o)
            .ok_or_else(|| Error::Window(format!("offset {o:+} missing for {branch:?} branch")))?;
        neighbor_pyramids.insert(o, backbone_forward(net, *frame, cfg, branch, false)?);
    }
    let mut out = Vec::with_capacity(3);
    for l in 0..3 {
        let per_level: BTreeMap<i32, Var> =
            neighbor_pyramids.iter().map(|(&o, p)| (o, p.levels[l].activated)).collect();
        let cur = current.map(|p| p.levels[l].activated);
        out.push(tpe_enhance(net, &per_level, &vc.window, cur)?);
    }
    Ok(out)
}

/// One inference session: borrows read-only weights, owns thresholds.
pub struct DetectorSession<'w, S: Scalar> {
    pub mc: ModelConfig,
    pub vc: VariantConfig,
    pub weights: &'w ModelWeights<S>,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl<'w, S: Scalar> DetectorSession<'w, S> {
    pub fn new(mc: ModelConfig, vc: VariantConfig, weights: &'w ModelWeights<S>) -> Self {
        DetectorSession { mc, vc, weights, conf_threshold: DEFAULT_EVAL_CONF, nms_iou: DEFAULT_NMS_IOU }
    }

    /// Raw per-level maps for one frame window (inference mode).
    pub fn forward_raw(
        &self,
        rgb_frames: &BTreeMap<i32, Tensor<S>>,
        t_frames: &BTreeMap<i32, Tensor<S>>,
    ) -> Result<RawPrediction<S>> {
        let mut net = Net::new(self.weights, false);
        let rgb_vars: BTreeMap<i32, Var> = rgb_frames.iter().map(|(&o, t)| (o, net.input(t.clone()))).collect();
        let t_vars: BTreeMap<i32, Var> = t_frames.iter().map(|(&o, t)| (o, net.input(t.clone()))).collect();
        let raw = detector_forward(&mut net, &self.mc, &self.vc, &rgb_vars, &t_vars)?;
        Ok(RawPrediction {
            levels: raw
                .iter()
                .map(|lv| RawLevel {
                    stride: lv.stride,
                    cls: net.tape.value(lv.cls).clone(),
                    reg: net.tape.value(lv.reg).clone(),
                    obj: net.tape.value(lv.obj).clone(),
                })
                .collect(),
        })
    }

    /// Full inference: forward, decode, class-wise NMS. Frames must already
    /// be letterboxed to a square size divisible by 32.
    pub fn infer(
        &self,
        rgb_frames: &BTreeMap<i32, Tensor<S>>,
        t_frames: &BTreeMap<i32, Tensor<S>>,
    ) -> Result<Vec<Detection>> {
        let any = rgb_frames.values().next().or_else(|| t_frames.values().next());
        let (_, h, w) = any.ok_or_else(|| Error::Window("no frames provided".to_string()))?.dims3("infer")?;
        let raw = self.forward_raw(rgb_frames, t_frames)?;
        let dets = decode(&raw, self.conf_threshold, w as f64, h as f64)?;
        Ok(nms(&dets, self.nms_iou))
    }
}

/// Exact count of trainable scalar parameters, after checking that the
/// registry matches the variant's expected tensor set.
pub fn count_params<S: Scalar>(weights: &ModelWeights<S>, mc: &ModelConfig, vc: &VariantConfig) -> Result<usize> {
    let specs = model_weight_specs(mc, vc);
    if specs.len() != weights.len() {
        return Err(Error::Config(format!(
            "weights registry has {} tensors, variant {} expects {}",
            weights.len(),
            vc.variant,
            specs.len()
        )));
    }
    for spec in &specs {
        let t = weights.get(&spec.name)?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::Config(format!(
                "weight {} has shape {:?}, expected {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(weights.param_scalars())
}

/// Multiply-accumulate count ×2 over every conv and FC in one forward pass
/// at the given square input size, measured off an instrumented tape.
pub fn estimate_flops(mc: &ModelConfig, vc: &VariantConfig, input_size: usize) -> Result<u64> {
    if input_size % 32 != 0 {
        return Err(Error::Input(format!("input size must be divisible by 32, got {input_size}")));
    }
    let weights: ModelWeights<f32> = init_model_weights(mc, vc, 0)?;
    let mut net = Net::new(&weights, false);
    let zero = Tensor::<f32>::zeros(&[3, input_size, input_size]);
    let (need_rgb, need_t) = required_offsets(vc);
    let rgb: BTreeMap<i32, Var> = need_rgb.iter().map(|&o| (o, net.input(zero.clone()))).collect();
    let t: BTreeMap<i32, Var> = need_t.iter().map(|&o| (o, net.input(zero.clone()))).collect();
    detector_forward(&mut net, mc, vc, &rgb, &t)?;
    Ok(2 * net.tape.conv_fc_macs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mc() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig { stem_channels: 4, stage_channels: [4, 8, 8], blocks_per_stage: [1, 1, 1] },
            head: HeadConfig { num_classes: 7 },
        }
    }

    fn frames(size: usize, offsets: &[i32], fill: f32) -> BTreeMap<i32, Tensor<f32>> {
        offsets.iter().map(|&o| (o, Tensor::full(&[3, size, size], fill))).collect()
    }

    #[test]
    fn baseline_rgb_smoke_on_blank_image() {
        let mc = tiny_mc();
        let vc = VariantConfig::new(Variant::BaselineRgb);
        let w = init_model_weights::<f32>(&mc, &vc, 1).unwrap();
        let session = DetectorSession::new(mc, vc, &w);
        let dets = session.infer(&frames(64, &[0], 0.0), &BTreeMap::new()).unwrap();
        for d in &dets {
            assert!(d.score.is_finite());
            assert!(d.bbox.is_valid());
        }
    }

    #[test]
    fn full_variant_deterministic() {
        let mc = tiny_mc();
        let vc = VariantConfig::new(Variant::Full);
        let w = init_model_weights::<f32>(&mc, &vc, 2).unwrap();
        let session = DetectorSession::new(mc, vc, &w);
        let rgb = frames(64, &[-1, 1], 0.4);
        let t = frames(64, &[-1, 0, 1], 0.6);
        let a = session.infer(&rgb, &t).unwrap();
        let b = session.infer(&rgb, &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_frames_give_window_error() {
        let mc = tiny_mc();
        let vc = VariantConfig::new(Variant::Full);
        let w = init_model_weights::<f32>(&mc, &vc, 2).unwrap();
        let session = DetectorSession::new(mc, vc, &w);
        let rgb = frames(64, &[-1], 0.4); // +1 missing
        let t = frames(64, &[-1, 0, 1], 0.6);
        let err = session.infer(&rgb, &t).unwrap_err();
        assert!(matches!(err, Error::Window(_)));
    }

    #[test]
    fn variant_weights_mismatch_rejected() {
        let mc = tiny_mc();
        let baseline = VariantConfig::new(Variant::BaselineRgb);
        let w = init_model_weights::<f32>(&mc, &baseline, 1).unwrap();
        let full = VariantConfig::new(Variant::Full);
        let session = DetectorSession::new(mc, full, &w);
        let rgb = frames(64, &[-1, 1], 0.4);
        let t = frames(64, &[-1, 0, 1], 0.6);
        let err = session.infer(&rgb, &t).unwrap_err();
        assert!(matches!(err, Error::MissingWeight { .. }));
    }

    #[test]
    fn param_and_flop_orderings() {
        let mc = tiny_mc();
        let count = |v: Variant| {
            let vc = VariantConfig::new(v);
            let w = init_model_weights::<f32>(&mc, &vc, 0).unwrap();
            count_params(&w, &mc, &vc).unwrap()
        };
        let baseline = count(Variant::BaselineRgb);
        assert!(count(Variant::MiCat) > baseline);
        assert!(count(Variant::MiErasure) > baseline);
        assert_eq!(count(Variant::Full), count(Variant::MiErasure));
        assert_eq!(count(Variant::TpeOnly), baseline);

        let flops = |v: Variant| estimate_flops(&mc, &VariantConfig::new(v), 64).unwrap();
        assert!(flops(Variant::Full) > flops(Variant::TpeOnly));
        assert!(flops(Variant::TpeOnly) > flops(Variant::BaselineRgb));
        assert!(flops(Variant::MiErasure) > flops(Variant::MiCat));
    }

    #[test]
    fn single_conv_flops_closed_form() {
        // one 3x3 conv, cin=1, cout=1, 8x8 output, stride 1 → 2·9·64 = 1152
        let mut w = ModelWeights::<f32>::new();
        w.insert("only.conv.w", Tensor::zeros(&[1, 1, 3, 3]));
        let mut net = Net::new(&w, false);
        let x = net.input(Tensor::zeros(&[1, 8, 8]));
        net.conv(x, "only", 1, 1).unwrap();
        assert_eq!(2 * net.tape.conv_fc_macs(), 1152);
    }
}
