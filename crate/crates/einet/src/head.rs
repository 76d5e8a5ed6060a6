//! Decoupled detection heads, anchor-free box decoding, IoU, and NMS.
//!
//! Per level: a two-conv classification stem and a two-conv regression stem
//! (3×3, conv+bn+SiLU), with 1×1 output convs for class logits, box
//! regression `(dx, dy, log w, log h)`, and objectness.

use crate::autograd::Var;
use crate::backbone::{conv_bn_specs, PYRAMID_STRIDES};
use crate::error::{Error, Result};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{Init, WeightSpec};

/// Objectness bias starts at a 1% prior so early training is not swamped
/// by negative cells.
pub const OBJ_PRIOR_BIAS: f64 = -4.59511985013459;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub num_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { num_classes: crate::data::CLASS_NAMES.len() }
    }
}

/// Tape-level raw outputs of one level.
#[derive(Clone, Copy, Debug)]
pub struct RawLevelVars {
    pub stride: usize,
    pub cls: Var,
    pub reg: Var,
    pub obj: Var,
}

/// Tensor-level raw prediction (three levels, strides 8/16/32).
#[derive(Clone, Debug)]
pub struct RawPrediction<S> {
    pub levels: Vec<RawLevel<S>>,
}

#[derive(Clone, Debug)]
pub struct RawLevel<S> {
    pub stride: usize,
    /// `K×H×W` class logits.
    pub cls: Tensor<S>,
    /// `4×H×W` box regression `(dx, dy, log w, log h)`.
    pub reg: Tensor<S>,
    /// `1×H×W` objectness logit.
    pub obj: Tensor<S>,
}

pub fn heads_forward<S: Scalar>(
    net: &mut Net<S>,
    feats: [Var; 3],
    cfg: &HeadConfig,
) -> Result<Vec<RawLevelVars>> {
    let mut out = Vec::with_capacity(3);
    for (l, &x) in feats.iter().enumerate() {
        let p = format!("head.l{l}");
        let (c0, _) = net.conv_bn_silu(x, &format!("{p}.cls0"), 1, 1)?;
        let (c1, _) = net.conv_bn_silu(c0, &format!("{p}.cls1"), 1, 1)?;
        let cls = net.conv(c1, &format!("{p}.cls_out"), 1, 0)?;
        let (r0, _) = net.conv_bn_silu(x, &format!("{p}.reg0"), 1, 1)?;
        let (r1, _) = net.conv_bn_silu(r0, &format!("{p}.reg1"), 1, 1)?;
        let reg = net.conv(r1, &format!("{p}.reg_out"), 1, 0)?;
        let obj = net.conv(r1, &format!("{p}.obj_out"), 1, 0)?;
        out.push(RawLevelVars { stride: PYRAMID_STRIDES[l], cls, reg, obj });
    }
    let _ = cfg;
    Ok(out)
}

pub fn head_weight_specs(level_channels: [usize; 3], cfg: &HeadConfig) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    for (l, &c) in level_channels.iter().enumerate() {
        let p = format!("head.l{l}");
        specs.extend(conv_bn_specs(&format!("{p}.cls0"), c, c, 3));
        specs.extend(conv_bn_specs(&format!("{p}.cls1"), c, c, 3));
        specs.extend(conv_bn_specs(&format!("{p}.reg0"), c, c, 3));
        specs.extend(conv_bn_specs(&format!("{p}.reg1"), c, c, 3));
        specs.push(WeightSpec::new(format!("{p}.cls_out.conv.w"), &[cfg.num_classes, c, 1, 1], Init::KaimingUniform { fan_in: c }));
        specs.push(WeightSpec::new(format!("{p}.cls_out.conv.b"), &[cfg.num_classes], Init::Const(0.0)));
        specs.push(WeightSpec::new(format!("{p}.reg_out.conv.w"), &[4, c, 1, 1], Init::KaimingUniform { fan_in: c }));
        specs.push(WeightSpec::new(format!("{p}.reg_out.conv.b"), &[4], Init::Const(0.0)));
        specs.push(WeightSpec::new(format!("{p}.obj_out.conv.w"), &[1, c, 1, 1], Init::KaimingUniform { fan_in: c }));
        specs.push(WeightSpec::new(format!("{p}.obj_out.conv.b"), &[1], Init::Const(OBJ_PRIOR_BIAS)));
    }
    specs
}

// ---------------------------------------------------------------------------
// boxes and decoding

/// Axis-aligned box in input-image pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }
}

/// Intersection over union; degenerate boxes contribute zero overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Decodes raw predictions into detections.
///
/// Per cell `(i, j)` at stride `s`: center `((j + dx)·s, (i + dy)·s)`, size
/// `(exp(lw)·s, exp(lh)·s)`. Score is `obj_prob × cls_prob` of the best
/// class; detections below `conf_threshold` or degenerate after clipping to
/// the image bounds are dropped.
pub fn decode<S: Scalar>(
    raw: &RawPrediction<S>,
    conf_threshold: f64,
    img_w: f64,
    img_h: f64,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for level in &raw.levels {
        let (k, h, w) = level.cls.dims3("decode")?;
        let s = level.stride as f64;
        for i in 0..h {
            for j in 0..w {
                let obj = level.obj.at3(0, i, j).to_f64();
                let obj_p = 1.0 / (1.0 + (-obj).exp());
                let (mut best_k, mut best_logit) = (0usize, level.cls.at3(0, i, j));
                for kk in 1..k {
                    let v = level.cls.at3(kk, i, j);
                    if v > best_logit {
                        best_logit = v;
                        best_k = kk;
                    }
                }
                let cls_p = 1.0 / (1.0 + (-best_logit.to_f64()).exp());
                let score = obj_p * cls_p;
                if score < conf_threshold {
                    continue;
                }
                let dx = level.reg.at3(0, i, j).to_f64();
                let dy = level.reg.at3(1, i, j).to_f64();
                let lw = level.reg.at3(2, i, j).to_f64();
                let lh = level.reg.at3(3, i, j).to_f64();
                let cx = (j as f64 + dx) * s;
                let cy = (i as f64 + dy) * s;
                let bw = lw.exp() * s;
                let bh = lh.exp() * s;
                let bbox = BBox {
                    x_min: (cx - bw / 2.0).clamp(0.0, img_w),
                    y_min: (cy - bh / 2.0).clamp(0.0, img_h),
                    x_max: (cx + bw / 2.0).clamp(0.0, img_w),
                    y_max: (cy + bh / 2.0).clamp(0.0, img_h),
                };
                if bbox.is_valid() {
                    out.push(Detection { class_id: best_k, score, bbox });
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`decode`]'s box mapping for a ground-truth box snapped to the
/// cell containing its center. Returns `(cell_i, cell_j, dx, dy, lw, lh)`.
pub fn encode_box(bbox: &BBox, stride: usize, level_h: usize, level_w: usize) -> (usize, usize, f64, f64, f64, f64) {
    let s = stride as f64;
    let cx = (bbox.x_min + bbox.x_max) / 2.0;
    let cy = (bbox.y_min + bbox.y_max) / 2.0;
    let j = ((cx / s).floor() as usize).min(level_w - 1);
    let i = ((cy / s).floor() as usize).min(level_h - 1);
    let dx = cx / s - j as f64;
    let dy = cy / s - i as f64;
    let lw = ((bbox.x_max - bbox.x_min) / s).ln();
    let lh = ((bbox.y_max - bbox.y_min) / s).ln();
    (i, j, dx, dy, lw, lh)
}

fn det_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.bbox.x_min.partial_cmp(&b.bbox.x_min).unwrap_or(std::cmp::Ordering::Equal))
        .then(a.bbox.y_min.partial_cmp(&b.bbox.y_min).unwrap_or(std::cmp::Ordering::Equal))
}

/// Greedy class-wise non-maximum suppression by descending score; ties break
/// on smaller `x_min`, then smaller `y_min`. A detection is suppressed when
/// it overlaps a kept same-class detection with IoU above the threshold.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| det_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for det in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == det.class_id && iou(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det.clone());
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// line-oriented detection serialization

/// `frame_id class_id score x_min y_min x_max y_max` with 6-decimal fields.
pub fn format_detection(frame_id: &str, det: &Detection) -> String {
    format!(
        "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
        frame_id, det.class_id, det.score, det.bbox.x_min, det.bbox.y_min, det.bbox.x_max, det.bbox.y_max
    )
}

pub fn parse_detections(text: &str) -> Result<Vec<(String, Detection)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(Error::Parse { line: lineno + 1, detail: format!("expected 7 fields, got {}", parts.len()) });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse { line: lineno + 1, detail: format!("bad number '{s}'") })
        };
        let class_id = parts[1]
            .parse::<usize>()
            .map_err(|_| Error::Parse { line: lineno + 1, detail: format!("bad class id '{}'", parts[1]) })?;
        let det = Detection {
            class_id,
            score: parse_f(parts[2])?,
            bbox: BBox::new(parse_f(parts[3])?, parse_f(parts[4])?, parse_f(parts[5])?, parse_f(parts[6])?),
        };
        out.push((parts[0].to_string(), det));
    }
    Ok(out)
}
