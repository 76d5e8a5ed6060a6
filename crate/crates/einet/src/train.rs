//! Simplified supervised training: center-cell target assignment, BCE +
//! IoU detection loss, SGD with momentum and weight decay, deterministic
//! loop with optional horizontal flip.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Var};
use crate::backbone::PYRAMID_STRIDES;
use crate::data::images::{load_rgb, load_thermal};
use crate::data::letterbox::letterbox;
use crate::data::Dataset;
use crate::detector::{detector_forward, required_offsets, ModelConfig, VariantConfig};
use crate::error::{Error, Result};
use crate::head::{encode_box, BBox, RawLevelVars};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tpe::clamp_triplet;
use crate::weights::{materialize, ModelWeights};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub horizontal_flip: bool,
    /// Probability of flipping a sample when `horizontal_flip` is on.
    pub flip_probability: f64,
    pub input_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 2,
            lr: 0.01,
            final_lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            horizontal_flip: true,
            flip_probability: 0.5,
            input_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".to_string()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!("input size must be a multiple of 32, got {}", self.input_size)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip probability must be in [0,1], got {}", self.flip_probability)));
        }
        Ok(())
    }

    /// Cosine decay from `lr` to `final_lr` across epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = if self.epochs <= 1 { 0.0 } else { epoch as f64 / (self.epochs - 1) as f64 };
        self.final_lr + 0.5 * (self.lr - self.final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

// ---------------------------------------------------------------------------
// SGD with momentum

pub struct OptimState<S> {
    velocity: BTreeMap<String, Tensor<S>>,
    pub momentum: S,
    pub weight_decay: S,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            velocity: BTreeMap::new(),
            momentum: S::from_f64(momentum),
            weight_decay: S::from_f64(weight_decay),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<S>> {
        self.velocity.get(name)
    }
}

/// `v ← m·v + g + wd·w; w ← w − lr·v`. Weight decay is skipped for norm
/// scale/shift parameters.
pub fn sgd_step<S: Scalar>(
    weights: &mut ModelWeights<S>,
    grads: &Gradients<S>,
    state: &mut OptimState<S>,
    lr: f64,
) -> Result<()> {
    let lr = S::from_f64(lr);
    for (name, grad) in grads.iter() {
        let w = weights.get_mut(name)?;
        if w.shape() != grad.shape() {
            return Err(Error::shape("sgd_step", format!("{name}: weight {:?} vs grad {:?}", w.shape(), grad.shape())));
        }
        let wd = if ModelWeights::<S>::is_norm_param(name) { S::zero() } else { state.weight_decay };
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for ((vi, &gi), wi) in v.data_mut().iter_mut().zip(grad.data()).zip(w.data_mut()) {
            *vi = state.momentum * *vi + gi + wd * *wi;
            *wi = *wi - lr * *vi;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// target assignment

#[derive(Clone, Debug)]
pub struct LabeledBox {
    pub class_id: usize,
    pub bbox: BBox,
    pub difficult: bool,
}

#[derive(Clone, Debug)]
pub struct Positive {
    /// Flattened `i·W + j` cell index at the assigned level.
    pub cell: usize,
    pub cell_i: usize,
    pub cell_j: usize,
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug)]
pub struct LevelTargets<S> {
    pub stride: usize,
    pub obj: Tensor<S>,
    pub positives: Vec<Positive>,
}

#[derive(Clone, Debug)]
pub struct Targets<S> {
    pub levels: Vec<LevelTargets<S>>,
}

impl<S: Scalar> Targets<S> {
    pub fn positive_count(&self) -> usize {
        self.levels.iter().map(|l| l.positives.len()).sum()
    }
}

/// Assigns each ground truth to the single cell containing its center, at
/// the level whose stride is the largest one ≤ max(w, h) (clamped to the
/// available levels). First ground truth wins a contested cell; difficult
/// boxes are not assigned.
pub fn assign_targets<S: Scalar>(gts: &[LabeledBox], input_size: usize) -> Targets<S> {
    let mut levels: Vec<LevelTargets<S>> = PYRAMID_STRIDES
        .iter()
        .map(|&stride| {
            let cells = input_size / stride;
            LevelTargets { stride, obj: Tensor::zeros(&[1, cells, cells]), positives: Vec::new() }
        })
        .collect();
    for gt in gts {
        if gt.difficult {
            continue;
        }
        let extent = (gt.bbox.x_max - gt.bbox.x_min).max(gt.bbox.y_max - gt.bbox.y_min);
        let level_idx = PYRAMID_STRIDES
            .iter()
            .rposition(|&s| (s as f64) <= extent)
            .unwrap_or(0);
        let level = &mut levels[level_idx];
        let cells = input_size / level.stride;
        let (i, j, _, _, _, _) = encode_box(&gt.bbox, level.stride, cells, cells);
        let flat = i * cells + j;
        if level.obj.data()[flat] != S::zero() {
            continue; // cell already claimed by an earlier ground truth
        }
        level.obj.data_mut()[flat] = S::one();
        level.positives.push(Positive { cell: flat, cell_i: i, cell_j: j, class_id: gt.class_id, bbox: gt.bbox });
    }
    Targets { levels }
}

// ---------------------------------------------------------------------------
// detection loss

/// `mean obj BCE (all cells) + mean cls BCE (positives) + mean (1 − IoU)
/// (positives)`; with no positives only the objectness term remains.
pub fn detection_loss<S: Scalar>(
    net: &mut Net<S>,
    raw: &[RawLevelVars],
    targets: &Targets<S>,
    num_classes: usize,
) -> Result<Var> {
    if raw.len() != targets.levels.len() {
        return Err(Error::shape("detection_loss", format!("{} levels vs {} targets", raw.len(), targets.levels.len())));
    }
    let mut total_cells = 0usize;
    let mut obj_sum: Option<Var> = None;
    let mut cls_sum: Option<Var> = None;
    let mut iou_sum: Option<Var> = None;
    let mut total_pos = 0usize;

    for (level, tgt) in raw.iter().zip(&targets.levels) {
        let obj_shape = net.tape.value(level.obj).shape().to_vec();
        if obj_shape != tgt.obj.shape() {
            return Err(Error::shape(
                "detection_loss",
                format!("objectness {obj_shape:?} vs target {:?}", tgt.obj.shape()),
            ));
        }
        total_cells += tgt.obj.len();
        let obj_bce = net.tape.bce_with_logits_sum(level.obj, tgt.obj.clone())?;
        obj_sum = Some(match obj_sum {
            None => obj_bce,
            Some(prev) => net.tape.add(prev, obj_bce)?,
        });

        if tgt.positives.is_empty() {
            continue;
        }
        total_pos += tgt.positives.len();
        let cells: Vec<usize> = tgt.positives.iter().map(|p| p.cell).collect();
        let k = cells.len();

        // class term: one-hot BCE on the gathered columns
        let gathered_cls = net.tape.gather_cells(level.cls, cells.clone())?;
        let mut one_hot = Tensor::zeros(&[num_classes, k]);
        for (col, pos) in tgt.positives.iter().enumerate() {
            one_hot.data_mut()[pos.class_id * k + col] = S::one();
        }
        let cls_bce = net.tape.bce_with_logits_sum(gathered_cls, one_hot)?;
        cls_sum = Some(match cls_sum {
            None => cls_bce,
            Some(prev) => net.tape.add(prev, cls_bce)?,
        });

        // IoU term: decode gathered regressions on the tape
        let stride = S::from_usize(tgt.stride);
        let gathered_reg = net.tape.gather_cells(level.reg, cells)?;
        let dx = net.tape.row(gathered_reg, 0)?;
        let dy = net.tape.row(gathered_reg, 1)?;
        let lw = net.tape.row(gathered_reg, 2)?;
        let lh = net.tape.row(gathered_reg, 3)?;
        let cell_x = net.tape.constant(Tensor::from_parts(
            vec![k],
            tgt.positives.iter().map(|p| S::from_usize(p.cell_j)).collect(),
        ));
        let cell_y = net.tape.constant(Tensor::from_parts(
            vec![k],
            tgt.positives.iter().map(|p| S::from_usize(p.cell_i)).collect(),
        ));
        let cx_cells = net.tape.add(dx, cell_x)?;
        let cx = net.tape.scale(cx_cells, stride);
        let cy_cells = net.tape.add(dy, cell_y)?;
        let cy = net.tape.scale(cy_cells, stride);
        let ew = net.tape.exp(lw)?;
        let bw = net.tape.scale(ew, stride);
        let eh = net.tape.exp(lh)?;
        let bh = net.tape.scale(eh, stride);
        let half = S::from_f64(0.5);
        let hw = net.tape.scale(bw, half);
        let hh = net.tape.scale(bh, half);
        let x1 = net.tape.sub(cx, hw)?;
        let x2 = net.tape.add(cx, hw)?;
        let y1 = net.tape.sub(cy, hh)?;
        let y2 = net.tape.add(cy, hh)?;

        let gt_vec = |f: &dyn Fn(&BBox) -> f64| -> Tensor<S> {
            Tensor::from_parts(vec![k], tgt.positives.iter().map(|p| S::from_f64(f(&p.bbox))).collect())
        };
        let gx1 = net.tape.constant(gt_vec(&|b| b.x_min));
        let gy1 = net.tape.constant(gt_vec(&|b| b.y_min));
        let gx2 = net.tape.constant(gt_vec(&|b| b.x_max));
        let gy2 = net.tape.constant(gt_vec(&|b| b.y_max));
        let garea = net.tape.constant(gt_vec(&|b| b.area()));

        let ix1 = net.tape.max(x1, gx1)?;
        let ix2 = net.tape.min(x2, gx2)?;
        let iy1 = net.tape.max(y1, gy1)?;
        let iy2 = net.tape.min(y2, gy2)?;
        let zeros = net.tape.constant(Tensor::zeros(&[k]));
        let iw_raw = net.tape.sub(ix2, ix1)?;
        let iw = net.tape.max(iw_raw, zeros)?;
        let ih_raw = net.tape.sub(iy2, iy1)?;
        let ih = net.tape.max(ih_raw, zeros)?;
        let inter = net.tape.mul(iw, ih)?;
        let parea = net.tape.mul(bw, bh)?;
        let areas = net.tape.add(parea, garea)?;
        let union = net.tape.sub(areas, inter)?;
        let iou = net.tape.div(inter, union)?;
        let ones = net.tape.constant(Tensor::full(&[k], S::one()));
        let one_minus = net.tape.sub(ones, iou)?;
        let level_iou = net.tape.sum_all(one_minus);
        iou_sum = Some(match iou_sum {
            None => level_iou,
            Some(prev) => net.tape.add(prev, level_iou)?,
        });
    }

    let mut loss = net.tape.scale(obj_sum.expect("at least one level"), S::one() / S::from_usize(total_cells));
    if total_pos > 0 {
        let cls_mean = net.tape.scale(cls_sum.unwrap(), S::one() / S::from_usize(total_pos * num_classes));
        loss = net.tape.add(loss, cls_mean)?;
        let iou_mean = net.tape.scale(iou_sum.unwrap(), S::one() / S::from_usize(total_pos));
        loss = net.tape.add(loss, iou_mean)?;
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone)]
struct LoadedFrame<S> {
    rgb: Tensor<S>,
    thermal: Tensor<S>,
    boxes: Vec<LabeledBox>,
}

struct LoadedVideo<S> {
    frames: Vec<LoadedFrame<S>>,
}

fn flip_image<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = t.clone();
    for ch in 0..c {
        for y in 0..h {
            let row = &mut out.data_mut()[(ch * h + y) * w..(ch * h + y + 1) * w];
            row.reverse();
        }
    }
    out
}

fn flip_boxes(boxes: &[LabeledBox], width: f64) -> Vec<LabeledBox> {
    boxes
        .iter()
        .map(|b| LabeledBox {
            class_id: b.class_id,
            difficult: b.difficult,
            bbox: BBox::new(width - b.bbox.x_max, b.bbox.y_min, width - b.bbox.x_min, b.bbox.y_max),
        })
        .collect()
}

fn load_frames<S: Scalar>(dataset: &Dataset, input_size: usize) -> Result<Vec<LoadedVideo<S>>> {
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for video in &dataset.videos {
        let mut frames = Vec::with_capacity(video.frames.len());
        for frame in &video.frames {
            let rgb_src = load_rgb::<S>(&frame.rgb_path)?;
            let t_src = load_thermal::<S>(&frame.thermal_path)?;
            if rgb_src.shape() != t_src.shape() {
                return Err(Error::Pairing {
                    id: frame.frame_id.clone(),
                    detail: format!("RGB {:?} vs thermal {:?} dimensions", rgb_src.shape(), t_src.shape()),
                });
            }
            let (rgb, tf) = letterbox(&rgb_src, input_size)?;
            let (thermal, _) = letterbox(&t_src, input_size)?;
            let boxes = frame
                .annotation
                .objects
                .iter()
                .map(|o| LabeledBox {
                    class_id: o.class_id,
                    difficult: o.difficult,
                    bbox: tf.apply_box(&BBox::new(
                        o.bbox[0] as f64,
                        o.bbox[1] as f64,
                        o.bbox[2] as f64,
                        o.bbox[3] as f64,
                    )),
                })
                .collect();
            frames.push(LoadedFrame { rgb, thermal, boxes });
        }
        videos.push(LoadedVideo { frames });
    }
    Ok(videos)
}

/// One training sample: forward the window, compute the loss, return grads.
#[allow(clippy::too_many_arguments)]
fn sample_pass<S: Scalar>(
    weights: &ModelWeights<S>,
    mc: &ModelConfig,
    vc: &VariantConfig,
    video: &LoadedVideo<S>,
    t: usize,
    flip: bool,
    input_size: usize,
) -> Result<(f64, Gradients<S>, Vec<crate::net::BnBatchStat<S>>)> {
    let (need_rgb, need_t) = required_offsets(vc);
    let all_offsets: Vec<i32> = {
        let mut v: Vec<i32> = need_rgb.iter().chain(&need_t).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let window_like = if all_offsets == [0] {
        None
    } else {
        Some(crate::tpe::TemporalWindow::new(&all_offsets.iter().copied().filter(|&o| o != 0).collect::<Vec<_>>())?)
    };
    let mut index_of = BTreeMap::new();
    index_of.insert(0, t.min(video.frames.len() - 1));
    if let Some(w) = &window_like {
        for (o, idx) in clamp_triplet(video.frames.len(), t, w)? {
            index_of.insert(o, idx);
        }
    }

    let mut net = Net::new(weights, true);
    let fetch = |frames: &LoadedFrame<S>, rgb: bool| -> Tensor<S> {
        let img = if rgb { &frames.rgb } else { &frames.thermal };
        if flip {
            flip_image(img)
        } else {
            img.clone()
        }
    };
    let rgb_vars: BTreeMap<i32, Var> = need_rgb
        .iter()
        .map(|&o| {
            let frame = &video.frames[index_of[&o]];
            (o, net.input(fetch(frame, true)))
        })
        .collect();
    let t_vars: BTreeMap<i32, Var> = need_t
        .iter()
        .map(|&o| {
            let frame = &video.frames[index_of[&o]];
            (o, net.input(fetch(frame, false)))
        })
        .collect();

    let raw = detector_forward(&mut net, mc, vc, &rgb_vars, &t_vars)?;
    let current = &video.frames[index_of[&0]];
    let boxes = if flip { flip_boxes(&current.boxes, input_size as f64) } else { current.boxes.clone() };
    let targets = assign_targets::<S>(&boxes, input_size);
    let loss = detection_loss(&mut net, &raw, &targets, mc.head.num_classes)?;
    let loss_value = net.tape.value(loss).item()?.to_f64();
    let grads = net.tape.backward(loss)?;
    Ok((loss_value, grads, std::mem::take(&mut net.bn_stats)))
}

fn apply_bn_updates<S: Scalar>(weights: &mut ModelWeights<S>, stats: &[crate::net::BnBatchStat<S>]) -> Result<()> {
    let m = S::from_f64(BN_MOMENTUM);
    for stat in stats {
        let mean_name = format!("{}.bn.running_mean", stat.prefix);
        let var_name = format!("{}.bn.running_var", stat.prefix);
        let rm = weights.get_mut(&mean_name)?;
        for (r, &b) in rm.data_mut().iter_mut().zip(stat.mean.data()) {
            *r = (S::one() - m) * *r + m * b;
        }
        let rv = weights.get_mut(&var_name)?;
        for (r, &b) in rv.data_mut().iter_mut().zip(stat.var.data()) {
            *r = (S::one() - m) * *r + m * b;
        }
    }
    Ok(())
}

/// Deterministic training over a dataset; returns the trained weights and
/// the per-epoch mean loss history.
pub fn train_loop<S: Scalar>(
    dataset: &Dataset,
    mc: &ModelConfig,
    vc: &VariantConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelWeights<S>, Vec<(usize, f64)>)> {
    tc.validate()?;
    if dataset.frame_count() == 0 {
        return Err(Error::Input("training dataset is empty".to_string()));
    }
    let videos = load_frames::<S>(dataset, tc.input_size)?;
    let mut weights: ModelWeights<S> = materialize(&crate::detector::model_weight_specs(mc, vc), tc.seed);
    let mut optim = OptimState::new(tc.momentum, tc.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    // flips draw from their own stream so toggling augmentation cannot
    // perturb the shuffle sequence
    let mut flip_rng = ChaCha8Rng::seed_from_u64(crate::weights::tensor_seed(tc.seed, "horizontal_flip"));

    let mut samples: Vec<(usize, usize)> = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        for fi in 0..video.frames.len() {
            samples.push((vi, fi));
        }
    }

    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        samples.shuffle(&mut rng);
        let lr = tc.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(tc.batch_size) {
            let mut merged: Option<Gradients<S>> = None;
            let mut bn_updates = Vec::new();
            let mut batch_loss = 0.0;
            for &(vi, fi) in batch {
                let flip = tc.horizontal_flip && flip_rng.random_bool(tc.flip_probability);
                let (loss, grads, stats) = sample_pass(&weights, mc, vc, &videos[vi], fi, flip, tc.input_size)?;
                batch_loss += loss;
                bn_updates.extend(stats);
                merged = Some(match merged {
                    None => grads,
                    Some(mut acc) => {
                        acc.accumulate(&grads)?;
                        acc
                    }
                });
            }
            let mut grads = merged.expect("non-empty batch");
            grads.scale(S::one() / S::from_usize(batch.len()));
            sgd_step(&mut weights, &grads, &mut optim, lr)?;
            apply_bn_updates(&mut weights, &bn_updates)?;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / samples.len() as f64;
        history.push((epoch, mean_loss));
        on_epoch(epoch, mean_loss);
    }
    Ok((weights, history))
}

/// `epoch,loss` comma-separated lines.
pub fn format_loss_history(history: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in history {
        out.push_str(&format!("{epoch},{loss:.6}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_hand_iteration() {
        let mut w = ModelWeights::<f64>::new();
        w.insert("p", Tensor::scalar(1.0));
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::scalar(1.0));
        let mut st = OptimState::new(0.9, 0.0);
        sgd_step(&mut w, &grads, &mut st, 0.1).unwrap();
        assert!((w.get("p").unwrap().data()[0] - 0.9).abs() < 1e-12);
        sgd_step(&mut w, &grads, &mut st, 0.1).unwrap();
        assert!((st.velocity("p").unwrap().data()[0] - 1.9).abs() < 1e-12);
        assert!((w.get("p").unwrap().data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn sgd_weight_decay_only() {
        let mut w = ModelWeights::<f64>::new();
        w.insert("p", Tensor::scalar(1.0));
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::scalar(0.0));
        let mut st = OptimState::new(0.9, 0.0005);
        sgd_step(&mut w, &grads, &mut st, 1.0).unwrap();
        assert!((w.get("p").unwrap().data()[0] - 0.9995).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_everything_is_identity() {
        let mut w = ModelWeights::<f64>::new();
        w.insert("p", Tensor::from_vec(&[2], vec![0.3, -0.4]).unwrap());
        let before = w.get("p").unwrap().clone();
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::zeros(&[2]));
        let mut st = OptimState::new(0.9, 0.0);
        sgd_step(&mut w, &grads, &mut st, 0.5).unwrap();
        assert_eq!(w.get("p").unwrap(), &before);
    }

    #[test]
    fn sgd_skips_decay_for_norm_params() {
        let mut w = ModelWeights::<f64>::new();
        w.insert("layer.bn.gamma", Tensor::scalar(1.0));
        let mut grads = Gradients::default();
        grads.insert("layer.bn.gamma", Tensor::scalar(0.0));
        let mut st = OptimState::new(0.9, 0.1);
        sgd_step(&mut w, &grads, &mut st, 1.0).unwrap();
        assert_eq!(w.get("layer.bn.gamma").unwrap().data()[0], 1.0);
    }

    #[test]
    fn assignment_rule_examples() {
        // 16x16 box centered at (32,32): largest stride <= 16 is 16, cell (2,2)
        let gts = vec![LabeledBox {
            class_id: 0,
            difficult: false,
            bbox: BBox::new(24.0, 24.0, 40.0, 40.0),
        }];
        let t = assign_targets::<f32>(&gts, 64);
        assert!(t.levels[0].positives.is_empty());
        assert_eq!(t.levels[1].positives.len(), 1);
        let p = &t.levels[1].positives[0];
        assert_eq!((p.cell_i, p.cell_j), (2, 2));
        assert!(t.levels[2].positives.is_empty());
    }

    #[test]
    fn empty_gt_all_negative() {
        let t = assign_targets::<f32>(&[], 64);
        assert_eq!(t.positive_count(), 0);
        for lv in &t.levels {
            assert!(lv.obj.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tiny_box_clamps_to_stride8_and_huge_to_stride32() {
        let gts = vec![
            LabeledBox { class_id: 0, difficult: false, bbox: BBox::new(0.0, 0.0, 4.0, 4.0) },
            LabeledBox { class_id: 1, difficult: false, bbox: BBox::new(8.0, 8.0, 60.0, 52.0) },
        ];
        let t = assign_targets::<f32>(&gts, 64);
        assert_eq!(t.levels[0].positives.len(), 1);
        assert_eq!(t.levels[2].positives.len(), 1);
    }

    #[test]
    fn difficult_not_assigned() {
        let gts = vec![LabeledBox { class_id: 0, difficult: true, bbox: BBox::new(0.0, 0.0, 20.0, 20.0) }];
        let t = assign_targets::<f32>(&gts, 64);
        assert_eq!(t.positive_count(), 0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let tc = TrainConfig { epochs: 10, lr: 0.01, final_lr: 1e-4, ..Default::default() };
        assert!((tc.lr_at(0) - 0.01).abs() < 1e-12);
        assert!((tc.lr_at(9) - 1e-4).abs() < 1e-12);
        let one = TrainConfig { epochs: 1, ..Default::default() };
        assert!((one.lr_at(0) - one.lr).abs() < 1e-12);
    }
}
