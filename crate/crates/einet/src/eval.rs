//! AP50 / AP(0.5:0.95) evaluation, per-class statistics, FPS benchmarking,
//! and the ablation report.
//!
//! Matching is greedy by descending score with one-to-one ground-truth
//! assignment and a closed boundary (IoU ≥ threshold counts). Difficult
//! ground truth is excluded from both matching penalties and the recall
//! denominator. AP uses 101-point interpolated precision integration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{Dataset, CLASS_NAMES};
use crate::data::images::{load_rgb, load_thermal};
use crate::data::letterbox::letterbox;
use crate::detector::{count_params, estimate_flops, required_offsets, DetectorSession, ModelConfig, VariantConfig};
use crate::error::{Error, Result};
use crate::head::{iou, BBox, Detection};
use crate::tensor::Tensor;
use crate::tpe::{clamp_triplet, TemporalWindow};
use crate::train::{train_loop, TrainConfig};
use crate::weights::ModelWeights;

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Clone, Debug)]
pub struct GtBox {
    pub class_id: usize,
    pub bbox: BBox,
    pub difficult: bool,
}

#[derive(Clone, Debug)]
pub struct ClassEval {
    pub ap_per_threshold: [f64; 10],
    pub gt_count: usize,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    /// Indexed by class id; `None` when the class has no ground truth.
    pub per_class: Vec<Option<ClassEval>>,
    pub ap50: f64,
    pub ap: f64,
    pub gt_count: usize,
    pub det_count: usize,
}

/// Sorted detection references with a deterministic global order.
fn sorted_dets<'a>(
    dets: &'a BTreeMap<String, Vec<Detection>>,
    class_id: usize,
) -> Vec<(&'a String, &'a Detection)> {
    let mut list: Vec<(&String, &Detection)> = dets
        .iter()
        .flat_map(|(frame, v)| v.iter().filter(|d| d.class_id == class_id).map(move |d| (frame, d)))
        .collect();
    list.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
            .then(a.1.bbox.x_min.partial_cmp(&b.1.bbox.x_min).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.1.bbox.y_min.partial_cmp(&b.1.bbox.y_min).unwrap_or(std::cmp::Ordering::Equal))
    });
    list
}

/// 101-point interpolated AP over one class at one IoU threshold, or `None`
/// when the class has no non-difficult ground truth.
fn class_ap(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<GtBox>>,
    class_id: usize,
    iou_threshold: f64,
) -> Option<f64> {
    let mut gt_total = 0usize;
    for boxes in gts.values() {
        gt_total += boxes.iter().filter(|g| g.class_id == class_id && !g.difficult).count();
    }
    if gt_total == 0 {
        return None;
    }

    let ordered = sorted_dets(dets, class_id);
    let mut matched: BTreeMap<&String, Vec<bool>> = BTreeMap::new();
    let mut tps: Vec<bool> = Vec::new(); // per counted detection (ignored ones dropped)
    for (frame, det) in ordered {
        let empty = Vec::new();
        let frame_gts = gts.get(frame).unwrap_or(&empty);
        let used = matched.entry(frame).or_insert_with(|| vec![false; frame_gts.len()]);
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in frame_gts.iter().enumerate() {
            if gt.class_id != class_id || gt.difficult || used[gi] {
                continue;
            }
            let ov = iou(&det.bbox, &gt.bbox);
            if ov >= iou_threshold && best.map(|(_, b)| ov > b).unwrap_or(true) {
                best = Some((gi, ov));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
            tps.push(true);
            continue;
        }
        // overlap with difficult ground truth is ignored entirely
        let hits_difficult = frame_gts
            .iter()
            .any(|gt| gt.class_id == class_id && gt.difficult && iou(&det.bbox, &gt.bbox) >= iou_threshold);
        if !hits_difficult {
            tps.push(false);
        }
    }

    let mut precisions = Vec::with_capacity(tps.len());
    let mut recalls = Vec::with_capacity(tps.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tps.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / gt_total as f64);
    }
    // running max from the right gives the monotone envelope
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut idx = 0usize;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        while idx < recalls.len() && recalls[idx] < r {
            idx += 1;
        }
        if idx < envelope.len() {
            ap += envelope[idx];
        }
    }
    Some(ap / 101.0)
}

/// Per-class AP at one IoU threshold (`None` for classes without GT).
pub fn average_precision(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<GtBox>>,
    iou_threshold: f64,
) -> Vec<Option<f64>> {
    (0..CLASS_NAMES.len()).map(|c| class_ap(dets, gts, c, iou_threshold)).collect()
}

/// AP50 and mean AP over the ten COCO thresholds.
pub fn coco_map(dets: &BTreeMap<String, Vec<Detection>>, gts: &BTreeMap<String, Vec<GtBox>>) -> EvalResult {
    let mut per_class: Vec<Option<ClassEval>> = Vec::with_capacity(CLASS_NAMES.len());
    for c in 0..CLASS_NAMES.len() {
        let gt_count: usize = gts
            .values()
            .map(|v| v.iter().filter(|g| g.class_id == c && !g.difficult).count())
            .sum();
        if gt_count == 0 {
            per_class.push(None);
            continue;
        }
        let mut aps = [0.0; 10];
        for (ti, &thr) in IOU_THRESHOLDS.iter().enumerate() {
            aps[ti] = class_ap(dets, gts, c, thr).unwrap_or(0.0);
        }
        per_class.push(Some(ClassEval { ap_per_threshold: aps, gt_count }));
    }
    let classes_with_gt: Vec<&ClassEval> = per_class.iter().flatten().collect();
    let (ap50, ap) = if classes_with_gt.is_empty() {
        (0.0, 0.0)
    } else {
        let n = classes_with_gt.len() as f64;
        let ap50 = classes_with_gt.iter().map(|c| c.ap_per_threshold[0]).sum::<f64>() / n;
        let ap = classes_with_gt
            .iter()
            .map(|c| c.ap_per_threshold.iter().sum::<f64>() / 10.0)
            .sum::<f64>()
            / n;
        (ap50, ap)
    };
    EvalResult {
        per_class,
        ap50,
        ap,
        gt_count: gts.values().map(|v| v.len()).sum(),
        det_count: dets.values().map(|v| v.len()).sum(),
    }
}

/// Ground-truth boxes per frame id.
pub fn dataset_ground_truth(dataset: &Dataset) -> BTreeMap<String, Vec<GtBox>> {
    let mut out = BTreeMap::new();
    for frame in dataset.frames() {
        let boxes = frame
            .annotation
            .objects
            .iter()
            .map(|o| GtBox {
                class_id: o.class_id,
                difficult: o.difficult,
                bbox: BBox::new(o.bbox[0] as f64, o.bbox[1] as f64, o.bbox[2] as f64, o.bbox[3] as f64),
            })
            .collect();
        out.insert(frame.frame_id.clone(), boxes);
    }
    out
}

/// Runs one video's frames through the detector, mapping detections back
/// to source-image coordinates.
fn infer_video(
    session: &DetectorSession<'_, f32>,
    video: &crate::data::Video,
    input_size: usize,
) -> Result<Vec<(String, Vec<Detection>)>> {
    let (need_rgb, need_t) = required_offsets(&session.vc);
    let offsets: Vec<i32> = {
        let mut v: Vec<i32> = need_rgb.iter().chain(&need_t).copied().filter(|&o| o != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let window = if offsets.is_empty() { None } else { Some(TemporalWindow::new(&offsets)?) };

    let mut out = Vec::with_capacity(video.frames.len());
    type Cached = (Tensor<f32>, crate::data::letterbox::LetterboxTransform);
    let mut rgb_cache: BTreeMap<usize, Cached> = BTreeMap::new();
    let mut t_cache: BTreeMap<usize, Cached> = BTreeMap::new();
    for (t_idx, frame) in video.frames.iter().enumerate() {
        let mut index_of: BTreeMap<i32, usize> = BTreeMap::new();
        index_of.insert(0, t_idx);
        if let Some(w) = &window {
            index_of.extend(clamp_triplet(video.frames.len(), t_idx, w)?);
        }
        for (&o, &fi) in &index_of {
            if need_rgb.contains(&o) && !rgb_cache.contains_key(&fi) {
                let src = load_rgb::<f32>(&video.frames[fi].rgb_path)?;
                rgb_cache.insert(fi, letterbox(&src, input_size)?);
            }
            if need_t.contains(&o) && !t_cache.contains_key(&fi) {
                let src = load_thermal::<f32>(&video.frames[fi].thermal_path)?;
                t_cache.insert(fi, letterbox(&src, input_size)?);
            }
        }
        let rgb_frames: BTreeMap<i32, Tensor<f32>> = need_rgb
            .iter()
            .map(|&o| (o, rgb_cache[&index_of[&o]].0.clone()))
            .collect();
        let t_frames: BTreeMap<i32, Tensor<f32>> =
            need_t.iter().map(|&o| (o, t_cache[&index_of[&o]].0.clone())).collect();
        let dets = session.infer(&rgb_frames, &t_frames)?;
        // boxes map back through the transform of a frame from this video;
        // all frames of one pair share dimensions
        let tf = rgb_cache
            .values()
            .map(|(_, tf)| *tf)
            .next()
            .or_else(|| t_cache.values().map(|(_, tf)| *tf).next())
            .expect("at least one modality was loaded");
        let mapped = dets
            .into_iter()
            .map(|d| Detection { class_id: d.class_id, score: d.score, bbox: tf.invert_box(&d.bbox) })
            .collect();
        out.push((frame.frame_id.clone(), mapped));
    }
    Ok(out)
}

/// Runs the detector over every frame of a dataset split; detections are
/// mapped back to source-image coordinates.
pub fn run_inference(
    session: &DetectorSession<'_, f32>,
    dataset: &Dataset,
    input_size: usize,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    run_inference_threaded(session, dataset, input_size, 1)
}

/// Like [`run_inference`] but evaluating up to `threads` videos
/// concurrently. Videos are independent and results merge by frame id, so
/// the output is identical for any worker count.
pub fn run_inference_threaded(
    session: &DetectorSession<'_, f32>,
    dataset: &Dataset,
    input_size: usize,
    threads: usize,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let threads = threads.max(1).min(dataset.videos.len().max(1));
    let mut out = BTreeMap::new();
    if threads <= 1 || dataset.videos.len() <= 1 {
        for video in &dataset.videos {
            for (id, dets) in infer_video(session, video, input_size)? {
                out.insert(id, dets);
            }
        }
        return Ok(out);
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<Vec<(String, Vec<Detection>)>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for _ in 0..threads {
            let next = &next;
            handles.push(scope.spawn(move || {
                let mut chunk = Vec::new();
                loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if idx >= dataset.videos.len() {
                        break;
                    }
                    match infer_video(session, &dataset.videos[idx], input_size) {
                        Ok(v) => chunk.extend(v),
                        Err(e) => return Err(e),
                    }
                }
                Ok(chunk)
            }));
        }
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for chunk in results {
        for (id, dets) in chunk? {
            out.insert(id, dets);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// FPS benchmark

#[derive(Clone, Debug)]
pub struct FpsReport {
    pub mean_fps: f64,
    pub std_fps: f64,
    pub per_run_fps: Vec<f64>,
    pub frames: usize,
}

/// Source-size frames held in memory (disk I/O excluded from timing).
pub struct BenchFrame {
    pub rgb: BTreeMap<i32, Tensor<f32>>,
    pub thermal: BTreeMap<i32, Tensor<f32>>,
}

/// Wall-clock end-to-end frames/second: letterbox + forward + decode + NMS.
pub fn fps_benchmark(
    session: &DetectorSession<'_, f32>,
    frames: &[BenchFrame],
    input_size: usize,
    warmup: usize,
    runs: usize,
) -> Result<FpsReport> {
    if runs == 0 {
        return Err(Error::Config("fps benchmark needs runs >= 1".to_string()));
    }
    if frames.is_empty() {
        return Err(Error::Input("fps benchmark needs at least one frame".to_string()));
    }
    let run_once = |frame: &BenchFrame| -> Result<()> {
        let mut rgb = BTreeMap::new();
        for (&o, img) in &frame.rgb {
            rgb.insert(o, letterbox(img, input_size)?.0);
        }
        let mut thermal = BTreeMap::new();
        for (&o, img) in &frame.thermal {
            thermal.insert(o, letterbox(img, input_size)?.0);
        }
        session.infer(&rgb, &thermal)?;
        Ok(())
    };
    for _ in 0..warmup {
        run_once(&frames[0])?;
    }
    let mut per_run = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for frame in frames {
            run_once(frame)?;
        }
        let secs = start.elapsed().as_secs_f64();
        per_run.push(frames.len() as f64 / secs.max(1e-12));
    }
    let mean = per_run.iter().sum::<f64>() / runs as f64;
    let var = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / runs as f64;
    Ok(FpsReport { mean_fps: mean, std_fps: var.sqrt(), per_run_fps: per_run, frames: frames.len() })
}

// ---------------------------------------------------------------------------
// statistics and report tables

#[derive(Clone, Debug)]
pub struct ClassStats {
    /// (split label, per-class counts, total)
    pub rows: Vec<(String, [usize; 7], usize)>,
}

pub fn class_stats(datasets: &[(&str, &Dataset)]) -> ClassStats {
    let mut rows = Vec::new();
    for (label, dataset) in datasets {
        let mut counts = [0usize; 7];
        for frame in dataset.frames() {
            for obj in &frame.annotation.objects {
                counts[obj.class_id] += 1;
            }
        }
        let total = counts.iter().sum();
        rows.push((label.to_string(), counts, total));
    }
    ClassStats { rows }
}

impl ClassStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:8}", "");
        for name in CLASS_NAMES {
            let _ = write!(out, "{name:>14}");
        }
        let _ = writeln!(out, "{:>10}", "total");
        for (label, counts, total) in &self.rows {
            let _ = write!(out, "{label:8}");
            for c in counts {
                let _ = write!(out, "{c:>14}");
            }
            let _ = writeln!(out, "{total:>10}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,");
        out.push_str(&CLASS_NAMES.join(","));
        out.push_str(",total\n");
        for (label, counts, total) in &self.rows {
            out.push_str(label);
            for c in counts {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{total}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub gflops: f64,
    pub ap50: f64,
    pub ap: f64,
    pub fps: f64,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14}{:>10}{:>10}{:>9}{:>9}{:>9}\n",
            "model", "params", "gflops", "ap50", "ap", "fps"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>10.4}{:>9.2}{:>9.2}{:>9.1}",
                r.variant,
                r.params,
                r.gflops,
                r.ap50 * 100.0,
                r.ap * 100.0,
                r.fps
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,params,gflops,ap50,ap,fps\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6},{:.3}", r.variant, r.params, r.gflops, r.ap50, r.ap, r.fps);
        }
        out
    }
}

/// Trains each requested variant with identical seeds/config, evaluates
/// AP50/AP/params/flops/FPS on the test split, one row per variant.
#[allow(clippy::too_many_arguments)]
pub fn ablation_report(
    train_set: &Dataset,
    test_set: &Dataset,
    mc: &ModelConfig,
    variants: &[VariantConfig],
    tc: &TrainConfig,
    fps_runs: usize,
    mut on_progress: impl FnMut(&str, usize, f64),
) -> Result<AblationReport> {
    let gts = dataset_ground_truth(test_set);
    let mut rows = Vec::new();
    for vc in variants {
        let name = vc.variant.as_str().to_string();
        let (weights, _history) = train_loop::<f32>(train_set, mc, vc, tc, |epoch, loss| {
            on_progress(&name, epoch, loss);
        })?;
        let row = evaluate_variant(test_set, &gts, mc, vc, &weights, tc.input_size, fps_runs)?;
        rows.push(row);
    }
    Ok(AblationReport { rows })
}

/// Evaluates one trained variant: AP, cost accounting, and FPS.
pub fn evaluate_variant(
    test_set: &Dataset,
    gts: &BTreeMap<String, Vec<GtBox>>,
    mc: &ModelConfig,
    vc: &VariantConfig,
    weights: &ModelWeights<f32>,
    input_size: usize,
    fps_runs: usize,
) -> Result<AblationRow> {
    let session = DetectorSession::new(mc.clone(), vc.clone(), weights);
    let dets = run_inference(&session, test_set, input_size)?;
    let result = coco_map(&dets, gts);
    let fps = if fps_runs > 0 {
        let frames = bench_frames_from_dataset(test_set, vc, 8)?;
        fps_benchmark(&session, &frames, input_size, 1, fps_runs)?.mean_fps
    } else {
        0.0
    };
    Ok(AblationRow {
        variant: vc.variant.as_str().to_string(),
        params: count_params(weights, mc, vc)?,
        gflops: estimate_flops(mc, vc, input_size)? as f64 / 1e9,
        ap50: result.ap50,
        ap: result.ap,
        fps,
    })
}

/// Loads up to `limit` windowed frames from a dataset for FPS measurement.
pub fn bench_frames_from_dataset(dataset: &Dataset, vc: &VariantConfig, limit: usize) -> Result<Vec<BenchFrame>> {
    let (need_rgb, need_t) = required_offsets(vc);
    let mut frames = Vec::new();
    'outer: for video in &dataset.videos {
        for t_idx in 0..video.frames.len() {
            if frames.len() >= limit {
                break 'outer;
            }
            let offsets: Vec<i32> = {
                let mut v: Vec<i32> = need_rgb.iter().chain(&need_t).copied().filter(|&o| o != 0).collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            let mut index_of: BTreeMap<i32, usize> = BTreeMap::new();
            index_of.insert(0, t_idx);
            if !offsets.is_empty() {
                index_of.extend(clamp_triplet(video.frames.len(), t_idx, &TemporalWindow::new(&offsets)?)?);
            }
            let mut rgb = BTreeMap::new();
            for &o in &need_rgb {
                rgb.insert(o, load_rgb::<f32>(&video.frames[index_of[&o]].rgb_path)?);
            }
            let mut thermal = BTreeMap::new();
            for &o in &need_t {
                thermal.insert(o, load_thermal::<f32>(&video.frames[index_of[&o]].thermal_path)?);
            }
            frames.push(BenchFrame { rgb, thermal });
        }
    }
    if frames.is_empty() {
        return Err(Error::Input("dataset has no frames for benchmarking".to_string()));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class_id: usize, score: f64, b: [f64; 4]) -> Detection {
        Detection { class_id, score, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    fn gt(class_id: usize, b: [f64; 4]) -> GtBox {
        GtBox { class_id, difficult: false, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    #[test]
    fn perfect_predictions_give_ap_one() {
        let mut gts = BTreeMap::new();
        gts.insert("f0".to_string(), vec![gt(0, [0.0, 0.0, 10.0, 10.0]), gt(1, [20.0, 20.0, 30.0, 34.0])]);
        let mut dets = BTreeMap::new();
        dets.insert(
            "f0".to_string(),
            vec![det(0, 1.0, [0.0, 0.0, 10.0, 10.0]), det(1, 1.0, [20.0, 20.0, 30.0, 34.0])],
        );
        let r = coco_map(&dets, &gts);
        assert_eq!(r.ap50, 1.0);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn no_detections_give_zero() {
        let mut gts = BTreeMap::new();
        gts.insert("f0".to_string(), vec![gt(0, [0.0, 0.0, 10.0, 10.0])]);
        let dets = BTreeMap::new();
        let r = coco_map(&dets, &gts);
        assert_eq!(r.ap50, 0.0);
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn boundary_iou_exactly_at_threshold_counts() {
        // det shifted so IoU with gt is exactly 0.6
        // boxes: gt (0,0,10,10); det (0,2.5,10,12.5) → inter 75, union 125, IoU 0.6
        let mut gts = BTreeMap::new();
        gts.insert("f0".to_string(), vec![gt(0, [0.0, 0.0, 10.0, 10.0])]);
        let mut dets = BTreeMap::new();
        dets.insert("f0".to_string(), vec![det(0, 0.9, [0.0, 2.5, 10.0, 12.5])]);
        let ap50 = average_precision(&dets, &gts, 0.50)[0].unwrap();
        let ap60 = average_precision(&dets, &gts, 0.60)[0].unwrap();
        let ap65 = average_precision(&dets, &gts, 0.65)[0].unwrap();
        assert_eq!(ap50, 1.0);
        assert_eq!(ap60, 1.0, "closed boundary: IoU == threshold must match");
        assert_eq!(ap65, 0.0);
    }

    #[test]
    fn duplicate_detections_one_tp_rest_fp() {
        let mut gts = BTreeMap::new();
        gts.insert("f0".to_string(), vec![gt(0, [0.0, 0.0, 10.0, 10.0])]);
        let mut dets = BTreeMap::new();
        dets.insert(
            "f0".to_string(),
            vec![det(0, 0.9, [0.0, 0.0, 10.0, 10.0]), det(0, 0.8, [0.0, 0.0, 10.0, 10.0])],
        );
        // PR points: (1.0, 1.0), then (0.5, 1.0); envelope at all recalls ≥ 0 is 1.0
        let ap = average_precision(&dets, &gts, 0.5)[0].unwrap();
        assert_eq!(ap, 1.0);
        // reversed scores: same outcome because sorting is internal
        let mut dets2 = BTreeMap::new();
        dets2.insert(
            "f0".to_string(),
            vec![det(0, 0.8, [0.0, 0.0, 10.0, 10.0]), det(0, 0.9, [0.0, 0.0, 10.0, 10.0])],
        );
        assert_eq!(average_precision(&dets2, &gts, 0.5)[0].unwrap(), ap);
    }

    #[test]
    fn difficult_gt_ignored_both_ways() {
        let mut gts = BTreeMap::new();
        gts.insert(
            "f0".to_string(),
            vec![
                gt(0, [0.0, 0.0, 10.0, 10.0]),
                GtBox { class_id: 0, difficult: true, bbox: BBox::new(40.0, 40.0, 50.0, 50.0) },
            ],
        );
        // one TP on the normal gt plus one detection on the difficult gt
        let mut dets = BTreeMap::new();
        dets.insert(
            "f0".to_string(),
            vec![det(0, 0.95, [0.0, 0.0, 10.0, 10.0]), det(0, 0.9, [40.0, 40.0, 50.0, 50.0])],
        );
        let ap = average_precision(&dets, &gts, 0.5)[0].unwrap();
        assert_eq!(ap, 1.0, "difficult matches must not count as FP and not appear in recall");
    }

    #[test]
    fn empty_dataset_stats_are_zero() {
        let stats = ClassStats { rows: vec![("train".to_string(), [0; 7], 0)] };
        assert!(stats.to_table().contains("train"));
        assert_eq!(stats.rows[0].2, 0);
    }
}
