//! Neck dataflow, decode, and NMS against brute-force oracles.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use einet::head::{decode, iou, nms, BBox, Detection, RawLevel, RawPrediction};
use einet::neck::{neck_weight_specs, pafpn};
use einet::tensor::Tensor;
use einet::weights::{materialize, ModelWeights};

fn conv_bn_silu_oracle(x: &Tensor<f32>, w: &ModelWeights<f32>, prefix: &str, stride: usize, pad: usize) -> Tensor<f32> {
    let kernel = w.get(&format!("{prefix}.conv.w")).unwrap();
    let conv = conv2d_oracle(x, kernel, None, stride, pad);
    let gamma = w.get(&format!("{prefix}.bn.gamma")).unwrap();
    let beta = w.get(&format!("{prefix}.bn.beta")).unwrap();
    let normed = batch_norm_oracle(&conv, gamma, beta, 1e-5);
    normed.map(|v| (v as f64 * sigmoid_f64(v as f64)) as f32)
}

fn concat_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let (ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let cb = b.shape()[0];
    let mut out = Tensor::zeros(&[ca + cb, h, w]);
    out.data_mut()[..ca * h * w].copy_from_slice(a.data());
    out.data_mut()[ca * h * w..].copy_from_slice(b.data());
    out
}

fn upsample_oracle(x: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ic in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.data_mut()[(ic * 2 * h + y) * 2 * w + xx] = x.at3(ic, y / 2, xx / 2);
            }
        }
    }
    out
}

#[test]
fn pafpn_matches_declared_dataflow_oracle() {
    let channels = [4, 8, 12];
    let w: ModelWeights<f32> = materialize(&neck_weight_specs(channels), 41);
    let mut r = rng(401);
    for case in 0..30 {
        let p1 = rand_tensor::<f32>(&mut r, &[4, 8, 8], -1.0, 1.0);
        let p2 = rand_tensor::<f32>(&mut r, &[8, 4, 4], -1.0, 1.0);
        let p3 = rand_tensor::<f32>(&mut r, &[12, 2, 2], -1.0, 1.0);
        let got = pafpn(&[p1.clone(), p2.clone(), p3.clone()], &w, channels).unwrap();

        let r2 = conv_bn_silu_oracle(&p3, &w, "neck.lat2", 1, 0);
        let m2 = conv_bn_silu_oracle(&concat_oracle(&upsample_oracle(&r2), &p2), &w, "neck.td2", 1, 1);
        let r1 = conv_bn_silu_oracle(&m2, &w, "neck.lat1", 1, 0);
        let out1 = conv_bn_silu_oracle(&concat_oracle(&upsample_oracle(&r1), &p1), &w, "neck.td1", 1, 1);
        let d1 = conv_bn_silu_oracle(&out1, &w, "neck.bu1", 2, 1);
        let out2 = conv_bn_silu_oracle(&concat_oracle(&d1, &r1), &w, "neck.out2", 1, 1);
        let d2 = conv_bn_silu_oracle(&out2, &w, "neck.bu2", 2, 1);
        let out3 = conv_bn_silu_oracle(&concat_oracle(&d2, &r2), &w, "neck.out3", 1, 1);

        assert_close(&got[0], &out1, 1e-5, &format!("pafpn out1 case {case}"));
        assert_close(&got[1], &out2, 1e-5, &format!("pafpn out2 case {case}"));
        assert_close(&got[2], &out3, 1e-5, &format!("pafpn out3 case {case}"));
    }
}

/// Per-cell loop decode oracle (best class, obj×cls score, clip, drop
/// degenerate).
fn decode_oracle(raw: &RawPrediction<f32>, conf: f64, img_w: f64, img_h: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for level in &raw.levels {
        let (k, h, w) = (level.cls.shape()[0], level.cls.shape()[1], level.cls.shape()[2]);
        let s = level.stride as f64;
        for i in 0..h {
            for j in 0..w {
                let mut best_k = 0;
                for kk in 1..k {
                    if level.cls.at3(kk, i, j) > level.cls.at3(best_k, i, j) {
                        best_k = kk;
                    }
                }
                let score = sigmoid_f64(level.obj.at3(0, i, j) as f64) * sigmoid_f64(level.cls.at3(best_k, i, j) as f64);
                if score < conf {
                    continue;
                }
                let cx = (j as f64 + level.reg.at3(0, i, j) as f64) * s;
                let cy = (i as f64 + level.reg.at3(1, i, j) as f64) * s;
                let bw = (level.reg.at3(2, i, j) as f64).exp() * s;
                let bh = (level.reg.at3(3, i, j) as f64).exp() * s;
                let bbox = BBox::new(
                    (cx - bw / 2.0).clamp(0.0, img_w),
                    (cy - bh / 2.0).clamp(0.0, img_h),
                    (cx + bw / 2.0).clamp(0.0, img_w),
                    (cy + bh / 2.0).clamp(0.0, img_h),
                );
                if bbox.is_valid() {
                    out.push(Detection { class_id: best_k, score, bbox });
                }
            }
        }
    }
    out
}

#[test]
fn decode_matches_per_cell_oracle() {
    let mut r = rng(402);
    for case in 0..30 {
        let raw = RawPrediction {
            levels: vec![
                RawLevel {
                    stride: 8,
                    cls: rand_tensor::<f32>(&mut r, &[3, 4, 4], -4.0, 4.0),
                    reg: rand_tensor::<f32>(&mut r, &[4, 4, 4], -1.0, 1.0),
                    obj: rand_tensor::<f32>(&mut r, &[1, 4, 4], -4.0, 4.0),
                },
                RawLevel {
                    stride: 16,
                    cls: rand_tensor::<f32>(&mut r, &[3, 2, 2], -4.0, 4.0),
                    reg: rand_tensor::<f32>(&mut r, &[4, 2, 2], -1.0, 1.0),
                    obj: rand_tensor::<f32>(&mut r, &[1, 2, 2], -4.0, 4.0),
                },
            ],
        };
        let got = decode(&raw, 0.05, 32.0, 32.0).unwrap();
        let want = decode_oracle(&raw, 0.05, 32.0, 32.0);
        assert_eq!(got.len(), want.len(), "case {case}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.class_id, w.class_id);
            assert!((g.score - w.score).abs() < 1e-12);
            assert!((g.bbox.x_min - w.bbox.x_min).abs() < 1e-9);
        }
    }
}

#[test]
fn decoded_boxes_lie_within_image_bounds() {
    let mut r = rng(403);
    let raw = RawPrediction {
        levels: vec![RawLevel {
            stride: 8,
            cls: rand_tensor::<f32>(&mut r, &[2, 6, 6], -2.0, 2.0),
            reg: rand_tensor::<f32>(&mut r, &[4, 6, 6], -3.0, 3.0),
            obj: rand_tensor::<f32>(&mut r, &[1, 6, 6], -1.0, 4.0),
        }],
    };
    for d in decode(&raw, 0.01, 48.0, 48.0).unwrap() {
        assert!(d.bbox.x_min >= 0.0 && d.bbox.x_max <= 48.0);
        assert!(d.bbox.y_min >= 0.0 && d.bbox.y_max <= 48.0);
        assert!(d.bbox.is_valid());
    }
}

/// Exhaustive O(n²) suppression oracle over the same ordering rule.
fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[a].bbox.x_min.partial_cmp(&dets[b].bbox.x_min).unwrap())
            .then(dets[a].bbox.y_min.partial_cmp(&dets[b].bbox.y_min).unwrap())
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let mut ok = true;
        for &j in &kept {
            if dets[j].class_id == dets[i].class_id && iou(&dets[j].bbox, &dets[i].bbox) > thr {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

fn random_dets(r: &mut rand_chacha::ChaCha8Rng, n: usize, classes: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let x = r.random_range(0.0..40.0);
            let y = r.random_range(0.0..40.0);
            Detection {
                class_id: r.random_range(0..classes),
                score: r.random_range(0.01..1.0),
                bbox: BBox::new(x, y, x + r.random_range(2.0..20.0), y + r.random_range(2.0..20.0)),
            }
        })
        .collect()
}

#[test]
fn nms_matches_brute_force_oracle() {
    let mut r = rng(404);
    for case in 0..30 {
        let dets = random_dets(&mut r, 20, 3);
        let got = nms(&dets, 0.5);
        let want = nms_oracle(&dets, 0.5);
        assert_eq!(got, want, "case {case}");
    }
}

#[test]
fn iou_matches_pixel_count_oracle_on_integer_boxes() {
    let mut r = rng(405);
    for _ in 0..50 {
        let ax = r.random_range(0..20) as f64;
        let ay = r.random_range(0..20) as f64;
        let a = BBox::new(ax, ay, ax + r.random_range(1..10) as f64, ay + r.random_range(1..10) as f64);
        let bx = r.random_range(0..20) as f64;
        let by = r.random_range(0..20) as f64;
        let b = BBox::new(bx, by, bx + r.random_range(1..10) as f64, by + r.random_range(1..10) as f64);
        // count unit cells in a 40x40 grid
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in 0..40 {
            for x in 0..40 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let in_a = cx > a.x_min && cx < a.x_max && cy > a.y_min && cy < a.y_max;
                let in_b = cx > b.x_min && cx < b.x_max && cy > b.y_min && cy < b.y_max;
                inter += (in_a && in_b) as u64;
                union += (in_a || in_b) as u64;
            }
        }
        let want = inter as f64 / union as f64;
        assert!((iou(&a, &b) - want).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nms_output_is_subset_without_overlaps(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let dets = random_dets(&mut r, 12, 2);
        let kept = nms(&dets, 0.45);
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in kept.iter().skip(i + 1) {
                if a.class_id == b.class_id {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= 0.45);
                }
            }
        }
    }
}
