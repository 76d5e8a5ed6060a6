//! Central finite-difference validation of analytic gradients.

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weights::ModelWeights;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `analytic` against central differences of `loss` with step `h`.
///
/// `loss` must be deterministic; it is evaluated twice up front and any
/// bitwise mismatch is reported as an error. Relative error per element is
/// `|a − n| / max(|a|, |n|, floor)` with a small floor so near-zero
/// gradients compare on an absolute scale.
pub fn finite_diff_check<S: Scalar>(
    weights: &ModelWeights<S>,
    analytic: &Gradients<S>,
    h: f64,
    mut loss: impl FnMut(&ModelWeights<S>) -> Result<S>,
) -> Result<GradCheckReport> {
    let l1 = loss(weights)?;
    let l2 = loss(weights)?;
    if l1 != l2 {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("loss function is not deterministic: {l1} vs {l2}"),
        ));
    }

    const FLOOR: f64 = 1e-6;
    let mut entries = Vec::new();
    let mut overall: f64 = 0.0;
    let mut scratch = weights.clone();
    // validate exactly the gradients that were produced; parameters the
    // forward never touched have no entry and nothing to compare
    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let grad = analytic.get(&name)?.clone();
        let n_elems = weights.get(&name)?.len();
        if grad.len() != n_elems {
            return Err(Error::shape("finite_diff_check", format!("gradient shape mismatch for {name}")));
        }
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..n_elems {
            let orig = scratch.get(&name)?.data()[i];
            scratch.get_mut(&name)?.data_mut()[i] = orig + S::from_f64(h);
            let lp = loss(&scratch)?.to_f64();
            scratch.get_mut(&name)?.data_mut()[i] = orig - S::from_f64(h);
            let lm = loss(&scratch)?.to_f64();
            scratch.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = grad.data()[i].to_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        overall = overall.max(max_rel);
        entries.push(GradCheckEntry { name, max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(GradCheckReport { entries, max_rel_err: overall })
}

// ---------------------------------------------------------------------------
// ready-made per-module suite (f64 toy shapes)

/// One line of the gradcheck report.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub module: String,
    /// The step actually used; deep train-mode batch-norm chains are
    /// checked at `h/100` because an h=1e-3 central difference cannot
    /// resolve their curvature (truncation error shrinks O(h²)).
    pub h: f64,
    pub max_rel_err: f64,
}

/// Runs the finite-difference suite over every parameterized module on
/// toy shapes and reports the max relative error per module.
pub fn module_suite(h: f64) -> Result<Vec<SuiteEntry>> {
    use crate::autograd::Var;
    use crate::backbone::{backbone_forward, backbone_weight_specs, BackboneConfig, Branch};
    use crate::detector::{detector_forward, model_weight_specs, required_offsets, ModelConfig, Variant, VariantConfig};
    use crate::fusion::{channel_attention_var, fuse_level_var, fusion_weight_specs, spatial_attention_var};
    use crate::head::{BBox, HeadConfig, RawLevelVars};
    use crate::neck::{neck_weight_specs, pafpn_forward};
    use crate::net::Net;
    use crate::tensor::Tensor;
    use crate::train::{assign_targets, detection_loss, LabeledBox};
    use crate::weights::materialize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    type Run = Box<dyn Fn(&ModelWeights<f64>) -> Result<(f64, Gradients<f64>)>>;
    fn entry(
        out: &mut Vec<SuiteEntry>,
        name: &str,
        h: f64,
        weights: &ModelWeights<f64>,
        run: Run,
    ) -> Result<()> {
        let (_, grads) = run(weights)?;
        let report = finite_diff_check(weights, &grads, h, |w| run(w).map(|(l, _)| l))?;
        out.push(SuiteEntry { module: name.to_string(), h, max_rel_err: report.max_rel_err });
        Ok(())
    }

    fn silu_sum_loss(net: &mut Net<f64>, out: crate::autograd::Var) -> Result<(f64, Gradients<f64>)> {
        let act = net.tape.silu(out)?;
        let loss = net.tape.sum_all(act);
        let grads = net.tape.backward(loss)?;
        Ok((net.tape.value(loss).item()?, grads))
    }

    let mut suite = Vec::new();
    let mut r = ChaCha8Rng::seed_from_u64(4242);

    // conv2d
    {
        let mut w = ModelWeights::<f64>::new();
        w.insert("c.conv.w", rand_tensor(&mut r, &[3, 2, 3, 3], -0.6, 0.6));
        w.insert("c.conv.b", rand_tensor(&mut r, &[3], -0.2, 0.2));
        let x = rand_tensor(&mut r, &[2, 5, 5], -1.0, 1.0);
        entry(&mut suite, "conv2d", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let inp = net.input(x.clone());
            let out = net.conv(inp, "c", 2, 1)?;
            silu_sum_loss(&mut net, out)
        }))?;
    }
    // batch_norm (train statistics)
    {
        let mut w = ModelWeights::<f64>::new();
        w.insert("b.bn.gamma", rand_tensor(&mut r, &[3, 1, 1], 0.6, 1.4));
        w.insert("b.bn.beta", rand_tensor(&mut r, &[3, 1, 1], -0.3, 0.3));
        w.insert("b.bn.running_mean", Tensor::zeros(&[3, 1, 1]));
        w.insert("b.bn.running_var", Tensor::from_parts(vec![3, 1, 1], vec![1.0; 3]));
        w.insert("pre.conv.w", rand_tensor(&mut r, &[3, 2, 1, 1], -0.8, 0.8));
        let x = rand_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
        entry(&mut suite, "batch_norm", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let inp = net.input(x.clone());
            let pre = net.conv(inp, "pre", 1, 0)?;
            let out = net.batch_norm(pre, "b")?;
            silu_sum_loss(&mut net, out)
        }))?;
    }
    // pooling / reductions (gap, channel_max, channel_mean, max_pool, upsample)
    {
        let mut w = ModelWeights::<f64>::new();
        w.insert("c.conv.w", rand_tensor(&mut r, &[4, 2, 3, 3], -0.5, 0.5));
        let x = rand_tensor(&mut r, &[2, 6, 6], -1.0, 1.0);
        entry(&mut suite, "pool_reductions", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let inp = net.input(x.clone());
            let conv = net.conv(inp, "c", 1, 1)?;
            let pooled = net.tape.max_pool2(conv)?;
            let p = net.tape.global_avg_pool(pooled)?;
            let v = net.tape.channel_max(pooled)?;
            let m = net.tape.channel_mean(pooled)?;
            let pv = net.tape.mul(p, v)?;
            let pvm = net.tape.mul(pv, m)?;
            let up = net.tape.upsample_nearest2(pvm)?;
            silu_sum_loss(&mut net, up)
        }))?;
    }
    // attention blocks
    {
        let w: ModelWeights<f64> = materialize(&fusion_weight_specs(&[4, 8, 8]), 44);
        let x = rand_tensor(&mut r, &[4, 4, 4], -1.0, 1.0);
        entry(&mut suite, "attention", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let inp = net.input(x.clone());
            let sa = spatial_attention_var(&mut net, inp, "fuse.l0.spatial")?;
            let ca = channel_attention_var(&mut net, inp, "fuse.l0.channel")?;
            let gated = net.tape.mul(sa, ca)?;
            let out = net.tape.mul(gated, inp)?;
            silu_sum_loss(&mut net, out)
        }))?;
    }
    // tpe
    {
        let mut w = ModelWeights::<f64>::new();
        w.insert("pre.conv.w", rand_tensor(&mut r, &[3, 3, 1, 1], -0.8, 0.8));
        let a = rand_tensor(&mut r, &[3, 4, 4], -1.0, 1.0);
        let b = rand_tensor(&mut r, &[3, 4, 4], -1.0, 1.0);
        entry(&mut suite, "tpe", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let ia = net.input(a.clone());
            let ib = net.input(b.clone());
            let fa = net.conv(ia, "pre", 1, 0)?;
            let fb = net.conv(ib, "pre", 1, 0)?;
            let mut frames = BTreeMap::new();
            frames.insert(-1, fa);
            frames.insert(1, fb);
            let out = crate::tpe::tpe_enhance(&mut net, &frames, &crate::tpe::TemporalWindow::default(), None)?;
            silu_sum_loss(&mut net, out)
        }))?;
    }
    // erasure fusion
    {
        let w: ModelWeights<f64> = materialize(&fusion_weight_specs(&[4, 8, 8]), 45);
        let f_rgb = rand_tensor(&mut r, &[8, 4, 4], -1.0, 1.0);
        let f_t = rand_tensor(&mut r, &[8, 4, 4], -1.0, 1.0);
        let f_inact = rand_tensor(&mut r, &[8, 4, 4], -2.0, 2.0);
        entry(&mut suite, "erasure_fusion", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let rgb = net.input(f_rgb.clone());
            let t = net.input(f_t.clone());
            let inact = net.input(f_inact.clone());
            let out = fuse_level_var(&mut net, 1, rgb, t, inact)?;
            silu_sum_loss(&mut net, out)
        }))?;
    }
    // pafpn
    {
        let channels = [4, 6, 8];
        let w: ModelWeights<f64> = materialize(&neck_weight_specs(channels), 46);
        let p1 = rand_tensor(&mut r, &[4, 16, 16], -1.0, 1.0);
        let p2 = rand_tensor(&mut r, &[6, 8, 8], -1.0, 1.0);
        let p3 = rand_tensor(&mut r, &[8, 4, 4], -1.0, 1.0);
        entry(&mut suite, "pafpn", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let i1 = net.input(p1.clone());
            let i2 = net.input(p2.clone());
            let i3 = net.input(p3.clone());
            let outs = pafpn_forward(&mut net, [i1, i2, i3], channels)?;
            let s1 = net.tape.sum_all(outs[0]);
            let s2 = net.tape.sum_all(outs[1]);
            let s3 = net.tape.sum_all(outs[2]);
            let s12 = net.tape.add(s1, s2)?;
            let loss = net.tape.add(s12, s3)?;
            let grads = net.tape.backward(loss)?;
            Ok((net.tape.value(loss).item()?, grads))
        }))?;
    }
    // detection loss over learnable raw maps
    {
        let mut w = ModelWeights::<f64>::new();
        w.insert("cls.conv.w", rand_tensor(&mut r, &[2, 2, 1, 1], -0.8, 0.8));
        w.insert("cls.conv.b", rand_tensor(&mut r, &[2], -0.2, 0.2));
        w.insert("reg.conv.w", rand_tensor(&mut r, &[4, 2, 1, 1], -0.4, 0.4));
        w.insert("reg.conv.b", rand_tensor(&mut r, &[4], -0.2, 0.2));
        w.insert("obj.conv.w", rand_tensor(&mut r, &[1, 2, 1, 1], -0.8, 0.8));
        w.insert("obj.conv.b", rand_tensor(&mut r, &[1], -0.2, 0.2));
        let gts = vec![
            LabeledBox { class_id: 0, difficult: false, bbox: BBox::new(2.0, 3.0, 25.0, 26.0) },
            LabeledBox { class_id: 1, difficult: false, bbox: BBox::new(30.0, 34.0, 43.0, 45.0) },
        ];
        let targets = assign_targets::<f64>(&gts, 64);
        let x8 = rand_tensor(&mut r, &[2, 8, 8], -1.0, 1.0);
        let x4 = rand_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
        let x2 = rand_tensor(&mut r, &[2, 2, 2], -1.0, 1.0);
        entry(&mut suite, "detection_loss", h, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let mut raw = Vec::new();
            for (stride, x) in [(8usize, &x8), (16, &x4), (32, &x2)] {
                let inp = net.input(x.clone());
                let cls = net.conv(inp, "cls", 1, 0)?;
                let reg = net.conv(inp, "reg", 1, 0)?;
                let obj = net.conv(inp, "obj", 1, 0)?;
                raw.push(RawLevelVars { stride, cls, reg, obj });
            }
            let loss = detection_loss(&mut net, &raw, &targets, 2)?;
            let grads = net.tape.backward(loss)?;
            Ok((net.tape.value(loss).item()?, grads))
        }))?;
    }
    // deep composites: refined step (see SuiteEntry docs)
    let fine = h / 100.0;
    {
        let cfg = BackboneConfig { stem_channels: 4, stage_channels: [4, 6, 8], blocks_per_stage: [1, 1, 1] };
        let w: ModelWeights<f64> = materialize(&backbone_weight_specs(&cfg, Branch::Rgb), 47);
        let img = rand_tensor(&mut r, &[3, 64, 64], 0.0, 1.0);
        entry(&mut suite, "backbone_chain", fine, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let inp = net.input(img.clone());
            let pyr = backbone_forward(&mut net, inp, &cfg, Branch::Rgb, false)?;
            let s1 = net.tape.sum_all(pyr.levels[0].activated);
            let s2 = net.tape.sum_all(pyr.levels[1].activated);
            let s3 = net.tape.sum_all(pyr.levels[2].activated);
            let s12 = net.tape.add(s1, s2)?;
            let loss = net.tape.add(s12, s3)?;
            let grads = net.tape.backward(loss)?;
            Ok((net.tape.value(loss).item()?, grads))
        }))?;
    }
    {
        let mc = ModelConfig {
            backbone: BackboneConfig { stem_channels: 4, stage_channels: [4, 8, 8], blocks_per_stage: [1, 1, 1] },
            head: HeadConfig { num_classes: 2 },
        };
        let vc = VariantConfig::new(Variant::Full);
        let w: ModelWeights<f64> = materialize(&model_weight_specs(&mc, &vc), 51);
        let (need_rgb, need_t) = required_offsets(&vc);
        let rgb: BTreeMap<i32, Tensor<f64>> =
            need_rgb.iter().map(|&o| (o, rand_tensor(&mut r, &[3, 32, 32], 0.0, 1.0))).collect();
        let t: BTreeMap<i32, Tensor<f64>> =
            need_t.iter().map(|&o| (o, rand_tensor(&mut r, &[3, 32, 32], 0.0, 1.0))).collect();
        let gts = vec![
            LabeledBox { class_id: 0, difficult: false, bbox: BBox::new(4.0, 4.0, 14.0, 13.0) },
            LabeledBox { class_id: 1, difficult: false, bbox: BBox::new(16.0, 18.0, 30.0, 31.0) },
        ];
        let targets = assign_targets::<f64>(&gts, 32);
        entry(&mut suite, "detector_composite", fine, &w, Box::new(move |w| {
            let mut net = Net::new(w, true);
            let rgb_vars: BTreeMap<i32, Var> = rgb.iter().map(|(&o, img)| (o, net.input(img.clone()))).collect();
            let t_vars: BTreeMap<i32, Var> = t.iter().map(|(&o, img)| (o, net.input(img.clone()))).collect();
            let raw = detector_forward(&mut net, &mc, &vc, &rgb_vars, &t_vars)?;
            let loss = detection_loss(&mut net, &raw, &targets, mc.head.num_classes)?;
            let grads = net.tape.backward(loss)?;
            Ok((net.tape.value(loss).item()?, grads))
        }))?;
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    fn quadratic_loss(w: &ModelWeights<f64>) -> Result<(f64, Gradients<f64>)> {
        let mut tape = Tape::new();
        let p = tape.param("p", w.get("p")?.clone());
        let sq = tape.mul(p, p)?;
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item()?, grads))
    }

    #[test]
    fn quadratic_passes() {
        let mut w = ModelWeights::new();
        w.insert("p", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let (_, grads) = quadratic_loss(&w).unwrap();
        let report = finite_diff_check(&w, &grads, 1e-3, |w| quadratic_loss(w).map(|(l, _)| l)).unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn neg_silu_chain_passes() {
        let mut w = ModelWeights::new();
        w.insert("p", Tensor::from_vec(&[5], vec![-3.0, -0.7, 0.0, 1.3, 4.0]).unwrap());
        let run = |w: &ModelWeights<f64>| -> Result<(f64, Gradients<f64>)> {
            let mut tape = Tape::new();
            let p = tape.param("p", w.get("p")?.clone());
            let n = tape.neg_silu(p)?;
            let s = tape.silu(n)?;
            let loss = tape.sum_all(s);
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).item()?, grads))
        };
        let (_, grads) = run(&w).unwrap();
        let report = finite_diff_check(&w, &grads, 1e-3, |w| run(w).map(|(l, _)| l)).unwrap();
        assert!(report.passes(1e-3), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_detected() {
        let mut w = ModelWeights::new();
        w.insert("p", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let (_, grads) = quadratic_loss(&w).unwrap();
        let mut corrupted = Gradients::default();
        corrupted.insert("p", grads.get("p").unwrap().map(|v| v + 0.5));
        let report = finite_diff_check(&w, &corrupted, 1e-3, |w| quadratic_loss(w).map(|(l, _)| l)).unwrap();
        assert!(!report.passes(1e-4));
    }
}
