//! Dual-branch tiny Darknet-style feature extractor.
//!
//! Structure: two stride-2 3×3 stem convs, then three stages (stride-2 3×3
//! downsample conv + residual blocks), landing the pyramid levels on strides
//! 8/16/32. Residual blocks place the activation after the add, so each
//! level's final pre-activation map is available as the "inactive" feature
//! and `activated = silu(inactive)` holds exactly.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{materialize, Init, ModelWeights, WeightSpec};

pub const PYRAMID_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    pub blocks_per_stage: [usize; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { stem_channels: 8, stage_channels: [16, 32, 64], blocks_per_stage: [1, 2, 2] }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        for &c in [self.stem_channels].iter().chain(&self.stage_channels) {
            if c < 4 || c % 2 != 0 {
                return Err(Error::Config(format!("channel counts must be even and >= 4, got {c}")));
            }
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) {
            return Err(Error::Config("every stage needs at least one residual block".to_string()));
        }
        Ok(())
    }
}

/// Which modality branch of the weights registry to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Rgb,
    Thermal,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Rgb => "backbone_rgb",
            Branch::Thermal => "backbone_t",
        }
    }
}

/// One pyramid level on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Level {
    pub stride: usize,
    pub activated: Var,
    pub inactive: Option<Var>,
}

/// Tape-level three-scale pyramid.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: [Level; 3],
}

/// Tensor-level pyramid returned by [`extract_features`].
#[derive(Clone, Debug)]
pub struct FeaturePyramid<S> {
    pub levels: Vec<FeatureLevel<S>>,
}

#[derive(Clone, Debug)]
pub struct FeatureLevel<S> {
    pub stride: usize,
    pub activated: Tensor<S>,
    pub inactive: Option<Tensor<S>>,
}

/// Residual block: 1×1 reduce (c→c/2) + 3×3 expand (c/2→c), activation
/// applied after the residual add. Returns (activated, pre_activation).
fn residual_block<S: Scalar>(net: &mut Net<S>, x: Var, prefix: &str) -> Result<(Var, Var)> {
    let (hidden, _) = net.conv_bn_silu(x, &format!("{prefix}.reduce"), 1, 0)?;
    let expanded = net.conv(hidden, &format!("{prefix}.expand"), 1, 1)?;
    let normed = net.batch_norm(expanded, &format!("{prefix}.expand"))?;
    let pre = net.tape.add(x, normed)?;
    let act = net.tape.silu(pre)?;
    Ok((act, pre))
}

/// Runs one branch over an image already on the tape.
pub fn backbone_forward<S: Scalar>(
    net: &mut Net<S>,
    image: Var,
    cfg: &BackboneConfig,
    branch: Branch,
    emit_inactive: bool,
) -> Result<Pyramid> {
    cfg.validate()?;
    let (c, h, w) = net.tape.value(image).dims3("extract_features")?;
    if c != 3 {
        return Err(Error::shape("extract_features", format!("expected 3-channel image, got {c}")));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::shape("extract_features", format!("input {h}x{w} not divisible by 32")));
    }
    let p = branch.prefix();
    let (mut x, _) = net.conv_bn_silu(image, &format!("{p}.stem_a"), 2, 1)?;
    let (sb, _) = net.conv_bn_silu(x, &format!("{p}.stem_b"), 2, 1)?;
    x = sb;
    let mut levels = Vec::with_capacity(3);
    for (si, (&_channels, &blocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
        let (down, _) = net.conv_bn_silu(x, &format!("{p}.s{si}.down"), 2, 1)?;
        let mut act = down;
        let mut pre = down;
        for bi in 0..blocks {
            let (a, pr) = residual_block(net, act, &format!("{p}.s{si}.b{bi}"))?;
            act = a;
            pre = pr;
        }
        levels.push(Level {
            stride: PYRAMID_STRIDES[si],
            activated: act,
            inactive: emit_inactive.then_some(pre),
        });
        x = act;
    }
    Ok(Pyramid { levels: [levels[0], levels[1], levels[2]] })
}

/// Extracts a feature pyramid for one image with the named branch.
pub fn extract_features<S: Scalar>(
    image: &Tensor<S>,
    weights: &ModelWeights<S>,
    cfg: &BackboneConfig,
    branch: Branch,
    emit_inactive: bool,
) -> Result<FeaturePyramid<S>> {
    let mut net = Net::new(weights, false);
    let input = net.input(image.clone());
    let pyr = backbone_forward(&mut net, input, cfg, branch, emit_inactive)?;
    let levels = pyr
        .levels
        .iter()
        .map(|lv| FeatureLevel {
            stride: lv.stride,
            activated: net.tape.value(lv.activated).clone(),
            inactive: lv.inactive.map(|v| net.tape.value(v).clone()),
        })
        .collect();
    Ok(FeaturePyramid { levels })
}

fn conv_spec(name: &str, c_out: usize, c_in: usize, k: usize) -> WeightSpec {
    WeightSpec::new(format!("{name}.conv.w"), &[c_out, c_in, k, k], Init::KaimingUniform { fan_in: c_in * k * k })
}

pub(crate) fn bn_specs(prefix: &str, c: usize) -> Vec<WeightSpec> {
    vec![
        WeightSpec::new(format!("{prefix}.bn.gamma"), &[c, 1, 1], Init::Const(1.0)),
        WeightSpec::new(format!("{prefix}.bn.beta"), &[c, 1, 1], Init::Const(0.0)),
        WeightSpec::new(format!("{prefix}.bn.running_mean"), &[c, 1, 1], Init::Const(0.0)),
        WeightSpec::new(format!("{prefix}.bn.running_var"), &[c, 1, 1], Init::Const(1.0)),
    ]
}

pub(crate) fn conv_bn_specs(prefix: &str, c_out: usize, c_in: usize, k: usize) -> Vec<WeightSpec> {
    let mut specs = vec![conv_spec(prefix, c_out, c_in, k)];
    specs.extend(bn_specs(prefix, c_out));
    specs
}

/// Weight specifications for one backbone branch.
pub fn backbone_weight_specs(cfg: &BackboneConfig, branch: Branch) -> Vec<WeightSpec> {
    let p = branch.prefix();
    let mut specs = Vec::new();
    specs.extend(conv_bn_specs(&format!("{p}.stem_a"), cfg.stem_channels, 3, 3));
    specs.extend(conv_bn_specs(&format!("{p}.stem_b"), cfg.stem_channels, cfg.stem_channels, 3));
    let mut prev = cfg.stem_channels;
    for (si, (&c, &blocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
        specs.extend(conv_bn_specs(&format!("{p}.s{si}.down"), c, prev, 3));
        for bi in 0..blocks {
            specs.extend(conv_bn_specs(&format!("{p}.s{si}.b{bi}.reduce"), c / 2, c, 1));
            specs.extend(conv_bn_specs(&format!("{p}.s{si}.b{bi}.expand"), c, c / 2, 3));
        }
        prev = c;
    }
    specs
}

/// Initializes both modality branches from seed-derived per-tensor streams.
pub fn init_weights<S: Scalar>(cfg: &BackboneConfig, seed: u64) -> Result<ModelWeights<S>> {
    cfg.validate()?;
    let mut specs = backbone_weight_specs(cfg, Branch::Rgb);
    specs.extend(backbone_weight_specs(cfg, Branch::Thermal));
    Ok(materialize(&specs, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BackboneConfig {
        BackboneConfig { stem_channels: 4, stage_channels: [4, 6, 8], blocks_per_stage: [1, 1, 1] }
    }

    #[test]
    fn level_shapes_for_64() {
        let cfg = tiny();
        let w = init_weights::<f32>(&cfg, 1).unwrap();
        let img = Tensor::full(&[3, 64, 64], 0.3f32);
        let pyr = extract_features(&img, &w, &cfg, Branch::Rgb, false).unwrap();
        assert_eq!(pyr.levels[0].activated.shape(), &[4, 8, 8]);
        assert_eq!(pyr.levels[1].activated.shape(), &[6, 4, 4]);
        assert_eq!(pyr.levels[2].activated.shape(), &[8, 2, 2]);
        assert_eq!(pyr.levels.iter().map(|l| l.stride).collect::<Vec<_>>(), vec![8, 16, 32]);
    }

    #[test]
    fn doubling_input_doubles_extents() {
        let cfg = tiny();
        let w = init_weights::<f32>(&cfg, 1).unwrap();
        let a = extract_features(&Tensor::full(&[3, 64, 64], 0.5f32), &w, &cfg, Branch::Rgb, false).unwrap();
        let b = extract_features(&Tensor::full(&[3, 128, 128], 0.5f32), &w, &cfg, Branch::Rgb, false).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.activated.shape()[1] * 2, lb.activated.shape()[1]);
            assert_eq!(la.activated.shape()[2] * 2, lb.activated.shape()[2]);
        }
    }

    #[test]
    fn deterministic_forward() {
        let cfg = tiny();
        let w = init_weights::<f32>(&cfg, 9).unwrap();
        let img = Tensor::from_vec(&[3, 32, 32], (0..3 * 32 * 32).map(|i| (i % 255) as f32 / 255.0).collect()).unwrap();
        let a = extract_features(&img, &w, &cfg, Branch::Thermal, true).unwrap();
        let b = extract_features(&img, &w, &cfg, Branch::Thermal, true).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.activated, lb.activated);
            assert_eq!(la.inactive, lb.inactive);
        }
    }

    #[test]
    fn activated_is_silu_of_inactive() {
        let cfg = tiny();
        let w = init_weights::<f32>(&cfg, 3).unwrap();
        let img = Tensor::from_vec(&[3, 32, 32], (0..3 * 32 * 32).map(|i| ((i * 37) % 251) as f32 / 251.0).collect())
            .unwrap();
        let pyr = extract_features(&img, &w, &cfg, Branch::Thermal, true).unwrap();
        for lv in &pyr.levels {
            let inact = lv.inactive.as_ref().unwrap();
            let silu = crate::ops::silu(inact).unwrap();
            let max_diff = silu
                .data()
                .iter()
                .zip(lv.activated.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert_eq!(max_diff, 0.0);
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = tiny();
        let w = init_weights::<f32>(&cfg, 1).unwrap();
        let img = Tensor::zeros(&[3, 48, 64]);
        assert!(extract_features(&img, &w, &cfg, Branch::Rgb, false).is_err());
    }

    #[test]
    fn missing_branch_rejected() {
        let cfg = tiny();
        let specs = backbone_weight_specs(&cfg, Branch::Rgb);
        let w: ModelWeights<f32> = materialize(&specs, 1);
        let img = Tensor::zeros(&[3, 32, 32]);
        let err = extract_features(&img, &w, &cfg, Branch::Thermal, false).unwrap_err();
        assert!(matches!(err, Error::MissingWeight { .. }));
    }

    #[test]
    fn branch_names_disjoint() {
        let cfg = BackboneConfig::default();
        let rgb: Vec<String> = backbone_weight_specs(&cfg, Branch::Rgb).into_iter().map(|s| s.name).collect();
        let t: Vec<String> = backbone_weight_specs(&cfg, Branch::Thermal).into_iter().map(|s| s.name).collect();
        for name in &rgb {
            assert!(!t.contains(name));
        }
    }

    #[test]
    fn same_seed_bit_identical_different_seed_differs() {
        let cfg = tiny();
        let a = init_weights::<f32>(&cfg, 7).unwrap();
        let b = init_weights::<f32>(&cfg, 7).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t, b.get(name).unwrap());
        }
        let c = init_weights::<f32>(&cfg, 8).unwrap();
        assert!(a.iter().any(|(name, t)| t != c.get(name).unwrap()));
    }

    #[test]
    fn param_count_matches_closed_form() {
        // stem 8; stages 16/32/64; blocks 1/1/1 — hand-derived:
        // conv params: cout*cin*9 for 3x3, cout*cin for 1x1; bn: 2 per channel.
        let cfg = BackboneConfig { stem_channels: 8, stage_channels: [16, 32, 64], blocks_per_stage: [1, 1, 1] };
        let w = init_weights::<f32>(&cfg, 0).unwrap();
        let one_branch: usize = {
            let stem_a = 8 * 3 * 9 + 2 * 8;
            let stem_b = 8 * 8 * 9 + 2 * 8;
            let stage = |cin: usize, c: usize| {
                let down = c * cin * 9 + 2 * c;
                let reduce = (c / 2) * c + 2 * (c / 2);
                let expand = c * (c / 2) * 9 + 2 * c;
                down + reduce + expand
            };
            stem_a + stem_b + stage(8, 16) + stage(16, 32) + stage(32, 64)
        };
        assert_eq!(w.param_scalars(), 2 * one_branch);
    }
}
