//! PAFPN-lite: a top-down feature-pyramid pass (upsample + concat + conv)
//! followed by a bottom-up path-aggregation pass (stride-2 conv + concat +
//! conv). Lateral 1×1 reductions are reused by the bottom-up pass, mirroring
//! the YOLOX wiring at desk scale. Every conv is conv + batch norm + SiLU.

use crate::autograd::Var;
use crate::backbone::conv_bn_specs;
use crate::error::{Error, Result};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, WeightSpec};

/// Runs the neck over the three fused maps (strides 8/16/32). Channel
/// counts and spatial extents per level are preserved.
pub fn pafpn_forward<S: Scalar>(net: &mut Net<S>, inputs: [Var; 3], channels: [usize; 3]) -> Result<[Var; 3]> {
    for (i, &v) in inputs.iter().enumerate() {
        let c = net.tape.value(v).shape()[0];
        if c != channels[i] {
            return Err(Error::shape("pafpn", format!("level {i} has {c} channels, config says {}", channels[i])));
        }
    }
    let [p1, p2, p3] = inputs;

    // top-down
    let (r2, _) = net.conv_bn_silu(p3, "neck.lat2", 1, 0)?;
    let u2 = net.tape.upsample_nearest2(r2)?;
    let m2in = net.tape.concat_channels(u2, p2)?;
    let (m2, _) = net.conv_bn_silu(m2in, "neck.td2", 1, 1)?;
    let (r1, _) = net.conv_bn_silu(m2, "neck.lat1", 1, 0)?;
    let u1 = net.tape.upsample_nearest2(r1)?;
    let o1in = net.tape.concat_channels(u1, p1)?;
    let (out1, _) = net.conv_bn_silu(o1in, "neck.td1", 1, 1)?;

    // bottom-up
    let (d1, _) = net.conv_bn_silu(out1, "neck.bu1", 2, 1)?;
    let o2in = net.tape.concat_channels(d1, r1)?;
    let (out2, _) = net.conv_bn_silu(o2in, "neck.out2", 1, 1)?;
    let (d2, _) = net.conv_bn_silu(out2, "neck.bu2", 2, 1)?;
    let o3in = net.tape.concat_channels(d2, r2)?;
    let (out3, _) = net.conv_bn_silu(o3in, "neck.out3", 1, 1)?;

    Ok([out1, out2, out3])
}

/// Tensor-level wrapper around [`pafpn_forward`].
pub fn pafpn<S: Scalar>(
    inputs: &[Tensor<S>; 3],
    weights: &ModelWeights<S>,
    channels: [usize; 3],
) -> Result<[Tensor<S>; 3]> {
    let mut net = Net::new(weights, false);
    let vars = [
        net.input(inputs[0].clone()),
        net.input(inputs[1].clone()),
        net.input(inputs[2].clone()),
    ];
    let outs = pafpn_forward(&mut net, vars, channels)?;
    Ok([
        net.tape.value(outs[0]).clone(),
        net.tape.value(outs[1]).clone(),
        net.tape.value(outs[2]).clone(),
    ])
}

pub fn neck_weight_specs(channels: [usize; 3]) -> Vec<WeightSpec> {
    let [c1, c2, c3] = channels;
    let mut specs = Vec::new();
    specs.extend(conv_bn_specs("neck.lat2", c2, c3, 1));
    specs.extend(conv_bn_specs("neck.td2", c2, 2 * c2, 3));
    specs.extend(conv_bn_specs("neck.lat1", c1, c2, 1));
    specs.extend(conv_bn_specs("neck.td1", c1, 2 * c1, 3));
    specs.extend(conv_bn_specs("neck.bu1", c1, c1, 3));
    specs.extend(conv_bn_specs("neck.out2", c2, 2 * c1, 3));
    specs.extend(conv_bn_specs("neck.bu2", c2, c2, 3));
    specs.extend(conv_bn_specs("neck.out3", c3, 2 * c2, 3));
    specs
}
