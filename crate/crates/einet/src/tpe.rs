//! Temporal Proximity Enhancement.
//!
//! Each neighbor frame's feature map is weighted by its own channel
//! descriptor `P` (global average pool, `C×1×1`) and cross-channel maximum
//! map `V` (`1×H×W`); the weighted neighbors are summed and replace the
//! current frame's features. The current frame's own features do not enter
//! the sum unless the residual flag is set.

use std::collections::BTreeMap;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::net::Net;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel (`P`) and spatial (`V`) statistics of one feature map.
#[derive(Clone, Debug)]
pub struct ScscStats<S> {
    /// Global-average-pool descriptor, `C×1×1`.
    pub channel_desc: Tensor<S>,
    /// Cross-channel maximum map, `1×H×W`.
    pub spatial_max: Tensor<S>,
}

impl<S: Scalar> ScscStats<S> {
    /// The broadcast similarity tensor `P × V`, `C×H×W`.
    pub fn similarity(&self) -> Result<Tensor<S>> {
        self.channel_desc.mul(&self.spatial_max)
    }
}

pub fn scsc_stats<S: Scalar>(feature: &Tensor<S>) -> Result<ScscStats<S>> {
    let channel_desc = ops::global_avg_pool(feature)?;
    let (spatial_max, _) = ops::channel_max(feature)?;
    Ok(ScscStats { channel_desc, spatial_max })
}

/// An ordered set of nonzero frame offsets relative to the current frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalWindow {
    offsets: Vec<i32>,
}

impl TemporalWindow {
    pub fn new(offsets: &[i32]) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Window("window must contain at least one offset".to_string()));
        }
        let mut seen = Vec::new();
        for &o in offsets {
            if o == 0 {
                return Err(Error::Window("offset 0 is the current frame and is excluded".to_string()));
            }
            if o.abs() > 2 {
                return Err(Error::Window(format!("offset magnitude must be <= 2, got {o}")));
            }
            if seen.contains(&o) {
                return Err(Error::Window(format!("duplicate offset {o}")));
            }
            seen.push(o);
        }
        Ok(TemporalWindow { offsets: seen })
    }

    pub fn offsets(&self) -> &[i32] {
        &self.offsets
    }

    /// Auxiliary-frame ablation groups:
    /// a `[-2]`, b `[-1]`, c `[+1]`, d `[+2]`, e `[-2,-1]`, f `[-1,+1]`,
    /// g `[+1,+2]`, h `[-2,-1,+1,+2]`.
    pub fn group(tag: char) -> Result<Self> {
        let offsets: &[i32] = match tag {
            'a' => &[-2],
            'b' => &[-1],
            'c' => &[1],
            'd' => &[2],
            'e' => &[-2, -1],
            'f' => &[-1, 1],
            'g' => &[1, 2],
            'h' => &[-2, -1, 1, 2],
            other => return Err(Error::Window(format!("unknown window group '{other}' (expected a..h)"))),
        };
        TemporalWindow::new(offsets)
    }

    /// Accepts a group letter (`f`) or an explicit comma list (`-1,+1`).
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.len() == 1 {
            if let Some(c) = trimmed.chars().next() {
                if c.is_ascii_alphabetic() {
                    return Self::group(c);
                }
            }
        }
        let offsets: Vec<i32> = trimmed
            .split(',')
            .map(|p| p.trim().parse::<i32>().map_err(|_| Error::Window(format!("bad offset '{p}'"))))
            .collect::<Result<_>>()?;
        TemporalWindow::new(&offsets)
    }
}

impl Default for TemporalWindow {
    fn default() -> Self {
        TemporalWindow { offsets: vec![-1, 1] }
    }
}

impl std::fmt::Display for TemporalWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.offsets.iter().map(|o| format!("{o:+}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Clamps each requested frame index `t + o` into `[0, video_length − 1]`.
pub fn clamp_triplet(video_length: usize, t: usize, window: &TemporalWindow) -> Result<BTreeMap<i32, usize>> {
    if video_length == 0 {
        return Err(Error::Input("empty video".to_string()));
    }
    if t >= video_length {
        return Err(Error::Input(format!("frame {t} out of range for video of length {video_length}")));
    }
    let last = (video_length - 1) as i64;
    Ok(window
        .offsets()
        .iter()
        .map(|&o| {
            let idx = (t as i64 + o as i64).clamp(0, last) as usize;
            (o, idx)
        })
        .collect())
}

/// `P_o · V_o · F_o` for one neighbor, on the tape.
fn weighted_neighbor<S: Scalar>(net: &mut Net<S>, frame: Var) -> Result<Var> {
    let p = net.tape.global_avg_pool(frame)?;
    let v = net.tape.channel_max(frame)?;
    let pv = net.tape.mul(p, v)?;
    net.tape.mul(pv, frame)
}

/// Sum of self-weighted neighbor features over the window. `current` adds
/// the current frame's features on top (the non-default residual probe).
pub fn tpe_enhance<S: Scalar>(
    net: &mut Net<S>,
    frames: &BTreeMap<i32, Var>,
    window: &TemporalWindow,
    current: Option<Var>,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &o in window.offsets() {
        let frame = *frames
            .get(&o)
            .ok_or_else(|| Error::Window(format!("offset {o:+} missing from provided frames")))?;
        let term = weighted_neighbor(net, frame)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => net.tape.add(prev, term)?,
        });
    }
    let mut out = acc.expect("window is non-empty");
    if let Some(cur) = current {
        out = net.tape.add(out, cur)?;
    }
    Ok(out)
}

/// Two-neighbor fusion: `P_{t−1}·V_{t−1}·F_{t−1} + P_{t+1}·V_{t+1}·F_{t+1}`.
pub fn tpe_fuse<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>) -> Result<Tensor<S>> {
    if prev.shape() != next.shape() {
        return Err(Error::shape("tpe_fuse", format!("{:?} vs {:?}", prev.shape(), next.shape())));
    }
    let mut frames = BTreeMap::new();
    frames.insert(-1, prev);
    frames.insert(1, next);
    tpe_fuse_window(&frames, &TemporalWindow::default())
}

/// Window generalization of [`tpe_fuse`]: `Σ_o P_o·V_o·F_o`.
pub fn tpe_fuse_window<S: Scalar>(frames: &BTreeMap<i32, &Tensor<S>>, window: &TemporalWindow) -> Result<Tensor<S>> {
    let mut acc: Option<Tensor<S>> = None;
    for &o in window.offsets() {
        let f = *frames
            .get(&o)
            .ok_or_else(|| Error::Window(format!("offset {o:+} missing from provided frames")))?;
        let stats = scsc_stats(f)?;
        let term = stats.similarity()?.mul(f)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => prev.add(&term)?,
        });
    }
    Ok(acc.expect("window is non-empty"))
}
