//! Builder that wires weight tensors from a registry onto a [`Tape`].
//!
//! One `Net` corresponds to one forward pass. Parameter leaves are created
//! on first use and cached by name, so a weight shared across frames (e.g.
//! a backbone applied to three frames) accumulates gradient from every use.

use std::collections::BTreeMap;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

/// Per-channel batch statistics captured during a train-mode forward, used
/// by the training loop to update the running buffers afterwards.
pub struct BnBatchStat<S> {
    pub prefix: String,
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

/// How a forward pass treats parameters.
///
/// Normalization layers use the sample's own per-channel spatial
/// statistics in both modes, so the inference forward is exactly the
/// training forward. At batch size 2 the running-average statistics are
/// not representative of any single sample and inference through them
/// collapses detection quality; the running buffers are still maintained
/// and serialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Constants only, no gradients.
    Infer,
    /// Parameters become gradient leaves; sample statistics are recorded
    /// for the running-buffer momentum update.
    TrainBatchStats,
}

pub struct Net<'w, S: Scalar> {
    pub tape: Tape<S>,
    weights: &'w ModelWeights<S>,
    mode: Mode,
    cache: BTreeMap<String, Var>,
    pub bn_stats: Vec<BnBatchStat<S>>,
    touched: Vec<String>,
}

impl<'w, S: Scalar> Net<'w, S> {
    pub fn new(weights: &'w ModelWeights<S>, training: bool) -> Self {
        Self::with_mode(weights, if training { Mode::TrainBatchStats } else { Mode::Infer })
    }

    pub fn with_mode(weights: &'w ModelWeights<S>, mode: Mode) -> Self {
        Net {
            tape: Tape::new(),
            weights,
            mode,
            cache: BTreeMap::new(),
            bn_stats: Vec::new(),
            touched: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.mode != Mode::Infer
    }

    /// Parameter names referenced so far, in first-use order.
    pub fn touched_names(&self) -> &[String] {
        &self.touched
    }

    pub fn input(&mut self, image: Tensor<S>) -> Var {
        self.tape.constant(image)
    }

    /// Fetches a weight tensor as a tape leaf (cached per name). Buffers
    /// (running statistics) become constants; parameters become grad leaves
    /// in training mode.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.cache.get(name) {
            return Ok(v);
        }
        let tensor = self.weights.get(name)?.clone();
        let var = if self.training() && !ModelWeights::<S>::is_buffer(name) {
            self.tape.param(name, tensor)
        } else {
            self.tape.constant(tensor)
        };
        self.cache.insert(name.to_string(), var);
        self.touched.push(name.to_string());
        Ok(var)
    }

    /// Convolution layer `{prefix}.conv.w` (+ optional `.conv.b`).
    pub fn conv(&mut self, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.conv.w"))?;
        let b = if self.weights.contains(&format!("{prefix}.conv.b")) {
            Some(self.p(&format!("{prefix}.conv.b"))?)
        } else {
            None
        };
        self.tape.conv2d(x, w, b, stride, pad)
    }

    /// Batch norm layer `{prefix}.bn.{gamma,beta,running_mean,running_var}`.
    /// Train mode normalizes with the sample's own statistics and records
    /// them; inference mode uses the running buffers.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.bn.gamma"))?;
        let beta = self.p(&format!("{prefix}.bn.beta"))?;
        let (mean, var) = ops::channel_stats(self.tape.value(x))?;
        match self.mode {
            Mode::TrainBatchStats => {
                self.bn_stats.push(BnBatchStat { prefix: prefix.to_string(), mean: mean.clone(), var: var.clone() });
                self.tape.batch_norm(x, gamma, beta, mean, var, true)
            }
            Mode::Infer => self.tape.batch_norm(x, gamma, beta, mean, var, false),
        }
    }

    /// conv → batch norm → SiLU, the standard block. Returns the activated
    /// output and the pre-activation (post-norm) value.
    pub fn conv_bn_silu(&mut self, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<(Var, Var)> {
        let c = self.conv(x, prefix, stride, pad)?;
        let n = self.batch_norm(c, prefix)?;
        let a = self.tape.silu(n)?;
        Ok((a, n))
    }

    /// Fully connected layer `{prefix}.fc.w` (+ `.fc.b`).
    pub fn fc(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.fc.w"))?;
        let b = if self.weights.contains(&format!("{prefix}.fc.b")) {
            Some(self.p(&format!("{prefix}.fc.b"))?)
        } else {
            None
        };
        self.tape.fully_connected(x, w, b)
    }
}
