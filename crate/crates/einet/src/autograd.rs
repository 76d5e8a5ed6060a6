//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes; [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients for every parameter leaf. The tape is not consumed
//! by backward, so replaying it yields identical gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Silu,
    NegSilu,
    Sigmoid,
    Relu,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

enum Op<S: Scalar> {
    Leaf,
    Unary { kind: UnaryKind, x: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { x: Var, factor: S },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Tensor<S>, var: Tensor<S>, train_stats: bool },
    Gap { x: Var },
    ChannelMax { x: Var, argmax: Vec<usize> },
    ChannelMean { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2 { x: Var },
    ConcatC { a: Var, b: Var },
    Fc { x: Var, w: Var, b: Option<Var> },
    SumAll { x: Var },
    MeanAll { x: Var },
    /// Gather spatial cells from a `C×H×W` map into a `C×k` matrix.
    GatherCells { x: Var, cells: Vec<usize> },
    /// Extract row `row` of a rank-2 matrix as a rank-1 vector.
    Row { x: Var, row: usize },
    /// Scalar sum of binary cross entropy with logits against constant targets.
    BceSum { x: Var, targets: Tensor<S> },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<String>,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for Gradients<S> {
    fn default() -> Self {
        Gradients { map: BTreeMap::new() }
    }
}

impl<S: Scalar> Gradients<S> {
    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<S>) {
        self.map.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.map.get(name).ok_or_else(|| Error::MissingGradient { name: name.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise sum with another gradient set (same keys).
    pub fn accumulate(&mut self, other: &Gradients<S>) -> Result<()> {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(dst) => {
                    let sum = dst.add(g)?;
                    *dst = sum;
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for g in self.map.values_mut() {
            *g = g.scale(factor);
        }
    }
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf: participates in forward math, receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A named parameter leaf.
    pub fn param(&mut self, name: &str, value: Tensor<S>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = match kind {
            UnaryKind::Silu => ops::silu(xv)?,
            UnaryKind::NegSilu => ops::neg_silu(xv)?,
            UnaryKind::Sigmoid => ops::sigmoid(xv)?,
            UnaryKind::Relu => ops::relu(xv)?,
            UnaryKind::Exp => ops::exp(xv)?,
        };
        let rg = self.needs(x);
        Ok(self.push(value, Op::Unary { kind, x }, rg))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn neg_silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::NegSilu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = match kind {
            BinaryKind::Add => av.add(bv)?,
            BinaryKind::Sub => av.sub(bv)?,
            BinaryKind::Mul => av.mul(bv)?,
            BinaryKind::Div => av.zip_broadcast(bv, "div", |x, y| x / y)?,
            BinaryKind::Min => av.zip_broadcast(bv, "min", |x, y| if y < x { y } else { x })?,
            BinaryKind::Max => av.zip_broadcast(bv, "max", |x, y| if y > x { y } else { x })?,
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary { kind, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, b)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Max, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let value = self.value(x).scale(factor);
        let rg = self.needs(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let rg = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Batch normalization. In train mode the statistics are computed from
    /// `x` (pass them in after calling [`ops::channel_stats`]); in inference
    /// mode they are the stored running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Tensor<S>,
        var: Tensor<S>,
        train_stats: bool,
    ) -> Result<Var> {
        let eps = S::from_f64(ops::BN_EPSILON);
        let value = ops::batch_norm_apply(self.value(x), self.value(gamma), self.value(beta), &mean, &var, eps)?;
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, mean, var, train_stats }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Gap { x }, rg))
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (value, argmax) = ops::channel_max(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::ChannelMax { x, argmax }, rg))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let value = ops::channel_mean(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::ChannelMean { x }, rg))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (value, argmax) = ops::max_pool2(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let value = ops::upsample_nearest2(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Upsample2 { x }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatC { a, b }, rg))
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = ops::fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(value, Op::Fc { x, w, b }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::SumAll { x }, rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / S::from_usize(xv.len()));
        let rg = self.needs(x);
        self.push(value, Op::MeanAll { x }, rg)
    }

    /// Gathers flattened spatial positions from a `C×H×W` map into `C×k`.
    pub fn gather_cells(&mut self, x: Var, cells: Vec<usize>) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("gather_cells")?;
        let hw = h * w;
        if cells.iter().any(|&i| i >= hw) {
            return Err(Error::shape("gather_cells", "cell index out of range".to_string()));
        }
        let mut data = Vec::with_capacity(c * cells.len());
        for ic in 0..c {
            let ch = &self.value(x).data()[ic * hw..(ic + 1) * hw];
            data.extend(cells.iter().map(|&i| ch[i]));
        }
        let value = Tensor::from_parts(vec![c, cells.len()], data);
        let rg = self.needs(x);
        Ok(self.push(value, Op::GatherCells { x, cells }, rg))
    }

    /// Row `row` of a rank-2 matrix, as a vector.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 2 || row >= shape[0] {
            return Err(Error::shape("row", format!("row {row} of shape {shape:?}")));
        }
        let k = shape[1];
        let data = self.value(x).data()[row * k..(row + 1) * k].to_vec();
        let value = Tensor::from_parts(vec![k], data);
        let rg = self.needs(x);
        Ok(self.push(value, Op::Row { x, row }, rg))
    }

    /// Scalar sum of BCE-with-logits against constant targets.
    pub fn bce_with_logits_sum(&mut self, x: Var, targets: Tensor<S>) -> Result<Var> {
        let total = ops::bce_with_logits_sum(self.value(x), &targets)?;
        let rg = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::BceSum { x, targets }, rg))
    }

    /// Multiply-accumulate count over every conv and FC node on the tape.
    pub fn conv_fc_macs(&self) -> u64 {
        let mut total: u64 = 0;
        for node in &self.nodes {
            match &node.op {
                Op::Conv2d { x, w, .. } => {
                    let ws = self.value(*w).shape();
                    let (c_out, c_in, k) = (ws[0] as u64, ws[1] as u64, ws[2] as u64);
                    let out = node.value.shape();
                    let _ = x;
                    total += c_out * (out[1] as u64) * (out[2] as u64) * c_in * k * k;
                }
                Op::Fc { w, .. } => {
                    let ws = self.value(*w).shape();
                    total += (ws[0] as u64) * (ws[1] as u64);
                }
                _ => {}
            }
        }
        total
    }

    /// Reverse pass from a scalar loss. Returns per-parameter gradients
    /// (zero tensors for parameters not connected to the loss).
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g, &mut grads)?;
            if self.nodes[id].param.is_some() {
                grads[id] = Some(g);
            }
        }

        let mut map = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[id].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(name.clone(), g);
            }
        }
        Ok(Gradients { map })
    }

    fn accum(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => {
                *existing = existing.add(&g)?;
            }
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let xv = self.value(*x);
                let gx = match kind {
                    UnaryKind::Silu => ops::silu_grad(xv, g),
                    UnaryKind::NegSilu => ops::neg_silu_grad(xv, g),
                    UnaryKind::Sigmoid => ops::sigmoid_grad(xv, g),
                    UnaryKind::Relu => ops::relu_grad(xv, g),
                    UnaryKind::Exp => self.nodes[id].value.mul(g)?,
                };
                self.accum(grads, *x, gx)?;
            }
            Op::Binary { kind, a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ga_full, gb_full) = match kind {
                    BinaryKind::Add => (g.clone(), g.clone()),
                    BinaryKind::Sub => (g.clone(), g.scale(-S::one())),
                    BinaryKind::Mul => (g.mul(bv)?, g.mul(av)?),
                    BinaryKind::Div => {
                        let ga = g.zip_broadcast(bv, "div_grad", |gv, y| gv / y)?;
                        let out = &self.nodes[id].value; // a/b
                        let gb = g.mul(out)?.zip_broadcast(bv, "div_grad", |gv, y| -gv / y)?;
                        (ga, gb)
                    }
                    BinaryKind::Min => {
                        // route to the chosen operand; ties prefer `a`
                        let mask = av.zip_broadcast(bv, "min_grad", |x, y| if y < x { S::zero() } else { S::one() })?;
                        let ga = g.mul(&mask)?;
                        let inv = mask.map(|m| S::one() - m);
                        let gb = g.mul(&inv)?;
                        (ga, gb)
                    }
                    BinaryKind::Max => {
                        let mask = av.zip_broadcast(bv, "max_grad", |x, y| if y > x { S::zero() } else { S::one() })?;
                        let ga = g.mul(&mask)?;
                        let inv = mask.map(|m| S::one() - m);
                        let gb = g.mul(&inv)?;
                        (ga, gb)
                    }
                };
                if self.needs(*a) {
                    self.accum(grads, *a, ga_full.reduce_to_shape(av.shape())?)?;
                }
                if self.needs(*b) {
                    self.accum(grads, *b, gb_full.reduce_to_shape(bv.shape())?)?;
                }
            }
            Op::Scale { x, factor } => {
                self.accum(grads, *x, g.scale(*factor))?;
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let need_gx = self.needs(*x);
                let with_bias = b.map(|b| self.needs(b)).unwrap_or(false);
                let (gx, gw, gb) =
                    ops::conv2d_grad(self.value(*x), self.value(*w), g, *stride, *pad, need_gx, with_bias)?;
                if let Some(gx) = gx {
                    self.accum(grads, *x, gx)?;
                }
                if self.needs(*w) {
                    self.accum(grads, *w, gw)?;
                }
                if let (Some(bv), Some(gb)) = (*b, gb) {
                    self.accum(grads, bv, gb)?;
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, var, train_stats } => {
                let eps = S::from_f64(ops::BN_EPSILON);
                let (gx, ggamma, gbeta) = if *train_stats {
                    ops::batch_norm_train_grad(self.value(*x), self.value(*gamma), mean, var, eps, g)
                } else {
                    ops::batch_norm_infer_grad(self.value(*x), self.value(*gamma), mean, var, eps, g)
                };
                if self.needs(*x) {
                    self.accum(grads, *x, gx)?;
                }
                if self.needs(*gamma) {
                    self.accum(grads, *gamma, ggamma)?;
                }
                if self.needs(*beta) {
                    self.accum(grads, *beta, gbeta)?;
                }
            }
            Op::Gap { x } => {
                let gx = ops::global_avg_pool_grad(self.value(*x).shape(), g);
                self.accum(grads, *x, gx)?;
            }
            Op::ChannelMax { x, argmax } => {
                let gx = ops::channel_max_grad(self.value(*x).shape(), argmax, g);
                self.accum(grads, *x, gx)?;
            }
            Op::ChannelMean { x } => {
                let gx = ops::channel_mean_grad(self.value(*x).shape(), g);
                self.accum(grads, *x, gx)?;
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = ops::max_pool2_grad(self.value(*x).shape(), argmax, g);
                self.accum(grads, *x, gx)?;
            }
            Op::Upsample2 { x } => {
                let gx = ops::upsample_nearest2_grad(self.value(*x).shape(), g);
                self.accum(grads, *x, gx)?;
            }
            Op::ConcatC { a, b } => {
                let ca = self.value(*a).shape()[0];
                let hw = self.value(*a).shape()[1] * self.value(*a).shape()[2];
                let (ga, gb) = ops::concat_channels_grad(ca, hw, g);
                if self.needs(*a) {
                    self.accum(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    self.accum(grads, *b, gb)?;
                }
            }
            Op::Fc { x, w, b } => {
                let with_bias = b.map(|b| self.needs(b)).unwrap_or(false);
                let (gx, gw, gb) = ops::fully_connected_grad(self.value(*x), self.value(*w), g, with_bias);
                if self.needs(*x) {
                    self.accum(grads, *x, gx)?;
                }
                if self.needs(*w) {
                    self.accum(grads, *w, gw)?;
                }
                if let (Some(bv), Some(gb)) = (*b, gb) {
                    self.accum(grads, bv, gb)?;
                }
            }
            Op::SumAll { x } => {
                let gs = g.data()[0];
                let gx = Tensor::full(self.value(*x).shape(), gs);
                self.accum(grads, *x, gx)?;
            }
            Op::MeanAll { x } => {
                let n = S::from_usize(self.value(*x).len());
                let gs = g.data()[0] / n;
                let gx = Tensor::full(self.value(*x).shape(), gs);
                self.accum(grads, *x, gx)?;
            }
            Op::GatherCells { x, cells } => {
                let (c, h, w) = (self.value(*x).shape()[0], self.value(*x).shape()[1], self.value(*x).shape()[2]);
                let hw = h * w;
                let mut gx = Tensor::zeros(&[c, h, w]);
                for ic in 0..c {
                    for (j, &cell) in cells.iter().enumerate() {
                        let idx = ic * hw + cell;
                        gx.data_mut()[idx] += g.data()[ic * cells.len() + j];
                    }
                }
                self.accum(grads, *x, gx)?;
            }
            Op::Row { x, row } => {
                let shape = self.value(*x).shape().to_vec();
                let k = shape[1];
                let mut gx = Tensor::zeros(&shape);
                gx.data_mut()[row * k..(row + 1) * k].copy_from_slice(g.data());
                self.accum(grads, *x, gx)?;
            }
            Op::BceSum { x, targets } => {
                let gx = ops::bce_with_logits_sum_grad(self.value(*x), targets, g.data()[0]);
                self.accum(grads, *x, gx)?;
            }
        }
        Ok(())
    }
}
