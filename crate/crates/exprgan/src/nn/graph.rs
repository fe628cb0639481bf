//! Tape-based reverse-mode differentiation over the layer vocabulary the
//! networks need: conv / transposed conv / fully connected layers, the usual
//! activations, concat/reshape plumbing, and the scalar loss reductions.
//!
//! A [`Graph`] records every forward operation as a node; [`Graph::backward`]
//! walks the tape in reverse and accumulates analytic gradients on all
//! ancestors of the requested scalar. Nodes are addressed by [`VarId`], so a
//! graph is a plain `Vec` and owns no `Rc` cycles; one graph per training
//! step, dropped afterwards.

use ndarray::parallel::prelude::*;
use ndarray::prelude::*;
use ndarray::{concatenate, ArrayD, Axis, IxDyn, Zip};

use crate::error::{Error, Result};

/// Element type the graph runs on. Training uses `f32`; gradient checks run
/// the identical code in `f64` where finite differences are meaningful.
pub trait Scalar:
    num_traits::Float
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Probabilities are clamped to this floor before any `log`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    LeakyRelu {
        x: VarId,
        slope: f64,
    },
    Tanh {
        x: VarId,
    },
    Sigmoid {
        x: VarId,
    },
    Softmax {
        x: VarId,
    },
    Concat {
        xs: Vec<VarId>,
        axis: usize,
    },
    Reshape {
        x: VarId,
    },
    CrossEntropyLogits {
        logits: VarId,
        labels: Vec<usize>,
    },
    MeanAbsDiff {
        a: VarId,
        b: VarId,
    },
    MeanSqDiff {
        a: VarId,
        b: VarId,
    },
    MeanNegLog {
        p: VarId,
    },
    MeanNegLogOneMinus {
        p: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    Scale {
        x: VarId,
        c: f64,
    },
}

struct Node<T> {
    value: ArrayD<T>,
    grad: ArrayD<T>,
    op: Op,
}

/// A recorded forward computation.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, op: Op) -> VarId {
        let grad = ArrayD::zeros(value.raw_dim());
        self.nodes.push(Node { value, grad, op });
        VarId(self.nodes.len() - 1)
    }

    /// Registers a leaf tensor (input or parameter).
    pub fn input<D: ndarray::Dimension>(&mut self, value: Array<T, D>) -> VarId {
        self.push(value.into_dyn(), Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &ArrayD<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: VarId) -> &ArrayD<T> {
        &self.nodes[id.0].grad
    }

    /// Value of a single-element node as `f64`.
    pub fn scalar(&self, id: VarId) -> Result<f64> {
        let v = &self.nodes[id.0].value;
        if v.len() != 1 {
            return Err(Error::Dimension(format!(
                "expected scalar node, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.iter().next().unwrap().as_f64())
    }

    fn check(&self, id: VarId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "variable id {} does not belong to this graph",
                id.0
            )));
        }
        Ok(())
    }

    fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ---- layers ------------------------------------------------------

    /// 2-D convolution. `x`: (N, Cin, H, W), `w`: (Cout, Cin, kh, kw),
    /// `b`: (Cout). Zero padding.
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> Result<VarId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::Dimension(format!(
                "conv2d: want x 4-d, w 4-d, b 1-d, got x {:?}, w {:?}, b {:?}",
                xs, ws, bs
            )));
        }
        if xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::Dimension(format!(
                "conv2d: channel mismatch, x {:?} vs w {:?} vs b {:?}",
                xs, ws, bs
            )));
        }
        let (kh, kw) = (ws[2], ws[3]);
        if xs[2] + 2 * pad < kh || xs[3] + 2 * pad < kw {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {}x{} does not fit input {:?} with pad {}",
                kh, kw, xs, pad
            )));
        }
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let y = conv2d_forward(&xv, &wv, &bv, stride, pad);
        Ok(self.push(y.into_dyn(), Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Transposed 2-D convolution. `x`: (N, Cin, H, W), `w`: (Cin, Cout, kh, kw),
    /// `b`: (Cout). Output spatial size `(H-1)*stride - 2*pad + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    ) -> Result<VarId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: want x 4-d, w 4-d, b 1-d, got x {:?}, w {:?}, b {:?}",
                xs, ws, bs
            )));
        }
        if xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: channel mismatch, x {:?} vs w {:?} vs b {:?}",
                xs, ws, bs
            )));
        }
        let (kh, kw) = (ws[2], ws[3]);
        if (xs[2] - 1) * stride + kh < 2 * pad || (xs[3] - 1) * stride + kw < 2 * pad {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: output collapses for input {:?}, kernel {}x{}, pad {}",
                xs, kh, kw, pad
            )));
        }
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let y = conv_transpose2d_forward(&xv, &wv, &bv, stride, pad);
        Ok(self.push(y.into_dyn(), Op::ConvTranspose2d { x, w, b, stride, pad }))
    }

    /// Fully connected layer. `x`: (N, F), `w`: (O, F), `b`: (O).
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::Dimension(format!(
                "linear: incompatible shapes x {:?}, w {:?}, b {:?}",
                xs, ws, bs
            )));
        }
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let y = xv.dot(&wv.t()) + bv;
        Ok(self.push(y.into_dyn(), Op::Linear { x, w, b }))
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: f64) -> Result<VarId> {
        self.check(x)?;
        let s = T::from_f64(slope);
        let y = self.nodes[x.0]
            .value
            .mapv(|v| if v > T::zero() { v } else { v * s });
        Ok(self.push(y, Op::LeakyRelu { x, slope }))
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let y = self.nodes[x.0].value.mapv(|v| v.tanh());
        Ok(self.push(y, Op::Tanh { x }))
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let one = T::one();
        let y = self.nodes[x.0].value.mapv(|v| one / (one + (-v).exp()));
        Ok(self.push(y, Op::Sigmoid { x }))
    }

    /// Row-wise softmax over the last axis of a 2-d tensor.
    pub fn softmax(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        if self.shape(x).len() != 2 {
            return Err(Error::Dimension(format!(
                "softmax: want a 2-d tensor, got {:?}",
                self.shape(x)
            )));
        }
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let y = softmax_rows(&xv);
        Ok(self.push(y.into_dyn(), Op::Softmax { x }))
    }

    pub fn concat(&mut self, xs: &[VarId], axis: usize) -> Result<VarId> {
        if xs.is_empty() {
            return Err(Error::Usage("concat: empty input list".into()));
        }
        for &x in xs {
            self.check(x)?;
        }
        let views: Vec<_> = xs.iter().map(|&x| self.nodes[x.0].value.view()).collect();
        let y = concatenate(Axis(axis), &views)
            .map_err(|e| Error::Dimension(format!("concat along axis {}: {}", axis, e)))?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec(), axis }))
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        self.check(x)?;
        let y = self.nodes[x.0]
            .value
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| Error::Dimension(format!("reshape to {:?}: {}", shape, e)))?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    // ---- losses ------------------------------------------------------

    /// Mean softmax cross-entropy from raw logits. `logits`: (N, K).
    pub fn cross_entropy_logits(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        self.check(logits)?;
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy_logits: logits {:?} vs {} labels",
                ls,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= ls[1]) {
            return Err(Error::Dataset(format!(
                "cross_entropy_logits: label {} out of range 0..{}",
                bad, ls[1]
            )));
        }
        let lv = self.nodes[logits.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let mut total = T::zero();
        for (row, &label) in lv.outer_iter().zip(labels) {
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total = total + lse - row[label];
        }
        let mean = total / T::from_f64(labels.len() as f64);
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), mean),
            Op::CrossEntropyLogits { logits, labels: labels.to_vec() },
        ))
    }

    pub fn mean_abs_diff(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "mean_abs_diff")?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let n = T::from_f64(av.len() as f64);
        let total: T = av.iter().zip(bv.iter()).map(|(&x, &y)| (x - y).abs()).sum();
        Ok(self.push(ArrayD::from_elem(IxDyn(&[]), total / n), Op::MeanAbsDiff { a, b }))
    }

    pub fn mean_sq_diff(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "mean_sq_diff")?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let n = T::from_f64(av.len() as f64);
        let total: T = av
            .iter()
            .zip(bv.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(ArrayD::from_elem(IxDyn(&[]), total / n), Op::MeanSqDiff { a, b }))
    }

    /// `mean(-log(clamp(p)))` over all elements; `p` must hold probabilities.
    pub fn mean_neg_log(&mut self, p: VarId) -> Result<VarId> {
        self.check(p)?;
        let eps = T::from_f64(LOG_CLAMP);
        let pv = &self.nodes[p.0].value;
        let n = T::from_f64(pv.len() as f64);
        let total: T = pv.iter().map(|&v| -(v.max(eps)).ln()).sum();
        Ok(self.push(ArrayD::from_elem(IxDyn(&[]), total / n), Op::MeanNegLog { p }))
    }

    /// `mean(-log(clamp(1 - p)))` over all elements.
    pub fn mean_neg_log_one_minus(&mut self, p: VarId) -> Result<VarId> {
        self.check(p)?;
        let eps = T::from_f64(LOG_CLAMP);
        let one = T::one();
        let pv = &self.nodes[p.0].value;
        let n = T::from_f64(pv.len() as f64);
        let total: T = pv.iter().map(|&v| -((one - v).max(eps)).ln()).sum();
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), total / n),
            Op::MeanNegLogOneMinus { p },
        ))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "add")?;
        let y = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> Result<VarId> {
        self.check(x)?;
        let y = self.nodes[x.0].value.mapv(|v| v * T::from_f64(c));
        Ok(self.push(y, Op::Scale { x, c }))
    }

    fn same_shape(&self, a: VarId, b: VarId, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{}: shape mismatch {:?} vs {:?}",
                what,
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- backward ----------------------------------------------------

    /// (pre-activation, bias) pairs for every leaky-rectified affine layer
    /// recorded so far. Used by the gradient checker to steer rectifier
    /// inputs away from their kinks before finite differencing.
    pub fn rectifier_preactivations(&self) -> Vec<(VarId, VarId)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                let b = match self.nodes[x.0].op {
                    Op::Conv2d { b, .. }
                    | Op::ConvTranspose2d { b, .. }
                    | Op::Linear { b, .. } => b,
                    _ => continue,
                };
                out.push((x, b));
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(T::zero());
        }
    }

    /// Accumulates `d loss / d ancestor` onto every ancestor of `loss`,
    /// seeding the walk with an upstream gradient of 1. `loss` must be a
    /// single-element node produced by a recorded forward pass.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if matches!(self.nodes[loss.0].op, Op::Leaf) {
            return Err(Error::Usage(
                "backward: node is a leaf; no forward computation was recorded".into(),
            ));
        }
        let one = T::one();
        self.nodes[loss.0].grad.fill(one);

        // Reachability mark so unrelated subgraphs are skipped.
        let mut live = vec![false; loss.0 + 1];
        live[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if !live[i] {
                continue;
            }
            for dep in op_inputs(&self.nodes[i].op) {
                live[dep.0] = true;
            }
        }

        for i in (0..=loss.0).rev() {
            if !live[i] {
                continue;
            }
            self.backprop_node(i)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize) -> Result<()> {
        // Split borrow: take the node's grad, scatter into inputs, restore.
        let gout = std::mem::replace(&mut self.nodes[i].grad, ArrayD::zeros(IxDyn(&[])));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let gy = gout.view().into_dimensionality::<Ix4>().unwrap();
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let (gx, gw, gb) = conv2d_backward(&xv, &wv, &gy, stride, pad);
                self.accumulate(x, gx.into_dyn());
                self.accumulate(w, gw.into_dyn());
                self.accumulate(b, gb.into_dyn());
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let gy = gout.view().into_dimensionality::<Ix4>().unwrap();
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let (gx, gw, gb) = conv_transpose2d_backward(&xv, &wv, &gy, stride, pad);
                self.accumulate(x, gx.into_dyn());
                self.accumulate(w, gw.into_dyn());
                self.accumulate(b, gb.into_dyn());
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let gy = gout.view().into_dimensionality::<Ix2>().unwrap();
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let gx = gy.dot(&wv);
                let gw = gy.t().dot(&xv);
                let gb = gy.sum_axis(Axis(0));
                self.accumulate(x, gx.into_dyn());
                self.accumulate(w, gw.into_dyn());
                self.accumulate(b, gb.into_dyn());
            }
            Op::LeakyRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let s = T::from_f64(slope);
                let g = Zip::from(&gout)
                    .and(&self.nodes[x.0].value)
                    .map_collect(|&g, &v| if v > T::zero() { g } else { g * s });
                self.accumulate(x, g);
            }
            Op::Tanh { x } => {
                let x = *x;
                let g = Zip::from(&gout)
                    .and(&self.nodes[i].value)
                    .map_collect(|&g, &y| g * (T::one() - y * y));
                self.accumulate(x, g);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let g = Zip::from(&gout)
                    .and(&self.nodes[i].value)
                    .map_collect(|&g, &y| g * y * (T::one() - y));
                self.accumulate(x, g);
            }
            Op::Softmax { x } => {
                let x = *x;
                let y = self.nodes[i].value.view().into_dimensionality::<Ix2>().unwrap();
                let gy = gout.view().into_dimensionality::<Ix2>().unwrap();
                let mut gx = Array2::<T>::zeros(y.raw_dim());
                for ((yr, gr), mut out) in y.outer_iter().zip(gy.outer_iter()).zip(gx.outer_iter_mut()) {
                    let dot: T = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    for ((&yi, &gi), o) in yr.iter().zip(gr.iter()).zip(out.iter_mut()) {
                        *o = yi * (gi - dot);
                    }
                }
                self.accumulate(x, gx.into_dyn());
            }
            Op::Concat { xs, axis } => {
                let (xs, axis) = (xs.clone(), *axis);
                let mut offset = 0;
                for x in xs {
                    let len = self.nodes[x.0].value.shape()[axis];
                    let piece = gout
                        .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    self.accumulate(x, piece);
                    offset += len;
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                let shape = self.nodes[x.0].value.raw_dim();
                let g = gout
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(shape)
                    .unwrap();
                self.accumulate(x, g);
            }
            Op::CrossEntropyLogits { logits, labels } => {
                let (logits, labels) = (*logits, labels.clone());
                let up = *gout.iter().next().unwrap();
                let lv = self.nodes[logits.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let mut g = softmax_rows(&lv);
                let n = T::from_f64(labels.len() as f64);
                for (mut row, &label) in g.outer_iter_mut().zip(&labels) {
                    row[label] = row[label] - T::one();
                    row.mapv_inplace(|v| v * up / n);
                }
                self.accumulate(logits, g.into_dyn());
            }
            Op::MeanAbsDiff { a, b } => {
                let (a, b) = (*a, *b);
                let up = *gout.iter().next().unwrap();
                let n = T::from_f64(self.nodes[a.0].value.len() as f64);
                let ga = Zip::from(&self.nodes[a.0].value)
                    .and(&self.nodes[b.0].value)
                    .map_collect(|&x, &y| {
                        let s = if x > y {
                            T::one()
                        } else if x < y {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        s * up / n
                    });
                let gb = ga.mapv(|v| -v);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::MeanSqDiff { a, b } => {
                let (a, b) = (*a, *b);
                let up = *gout.iter().next().unwrap();
                let n = T::from_f64(self.nodes[a.0].value.len() as f64);
                let two = T::from_f64(2.0);
                let ga = Zip::from(&self.nodes[a.0].value)
                    .and(&self.nodes[b.0].value)
                    .map_collect(|&x, &y| two * (x - y) * up / n);
                let gb = ga.mapv(|v| -v);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::MeanNegLog { p } => {
                let p = *p;
                let up = *gout.iter().next().unwrap();
                let eps = T::from_f64(LOG_CLAMP);
                let n = T::from_f64(self.nodes[p.0].value.len() as f64);
                let g = self.nodes[p.0].value.mapv(|v| {
                    if v > eps {
                        -up / (v * n)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(p, g);
            }
            Op::MeanNegLogOneMinus { p } => {
                let p = *p;
                let up = *gout.iter().next().unwrap();
                let eps = T::from_f64(LOG_CLAMP);
                let one = T::one();
                let n = T::from_f64(self.nodes[p.0].value.len() as f64);
                let g = self.nodes[p.0].value.mapv(|v| {
                    if one - v > eps {
                        up / ((one - v) * n)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(p, g);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout.clone());
                self.accumulate(b, gout.clone());
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let g = gout.mapv(|v| v * T::from_f64(c));
                self.accumulate(x, g);
            }
        }
        self.nodes[i].grad = gout;
        Ok(())
    }

    fn accumulate(&mut self, id: VarId, g: ArrayD<T>) {
        self.nodes[id.0].grad += &g;
    }
}

fn op_inputs(op: &Op) -> Vec<VarId> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } | Op::Linear { x, w, b } => {
            vec![*x, *w, *b]
        }
        Op::LeakyRelu { x, .. }
        | Op::Tanh { x }
        | Op::Sigmoid { x }
        | Op::Softmax { x }
        | Op::Reshape { x }
        | Op::Scale { x, .. } => vec![*x],
        Op::Concat { xs, .. } => xs.clone(),
        Op::CrossEntropyLogits { logits, .. } => vec![*logits],
        Op::MeanAbsDiff { a, b } | Op::MeanSqDiff { a, b } | Op::Add { a, b } => vec![*a, *b],
        Op::MeanNegLog { p } | Op::MeanNegLogOneMinus { p } => vec![*p],
    }
}

// ---- convolution kernels (im2col + gemm) ------------------------------

pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

pub fn conv_transpose_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n - 1) * stride + k - 2 * pad
}

/// Unfolds patches of one sample into a (Cin*kh*kw, Ho*Wo) matrix.
fn im2col_one<T: Scalar>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (cin, h, w) = x.dim();
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut cols = Array2::<T>::zeros((cin * kh * kw, ho * wo));
    for ci in 0..cin {
        for i in 0..kh {
            for j in 0..kw {
                let row = ci * kh * kw + i * kw + j;
                for oy in 0..ho {
                    let sy = oy * stride + i;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let sy = sy - pad;
                    for ox in 0..wo {
                        let sx = ox * stride + j;
                        if sx < pad || sx >= w + pad {
                            continue;
                        }
                        cols[[row, oy * wo + ox]] = x[[ci, sy, sx - pad]];
                    }
                }
            }
        }
    }
    cols
}

/// Inverse of [`im2col_one`]: scatter-adds columns back into an image.
fn col2im_one<T: Scalar>(
    cols: &ArrayView2<T>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut img = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ci * kh * kw + i * kw + j;
                for oy in 0..ho {
                    let sy = oy * stride + i;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let sy = sy - pad;
                    for ox in 0..wo {
                        let sx = ox * stride + j;
                        if sx < pad || sx >= w + pad {
                            continue;
                        }
                        img[[ci, sy, sx - pad]] = img[[ci, sy, sx - pad]] + cols[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    img
}

fn conv2d_forward<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    b: &ArrayView1<T>,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (n, _cin, h, wi) = x.dim();
    let (cout, cin, kh, kw) = w.dim();
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(wi, kw, stride, pad);
    let w2 = w.to_shape((cout, cin * kh * kw)).unwrap().to_owned();
    let mut y = Array4::<T>::zeros((n, cout, ho, wo));
    Zip::from(y.outer_iter_mut())
        .and(x.outer_iter())
        .par_for_each(|mut yn, xn| {
            let cols = im2col_one(&xn, kh, kw, stride, pad);
            let out = w2.dot(&cols); // (cout, ho*wo)
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        yn[[co, oy, ox]] = out[[co, oy * wo + ox]] + b[co];
                    }
                }
            }
        });
    y
}

#[allow(clippy::type_complexity)]
fn conv2d_backward<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    gy: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> (Array4<T>, Array4<T>, Array1<T>) {
    let (n, _cin0, h, wi) = x.dim();
    let (cout, cin, kh, kw) = w.dim();
    let (_, _, ho, wo) = gy.dim();
    let w2 = w.to_shape((cout, cin * kh * kw)).unwrap().to_owned();

    let mut gx = Array4::<T>::zeros(x.raw_dim());
    // Per-sample weight-gradient partials, reduced in index order afterwards
    // so the result does not depend on thread scheduling.
    let parts: Vec<Array2<T>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let xn = x.index_axis(Axis(0), ni);
            let gyn = gy.index_axis(Axis(0), ni);
            let gy2 = gyn.to_shape((cout, ho * wo)).unwrap().to_owned();
            let cols = im2col_one(&xn, kh, kw, stride, pad);
            gy2.dot(&cols.t())
        })
        .collect();
    Zip::from(gx.outer_iter_mut())
        .and(gy.outer_iter())
        .par_for_each(|mut gxn, gyn| {
            let gy2 = gyn.to_shape((cout, ho * wo)).unwrap().to_owned();
            let gcols = w2.t().dot(&gy2);
            let img = col2im_one(&gcols.view(), cin, h, wi, kh, kw, stride, pad);
            gxn.assign(&img);
        });

    let mut gw2 = Array2::<T>::zeros((cout, cin * kh * kw));
    for p in parts {
        gw2 += &p;
    }
    let gw = gw2.into_shape_with_order((cout, cin, kh, kw)).unwrap();
    let mut gb = Array1::<T>::zeros(cout);
    for ni in 0..n {
        for co in 0..cout {
            gb[co] = gb[co] + gy.index_axis(Axis(0), ni).index_axis(Axis(0), co).sum();
        }
    }
    (gx, gw, gb)
}

fn conv_transpose2d_forward<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    b: &ArrayView1<T>,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (n, cin0, h, wi) = x.dim();
    let (_cin, cout, kh, kw) = w.dim();
    let ho = conv_transpose_out_size(h, kh, stride, pad);
    let wo = conv_transpose_out_size(wi, kw, stride, pad);
    let w2 = w.to_shape((cin0, cout * kh * kw)).unwrap().to_owned();
    let mut y = Array4::<T>::zeros((n, cout, ho, wo));
    Zip::from(y.outer_iter_mut())
        .and(x.outer_iter())
        .par_for_each(|mut yn, xn| {
            let x2 = xn.to_shape((cin0, h * wi)).unwrap().to_owned();
            let cols = w2.t().dot(&x2); // (cout*kh*kw, h*wi)
            let img = col2im_one(&cols.view(), cout, ho, wo, kh, kw, stride, pad);
            yn.assign(&img);
            for co in 0..cout {
                let mut ch = yn.index_axis_mut(Axis(0), co);
                ch.mapv_inplace(|v| v + b[co]);
            }
        });
    y
}

#[allow(clippy::type_complexity)]
fn conv_transpose2d_backward<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    gy: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> (Array4<T>, Array4<T>, Array1<T>) {
    let (n, cin, h, wi) = x.dim();
    let (_, cout, kh, kw) = w.dim();
    let w2 = w.to_shape((cin, cout * kh * kw)).unwrap().to_owned();

    let mut gx = Array4::<T>::zeros(x.raw_dim());
    let parts: Vec<Array2<T>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let xn = x.index_axis(Axis(0), ni);
            let gyn = gy.index_axis(Axis(0), ni);
            let x2 = xn.to_shape((cin, h * wi)).unwrap().to_owned();
            let gcols = im2col_one(&gyn, kh, kw, stride, pad); // (cout*kh*kw, h*wi)
            x2.dot(&gcols.t()) // (cin, cout*kh*kw)
        })
        .collect();
    Zip::from(gx.outer_iter_mut())
        .and(gy.outer_iter())
        .par_for_each(|mut gxn, gyn| {
            let gcols = im2col_one(&gyn, kh, kw, stride, pad);
            let gx2 = w2.dot(&gcols); // (cin, h*wi)
            let img = gx2.into_shape_with_order((cin, h, wi)).unwrap();
            gxn.assign(&img);
        });

    let mut gw2 = Array2::<T>::zeros((cin, cout * kh * kw));
    for p in parts {
        gw2 += &p;
    }
    let gw = gw2.into_shape_with_order((cin, cout, kh, kw)).unwrap();
    let mut gb = Array1::<T>::zeros(cout);
    for ni in 0..n {
        for co in 0..cout {
            gb[co] = gb[co] + gy.index_axis(Axis(0), ni).index_axis(Axis(0), co).sum();
        }
    }
    (gx, gw, gb)
}

pub(crate) fn softmax_rows<T: Scalar>(x: &ArrayView2<T>) -> Array2<T> {
    let mut y = Array2::<T>::zeros(x.raw_dim());
    for (row, mut out) in x.outer_iter().zip(y.outer_iter_mut()) {
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (&v, o) in row.iter().zip(out.iter_mut()) {
            *o = (v - m).exp();
            sum = sum + *o;
        }
        out.mapv_inplace(|v| v / sum);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64));
        let w = g.input(Array4::from_elem((1, 1, 1, 1), 1.0));
        let b = g.input(Array1::zeros(1));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn linear_identity_matrix_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64));
        let w = g.input(Array2::eye(3));
        let b = g.input(Array1::zeros(3));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array2::zeros((1, 6)));
        let y = g.softmax(x).unwrap();
        let total: f64 = g.value(y).iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        for &v in g.value(y).iter() {
            assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array1::zeros(1));
        let y = g.tanh(x).unwrap();
        let loss = g.reshape(y, &[]).unwrap();
        g.backward(loss).unwrap();
        assert_abs_diff_eq!(g.grad(x)[[0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shared_parameter_accumulates_both_branch_gradients() {
        // loss = mean_sq_diff(x, 0) + mean_sq_diff(x, 0) => d/dx = 4x/len
        let mut g = Graph::<f64>::new();
        let x = g.input(Array1::from_vec(vec![3.0]));
        let zero = g.input(Array1::zeros(1));
        let a = g.mean_sq_diff(x, zero).unwrap();
        let b = g.mean_sq_diff(x, zero).unwrap();
        let loss = g.add(a, b).unwrap();
        g.backward(loss).unwrap();
        assert_abs_diff_eq!(g.grad(x)[[0]], 12.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_on_leaf_is_a_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array1::zeros(1));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn conv_shape_mismatch_is_reported() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array4::<f64>::zeros((1, 2, 4, 4)));
        let w = g.input(Array4::<f64>::zeros((3, 1, 3, 3)));
        let b = g.input(Array1::<f64>::zeros(3));
        assert!(matches!(g.conv2d(x, w, b, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_transpose_inverts_conv_output_shape() {
        for (n, k, s, p) in [(8usize, 4usize, 2usize, 1usize), (16, 4, 2, 1), (7, 3, 2, 1)] {
            let down = conv_out_size(n, k, s, p);
            // round-trip on matching hyperparameters
            assert_eq!(conv_transpose_out_size(down, k, s, p), (down - 1) * s + k - 2 * p);
            if n % 2 == 0 && k == 4 && s == 2 && p == 1 {
                assert_eq!(conv_transpose_out_size(down, k, s, p), n);
            }
        }
    }
}
