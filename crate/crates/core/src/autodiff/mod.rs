//! Static reverse-mode differentiation over a closed set of image ops.
//!
//! A [`Graph`] is built once, node by node; every node's inputs precede it,
//! so insertion order is a topological order. Values are `(C, H, W)` tensors
//! except for scalar reductions, which have shape `[1]`.

mod check;
mod conv;

pub use check::{grad_check, GradCheck, KINK_MARGIN};

use crate::error::{Error, Result};
use crate::fourier_ops::{fourier_sr_backward, fourier_sr_forward_traced, ForwardTrace, FourierSRParams};
use crate::tensor::{Scalar, Tensor};

/// Leaky-rectifier slope on the negative side.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Parameter leaves of one Fourier block, in archive entry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierLeaves {
    pub omega_m: NodeId,
    pub omega_u_re: NodeId,
    pub omega_u_im: NodeId,
    pub omega_l_re: NodeId,
    pub omega_l_im: NodeId,
    pub fuse_a: NodeId,
    pub fuse_b: NodeId,
}

impl FourierLeaves {
    pub fn ids(&self) -> [NodeId; 7] {
        [
            self.omega_m,
            self.omega_u_re,
            self.omega_u_im,
            self.omega_l_re,
            self.omega_l_im,
            self.fuse_a,
            self.fuse_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Fed per evaluation; only the channel count is fixed.
    Input { channels: usize },
    /// Trainable leaf.
    Param,
    /// Non-trainable leaf with a fixed value.
    Constant,
    Conv3x3 { x: NodeId, weight: NodeId, bias: NodeId },
    PixelShuffle { x: NodeId, scale: usize },
    LeakyRelu { x: NodeId },
    FourierSr {
        x: NodeId,
        leaves: FourierLeaves,
        channels: usize,
        rho: usize,
        residual: bool,
        real_filter_mode: bool,
    },
    /// `y[c] = scale[c] · x[c] + shift[c]`.
    Affine { x: NodeId, scale: NodeId, shift: NodeId },
    Add { a: NodeId, b: NodeId },
    /// One element of `x` as a scalar.
    Pick { x: NodeId, index: usize },
    Mean { x: NodeId },
    L1Loss { pred: NodeId, target: NodeId },
    MseLoss { pred: NodeId, target: NodeId },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Param | Op::Constant => vec![],
            Op::Conv3x3 { x, weight, bias } => vec![x, weight, bias],
            Op::PixelShuffle { x, .. } | Op::LeakyRelu { x } | Op::Pick { x, .. } | Op::Mean { x } => vec![x],
            Op::FourierSr { x, leaves, .. } => {
                let mut v = vec![x];
                v.extend(leaves.ids());
                v
            }
            Op::Affine { x, scale, shift } => vec![x, scale, shift],
            Op::Add { a, b } => vec![a, b],
            Op::L1Loss { pred, target } | Op::MseLoss { pred, target } => vec![pred, target],
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input { .. } | Op::Param | Op::Constant)
    }
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    name: String,
    op: Op,
    value: Option<Tensor<T>>,
    trace: Option<ForwardTrace<T>>,
}

/// Static computation graph.
#[derive(Debug, Clone)]
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node reachable backwards from the loss.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `id`, or `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn contract(msg: String) -> Error {
    Error::Contract(msg)
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

    fn push(&mut self, name: impl Into<String>, op: Op, value: Option<Tensor<T>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        debug_assert!(op.inputs().iter().all(|i| i.0 < id.0));
        self.nodes.push(Node {
            name: name.into(),
            op,
            value,
            trace: None,
        });
        id
    }

    pub fn input(&mut self, name: &str, channels: usize) -> NodeId {
        self.push(name, Op::Input { channels }, None)
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        self.push(name, Op::Param, Some(value))
    }

    pub fn constant(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        self.push(name, Op::Constant, Some(value))
    }

    pub fn conv3x3(&mut self, name: &str, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.push(name, Op::Conv3x3 { x, weight, bias }, None)
    }

    pub fn pixel_shuffle(&mut self, name: &str, x: NodeId, scale: usize) -> NodeId {
        self.push(name, Op::PixelShuffle { x, scale }, None)
    }

    pub fn leaky_relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::LeakyRelu { x }, None)
    }

    /// Adds a Fourier block whose parameters become seven leaves named
    /// `<name>.<entry>`. In real-filter mode the imaginary filter parts are
    /// constants; otherwise all seven are trainable.
    pub fn fourier_sr(&mut self, name: &str, x: NodeId, params: &FourierSRParams<T>) -> NodeId {
        let real = params.real_filter_mode();
        let ids: Vec<NodeId> = params
            .entries()
            .iter()
            .map(|(entry, t)| {
                let leaf = format!("{name}.{entry}");
                if real && entry.ends_with("_im") {
                    self.constant(&leaf, (*t).clone())
                } else {
                    self.param(&leaf, (*t).clone())
                }
            })
            .collect();
        let mut ids = ids.into_iter();
        let leaves = FourierLeaves {
            omega_m: ids.next().unwrap(),
            omega_u_re: ids.next().unwrap(),
            omega_u_im: ids.next().unwrap(),
            omega_l_re: ids.next().unwrap(),
            omega_l_im: ids.next().unwrap(),
            fuse_a: ids.next().unwrap(),
            fuse_b: ids.next().unwrap(),
        };
        let op = Op::FourierSr {
            x,
            leaves,
            channels: params.channels(),
            rho: params.rho(),
            residual: params.residual,
            real_filter_mode: real,
        };
        self.push(name, op, None)
    }

    pub fn affine(&mut self, name: &str, x: NodeId, scale: NodeId, shift: NodeId) -> NodeId {
        self.push(name, Op::Affine { x, scale, shift }, None)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.push(name, Op::Add { a, b }, None)
    }

    pub fn pick(&mut self, name: &str, x: NodeId, index: usize) -> NodeId {
        self.push(name, Op::Pick { x, index }, None)
    }

    pub fn mean(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::Mean { x }, None)
    }

    pub fn l1_loss(&mut self, name: &str, pred: NodeId, target: NodeId) -> NodeId {
        self.push(name, Op::L1Loss { pred, target }, None)
    }

    pub fn mse_loss(&mut self, name: &str, pred: NodeId, target: NodeId) -> NodeId {
        self.push(name, Op::MseLoss { pred, target }, None)
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Current value of a node (leaf values, or results of the last forward).
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].value.as_ref()
    }

    /// Trainable leaves in insertion order.
    pub fn params(&self) -> Vec<NodeId> {
        self.ids_where(|op| matches!(op, Op::Param))
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        self.ids_where(|op| matches!(op, Op::Input { .. }))
    }

    fn ids_where(&self, f: impl Fn(&Op) -> bool) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| f(&n.op))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .map(|&id| self.value(id).map_or(0, Tensor::numel))
            .sum()
    }

    /// Feeds an input leaf. Its shape must be `(channels, H, W)`.
    pub fn set_input(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        match node.op {
            Op::Input { channels } => {
                if value.rank() != 3 || value.shape()[0] != channels {
                    return Err(Error::dim(
                        format!("input node `{}`", node.name),
                        value.shape(),
                        &[channels],
                    ));
                }
                node.value = Some(value);
                Ok(())
            }
            _ => Err(contract(format!("node `{}` is not an input", node.name))),
        }
    }

    /// Replaces the value of a `Param` or `Constant` leaf (same shape).
    pub fn set_value(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param | Op::Constant, Some(old)) => {
                if old.shape() != value.shape() {
                    return Err(Error::dim(format!("leaf `{}`", node.name), value.shape(), old.shape()));
                }
                node.value = Some(value);
                Ok(())
            }
            (Op::Input { .. }, _) => self.set_input(id, value),
            _ => Err(contract(format!("node `{}` is not a leaf", node.name))),
        }
    }

    /// Feeds `inputs` then evaluates the whole graph.
    pub fn run(&mut self, inputs: &[(NodeId, Tensor<T>)]) -> Result<()> {
        for (id, t) in inputs {
            self.set_input(*id, t.clone())?;
        }
        self.forward()
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0].value.as_ref().expect("evaluated before use")
    }

    fn dim_err(&self, at: usize, lhs: &[usize], rhs: &[usize]) -> Error {
        Error::dim(format!("node `{}`", self.nodes[at].name), lhs, rhs)
    }

    fn fourier_params(&self, id: NodeId) -> Result<FourierSRParams<T>> {
        match self.nodes[id.0].op {
            Op::FourierSr {
                leaves,
                channels,
                rho,
                residual,
                real_filter_mode,
                ..
            } => {
                let tensors = leaves.ids().iter().map(|&l| self.val(l).clone()).collect();
                let p = FourierSRParams::from_entries(channels, rho, tensors, residual)?;
                Ok(if real_filter_mode { p.into_real_filter_mode() } else { p })
            }
            _ => Err(contract(format!("node `{}` is not a Fourier block", self.nodes[id.0].name))),
        }
    }

    /// Evaluates every node in order, caching values for [`Graph::backward`].
    pub fn forward(&mut self) -> Result<()> {
        self.evaluate(self.nodes.len(), |_| true)
    }

    /// Evaluates only `target` and its ancestors; other nodes keep stale values.
    pub fn forward_to(&mut self, target: NodeId) -> Result<()> {
        let mut needed = vec![false; target.0 + 1];
        needed[target.0] = true;
        for k in (0..=target.0).rev() {
            if needed[k] {
                for i in self.nodes[k].op.inputs() {
                    needed[i.0] = true;
                }
            }
        }
        self.evaluate(target.0 + 1, |k| needed[k])
    }

    fn evaluate(&mut self, end: usize, needed: impl Fn(usize) -> bool) -> Result<()> {
        for k in (0..end).filter(|&k| needed(k)) {
            let op = self.nodes[k].op.clone();
            if op.is_leaf() {
                if self.nodes[k].value.is_none() {
                    return Err(contract(format!("input `{}` was not set", self.nodes[k].name)));
                }
                continue;
            }
            let mut trace = None;
            let value = match op {
                Op::Conv3x3 { x, weight, bias } => {
                    conv3x3_forward(self.val(x), self.val(weight), self.val(bias)).map_err(|e| match e {
                        Error::Dimension { lhs, rhs, .. } => self.dim_err(k, &lhs, &rhs),
                        other => other,
                    })?
                }
                Op::PixelShuffle { x, scale } => {
                    let xv = self.val(x);
                    let xs = xv.shape();
                    if xs.len() != 3 || scale == 0 || !xs[0].is_multiple_of(scale * scale) {
                        return Err(self.dim_err(k, xs, &[scale * scale]));
                    }
                    pixel_shuffle(xv, scale)
                }
                Op::LeakyRelu { x } => {
                    let slope = T::of(LEAKY_SLOPE);
                    self.val(x).map(|v| if v > T::zero() { v } else { v * slope })
                }
                Op::FourierSr { x, .. } => {
                    let p = self.fourier_params(NodeId(k))?;
                    let (y, t) = fourier_sr_forward_traced(self.val(x), &p).map_err(|e| match e {
                        Error::Dimension { lhs, rhs, .. } => self.dim_err(k, &lhs, &rhs),
                        other => other,
                    })?;
                    trace = Some(t);
                    y
                }
                Op::Affine { x, scale, shift } => {
                    let (xv, sv, tv) = (self.val(x), self.val(scale), self.val(shift));
                    let c = xv.shape()[0];
                    if sv.shape() != [c] || tv.shape() != [c] {
                        return Err(self.dim_err(k, sv.shape(), &[c]));
                    }
                    let plane = xv.numel() / c;
                    Tensor::from_fn(xv.shape(), |f| {
                        let ch = f / plane;
                        sv.data()[ch] * xv.data()[f] + tv.data()[ch]
                    })
                }
                Op::Add { a, b } => {
                    let (av, bv) = (self.val(a), self.val(b));
                    av.add(bv).map_err(|_| self.dim_err(k, av.shape(), bv.shape()))?
                }
                Op::Pick { x, index } => {
                    let xv = self.val(x);
                    if index >= xv.numel() {
                        return Err(self.dim_err(k, xv.shape(), &[index]));
                    }
                    Tensor::scalar(xv.data()[index])
                }
                Op::Mean { x } => {
                    let xv = self.val(x);
                    Tensor::scalar(xv.sum() / T::of(xv.numel() as f64))
                }
                Op::L1Loss { pred, target } | Op::MseLoss { pred, target } => {
                    let (pv, tv) = (self.val(pred), self.val(target));
                    if pv.shape() != tv.shape() {
                        return Err(self.dim_err(k, pv.shape(), tv.shape()));
                    }
                    let l1 = matches!(op, Op::L1Loss { .. });
                    let total = pv.data().iter().zip(tv.data()).fold(T::zero(), |acc, (&p, &t)| {
                        let d = p - t;
                        acc + if l1 { d.abs() } else { d * d }
                    });
                    Tensor::scalar(total / T::of(pv.numel() as f64))
                }
                Op::Input { .. } | Op::Param | Op::Constant => unreachable!(),
            };
            self.nodes[k].value = Some(value);
            self.nodes[k].trace = trace;
        }
        Ok(())
    }

    /// Smallest `|pre-activation|` over all leaky-rectifier inputs of the last
    /// forward pass (`+∞` if there are none).
    pub fn min_abs_preactivation(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x } => Some(self.val(x)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs().as_f64()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse pass from a scalar `loss` node evaluated by the last forward.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.nodes[loss.0]
            .value
            .as_ref()
            .ok_or_else(|| contract(format!("loss `{}` has not been evaluated", self.nodes[loss.0].name)))?;
        if lv.numel() != 1 {
            return Err(contract(format!(
                "loss `{}` must be scalar, has shape {:?}",
                self.nodes[loss.0].name,
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            *slot = Some(match slot.take() {
                Some(prev) => prev.add(&g).expect("adjoint shape"),
                None => g,
            });
        }

        for k in (0..=loss.0).rev() {
            let Some(dy) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            match node.op {
                Op::Input { .. } | Op::Param | Op::Constant => {
                    grads[k] = Some(dy);
                    continue;
                }
                Op::Conv3x3 { x, weight, bias } => {
                    let (xv, wv) = (self.val(x), self.val(weight));
                    let xs = xv.shape();
                    let s = conv::ConvShape {
                        c_in: xs[0],
                        c_out: wv.shape()[0],
                        h: xs[1],
                        w: xs[2],
                    };
                    let (dx, dw, db) = conv::backward(&s, xv.data(), wv.data(), dy.data());
                    accumulate(&mut grads[x.0], Tensor::new(xs, dx)?);
                    accumulate(&mut grads[weight.0], Tensor::new(wv.shape(), dw)?);
                    accumulate(&mut grads[bias.0], Tensor::new(&[s.c_out], db)?);
                }
                Op::PixelShuffle { x, scale } => {
                    accumulate(&mut grads[x.0], pixel_unshuffle(&dy, scale));
                }
                Op::LeakyRelu { x } => {
                    let slope = T::of(LEAKY_SLOPE);
                    let g = self
                        .val(x)
                        .zip_map(&dy, |v, g| if v > T::zero() { g } else { g * slope })?;
                    accumulate(&mut grads[x.0], g);
                }
                Op::FourierSr { x, leaves, .. } => {
                    let p = self.fourier_params(NodeId(k))?;
                    let trace = node.trace.as_ref().expect("forward trace");
                    let g = fourier_sr_backward(self.val(x), &p, trace, &dy)?;
                    let (u_re, u_im) = g.omega_u.into_parts();
                    let (l_re, l_im) = g.omega_l.into_parts();
                    accumulate(&mut grads[x.0], g.input);
                    for (id, t) in leaves.ids().into_iter().zip([g.omega_m, u_re, u_im, l_re, l_im, g.fuse_a, g.fuse_b]) {
                        accumulate(&mut grads[id.0], t);
                    }
                }
                Op::Affine { x, scale, shift } => {
                    let (xv, sv) = (self.val(x), self.val(scale));
                    let c = xv.shape()[0];
                    let plane = xv.numel() / c;
                    let mut d_scale = vec![T::zero(); c];
                    let mut d_shift = vec![T::zero(); c];
                    let dx = Tensor::from_fn(xv.shape(), |f| sv.data()[f / plane] * dy.data()[f]);
                    for f in 0..xv.numel() {
                        d_scale[f / plane] += dy.data()[f] * xv.data()[f];
                        d_shift[f / plane] += dy.data()[f];
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[scale.0], Tensor::new(&[c], d_scale)?);
                    accumulate(&mut grads[shift.0], Tensor::new(&[c], d_shift)?);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], dy.clone());
                    accumulate(&mut grads[b.0], dy);
                }
                Op::Pick { x, index } => {
                    let mut g = Tensor::zeros(self.val(x).shape());
                    g.data_mut()[index] = dy.data()[0];
                    accumulate(&mut grads[x.0], g);
                }
                Op::Mean { x } => {
                    let xv = self.val(x);
                    let g = dy.data()[0] / T::of(xv.numel() as f64);
                    accumulate(&mut grads[x.0], Tensor::full(xv.shape(), g));
                }
                Op::L1Loss { pred, target } | Op::MseLoss { pred, target } => {
                    let (pv, tv) = (self.val(pred), self.val(target));
                    let scale = dy.data()[0] / T::of(pv.numel() as f64);
                    let l1 = matches!(node.op, Op::L1Loss { .. });
                    let dp = pv.zip_map(tv, |p, t| {
                        let d = p - t;
                        if l1 {
                            if d > T::zero() {
                                scale
                            } else if d < T::zero() {
                                -scale
                            } else {
                                T::zero()
                            }
                        } else {
                            T::of(2.0) * d * scale
                        }
                    })?;
                    accumulate(&mut grads[target.0], dp.map(|v| -v));
                    accumulate(&mut grads[pred.0], dp);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Current parameters of a Fourier block node.
    pub fn fourier_block(&self, id: NodeId) -> Result<FourierSRParams<T>> {
        self.fourier_params(id)
    }
}

/// Circular 3×3 convolution of a `(C_in, H, W)` tensor with weights
/// `(C_out, C_in, 3, 3)` and bias `(C_out)`.
pub fn conv3x3_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::dim("conv3x3 input", xs, &[]));
    }
    let c_out = weight.shape()[0];
    if weight.shape() != [c_out, xs[0], 3, 3] || bias.shape() != [c_out] {
        return Err(Error::dim("conv3x3 weight", weight.shape(), &[c_out, xs[0], 3, 3]));
    }
    let s = conv::ConvShape {
        c_in: xs[0],
        c_out,
        h: xs[1],
        w: xs[2],
    };
    Tensor::new(&[c_out, xs[1], xs[2]], conv::forward(&s, x.data(), weight.data(), bias.data()))
}

/// `(C·s², H, W) → (C, sH, sW)` with `out[c, h·s + i, w·s + j] = in[c·s² + i·s + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, scale: usize) -> Tensor<T> {
    let (cs, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let c = cs / (scale * scale);
    let (oh, ow) = (h * scale, w * scale);
    let src = x.data();
    Tensor::from_fn(&[c, oh, ow], |f| {
        let ch = f / (oh * ow);
        let (r, col) = ((f / ow) % oh, f % ow);
        let (i, j) = (r % scale, col % scale);
        src[((ch * scale * scale + i * scale + j) * h + r / scale) * w + col / scale]
    })
}

/// Inverse of [`pixel_shuffle`] (also its adjoint, being a permutation).
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, scale: usize) -> Tensor<T> {
    let (c, oh, ow) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let (h, w) = (oh / scale, ow / scale);
    let src = y.data();
    Tensor::from_fn(&[c * scale * scale, h, w], |f| {
        let sub = f / (h * w);
        let (r, col) = ((f / w) % h, f % w);
        let ch = sub / (scale * scale);
        let (i, j) = ((sub % (scale * scale)) / scale, sub % scale);
        src[(ch * oh + r * scale + i) * ow + col * scale + j]
    })
}
