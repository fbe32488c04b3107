//! Define-by-run tape with differentiable backward rules.
//!
//! Each backward rule is written in terms of the same primitives the forward
//! pass uses, so the gradient expressions recorded under `create_graph` are
//! ordinary nodes and can be differentiated again.

use std::sync::atomic::{AtomicU64, Ordering};

use super::conv;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    id: usize,
    requires_grad: bool,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddScalar,
    MulScalar(f64),
    Exp,
    Log,
    Sqrt,
    Relu,
    Sigmoid,
    Clamp { lo: f64, hi: f64 },
    Sum,
    BroadcastScalar,
    Reshape,
    Dot,
    L2Norm,
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize },
    ConvWeightGrad { stride: usize, pad: usize },
    BroadcastChannels,
    SumChannels,
    SliceChannels { start: usize },
    PadChannels { start: usize },
}

struct Node<T> {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Result of [`Graph::grad`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// One gradient per requested variable, same order.
    pub grads: Vec<Var>,
    /// `true` where the variable does not influence the output; its gradient is zero.
    pub unreachable: Vec<bool>,
}

impl Gradients {
    pub fn any_unreachable(&self) -> bool {
        self.unreachable.iter().any(|&u| u)
    }
}

/// Append-only computation graph. Single-threaded by construction.
pub struct Graph<T: Element = f64> {
    id: u64,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mask<T: Element>(t: &Tensor<T>, keep: impl Fn(T) -> bool) -> Tensor<T> {
    t.map(|x| if keep(x) { T::one() } else { T::zero() })
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn var_of(&self, id: usize) -> Var {
        Var {
            graph: self.id,
            id,
            requires_grad: self.nodes[id].requires_grad,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        self.var_of(self.nodes.len() - 1)
    }

    /// A differentiable leaf (model parameter, input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        self.check(v)?;
        let t = self.nodes[v.id].value.clone();
        Ok(self.constant(t))
    }

    /// Value held by `v`. Panics if `v` is foreign to this graph.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert!(v.graph == self.id, "variable was issued by a different graph");
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, inputs: &[Var], value: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| v.requires_grad);
        let (op, inputs) = if requires_grad {
            (op, inputs.iter().map(|v| v.id).collect())
        } else {
            (Op::Leaf, Vec::new())
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        self.var_of(self.nodes.len() - 1)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.nodes[a.id]
            .value
            .zip_map(&self.nodes[b.id].value, name, f)?;
        Ok(self.push(op, &[a, b], value))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.id].value.map(f);
        Ok(self.push(op, &[a], value))
    }

    fn ensure_finite(op: &'static str, value: &Tensor<T>) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                op,
                reason: "result is not finite".into(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(b)?;
        if self.nodes[b.id].value.data().iter().any(|x| x.is_zero()) {
            return Err(Error::Domain {
                op: "div",
                reason: "division by zero".into(),
            });
        }
        self.binary(a, b, Op::Div, "div", |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg, |x| -x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        self.unary(a, Op::AddScalar, |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ct = T::of(c);
        self.unary(a, Op::MulScalar(c), |x| x * ct)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.id].value.map(|x| x.exp());
        Self::ensure_finite("exp", &value)?;
        Ok(self.push(Op::Exp, &[a], value))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if let Some(bad) = self.nodes[a.id]
            .value
            .data()
            .iter()
            .find(|x| !(**x > T::zero()) || !x.is_finite())
        {
            return Err(Error::Domain {
                op: "log",
                reason: format!("argument {bad} outside (0, inf)"),
            });
        }
        self.unary(a, Op::Log, |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.nodes[a.id].value.data().iter().any(|x| *x < T::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                reason: "negative argument".into(),
            });
        }
        self.unary(a, Op::Sqrt, |x| x.sqrt())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| if x > T::zero() || x.is_nan() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid, |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    /// Elementwise clamp; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Invalid(format!("clamp bounds {lo} > {hi}")));
        }
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(a, Op::Clamp { lo, hi }, |x| x.max(l).min(h))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.nodes[a.id].value.sum();
        Ok(self.push(Op::Sum, &[a], Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.mul_scalar(s, 1.0 / n)
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let v = &self.nodes[a.id].value;
        if !v.is_scalar() {
            return Err(Error::NotScalar {
                op: "broadcast_scalar",
                shape: v.shape().to_vec(),
            });
        }
        let value = Tensor::full(shape, v.item())?;
        Ok(self.push(Op::BroadcastScalar, &[a], value))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.id].value.reshape(shape)?;
        Ok(self.push(Op::Reshape, &[a], value))
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[n])
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape("dot", va.shape(), vb.shape()));
        }
        let d = va.dot(vb)?;
        Ok(self.push(Op::Dot, &[a, b], Tensor::scalar(d)))
    }

    /// Euclidean norm. The gradient at the zero vector is taken as zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let n = self.nodes[a.id].value.l2_norm();
        Ok(self.push(Op::L2Norm, &[a], Tensor::scalar(n)))
    }

    fn add_bias(&mut self, y: Var, bias: Option<Var>) -> Result<Var> {
        match bias {
            None => Ok(y),
            Some(b) => {
                let shape = self.shape(y).to_vec();
                let bb = self.broadcast_channels(b, &shape)?;
                self.add(y, bb)
            }
        }
    }

    /// Cross-correlation of `x [N,C,H,W]` with `weight [O,C,K,K]` plus optional bias `[O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.check(x)?;
        self.check(weight)?;
        let value = conv::conv2d_forward(
            &self.nodes[x.id].value,
            &self.nodes[weight.id].value,
            stride,
            pad,
        )?;
        let y = self.push(Op::Conv2d { stride, pad }, &[x, weight], value);
        self.add_bias(y, bias)
    }

    /// Transposed convolution of `x [N,I,H,W]` with `weight [I,O,K,K]`, the
    /// adjoint of [`conv2d`](Self::conv2d) under the same weight, stride and pad.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.check(x)?;
        self.check(weight)?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d_transpose", &xs, &ws));
        }
        let h = conv::conv_transpose_output_len(xs[2], ws[2], stride, pad)?;
        let w = conv::conv_transpose_output_len(xs[3], ws[3], stride, pad)?;
        let y = self.conv_transpose_to(x, weight, stride, pad, (h, w))?;
        self.add_bias(y, bias)
    }

    fn conv_transpose_to(
        &mut self,
        x: Var,
        weight: Var,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let value = conv::conv2d_transpose_forward(
            &self.nodes[x.id].value,
            &self.nodes[weight.id].value,
            stride,
            pad,
            out_hw,
        )?;
        Ok(self.push(Op::ConvTranspose2d { stride, pad }, &[x, weight], value))
    }

    /// Weight-gradient kernel of conv2d as a differentiable op.
    pub fn conv2d_weight_grad(
        &mut self,
        x: Var,
        grad_out: Var,
        stride: usize,
        pad: usize,
        kernel: (usize, usize),
    ) -> Result<Var> {
        self.check(x)?;
        self.check(grad_out)?;
        let value = conv::conv2d_weight_grad(
            &self.nodes[x.id].value,
            &self.nodes[grad_out.id].value,
            stride,
            pad,
            kernel,
        )?;
        Ok(self.push(Op::ConvWeightGrad { stride, pad }, &[x, grad_out], value))
    }

    /// Repeats `b [C]` over the channel axis of an NCHW `shape`.
    pub fn broadcast_channels(&mut self, b: Var, shape: &[usize]) -> Result<Var> {
        self.check(b)?;
        let bv = &self.nodes[b.id].value;
        if shape.len() != 4 || bv.shape() != [shape[1]] {
            return Err(Error::shape("broadcast_channels", bv.shape(), shape));
        }
        let plane = shape[2] * shape[3];
        let mut data = Vec::with_capacity(shape.iter().product());
        for _ in 0..shape[0] {
            for &c in bv.data() {
                data.extend(std::iter::repeat_n(c, plane));
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::BroadcastChannels, &[b], value))
    }

    /// Sums an NCHW tensor over N, H and W, giving `[C]`.
    pub fn sum_channels(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.id].value;
        let [n, c, h, w] = match *xv.shape() {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::InvalidShape {
                    shape: xv.shape().to_vec(),
                    reason: "sum_channels expects NCHW".into(),
                })
            }
        };
        let plane = h * w;
        let mut out = vec![T::zero(); c];
        for ni in 0..n {
            for (ci, o) in out.iter_mut().enumerate() {
                let s = xv.data()[(ni * c + ci) * plane..][..plane]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v);
                *o = *o + s;
            }
        }
        let value = Tensor::from_parts(vec![c], out);
        Ok(self.push(Op::SumChannels, &[x], value))
    }

    /// Channels `start..start+len` of an NCHW tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.id].value;
        let s = xv.shape().to_vec();
        if s.len() != 4 || len == 0 || start + len > s[1] {
            return Err(Error::Invalid(format!(
                "slice_channels {start}..{} of shape {s:?}",
                start + len
            )));
        }
        let plane = s[2] * s[3];
        let mut data = Vec::with_capacity(s[0] * len * plane);
        for n in 0..s[0] {
            data.extend_from_slice(&xv.data()[(n * s[1] + start) * plane..][..len * plane]);
        }
        let value = Tensor::from_parts(vec![s[0], len, s[2], s[3]], data);
        Ok(self.push(Op::SliceChannels { start }, &[x], value))
    }

    /// Embeds `x` as channels `start..` of a zero NCHW tensor with `total` channels.
    pub fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.id].value;
        let s = xv.shape().to_vec();
        if s.len() != 4 || start + s[1] > total {
            return Err(Error::Invalid(format!(
                "pad_channels {s:?} at {start} into {total} channels"
            )));
        }
        let plane = s[2] * s[3];
        let mut data = vec![T::zero(); s[0] * total * plane];
        for n in 0..s[0] {
            data[(n * total + start) * plane..][..s[1] * plane]
                .copy_from_slice(&xv.data()[n * s[1] * plane..][..s[1] * plane]);
        }
        let value = Tensor::from_parts(vec![s[0], total, s[2], s[3]], data);
        Ok(self.push(Op::PadChannels { start }, &[x], value))
    }

    /// Vector-Jacobian product of node `id` for the inputs flagged in `needs`.
    fn vjp(&mut self, id: usize, g: Var, needs: &[bool]) -> Result<Vec<Option<Var>>> {
        let op = self.nodes[id].op.clone();
        let ins: Vec<Var> = self.nodes[id]
            .inputs
            .iter()
            .map(|&i| self.var_of(i))
            .collect();
        let out = self.var_of(id);
        let in_shape = |s: &Self, k: usize| s.nodes[ins[k].id].value.shape().to_vec();
        let mut res: Vec<Option<Var>> = vec![None; ins.len()];
        match op {
            Op::Leaf => {}
            Op::Add => {
                res[0] = Some(g);
                res[1] = Some(g);
            }
            Op::Sub => {
                res[0] = Some(g);
                if needs[1] {
                    res[1] = Some(self.neg(g)?);
                }
            }
            Op::Mul => {
                if needs[0] {
                    res[0] = Some(self.mul(g, ins[1])?);
                }
                if needs[1] {
                    res[1] = Some(self.mul(g, ins[0])?);
                }
            }
            Op::Div => {
                if needs[0] {
                    res[0] = Some(self.div(g, ins[1])?);
                }
                if needs[1] {
                    // d(a/b)/db = -(a/b)/b
                    let t = self.mul(g, out)?;
                    let t = self.div(t, ins[1])?;
                    res[1] = Some(self.neg(t)?);
                }
            }
            Op::Neg => res[0] = Some(self.neg(g)?),
            Op::AddScalar => res[0] = Some(g),
            Op::MulScalar(c) => res[0] = Some(self.mul_scalar(g, c)?),
            Op::Exp => res[0] = Some(self.mul(g, out)?),
            Op::Log => res[0] = Some(self.div(g, ins[0])?),
            Op::Sqrt => {
                let t = self.mul_scalar(g, 0.5)?;
                res[0] = Some(self.div(t, out)?);
            }
            Op::Relu => {
                let m = self.constant(mask(&self.nodes[ins[0].id].value, |x| x > T::zero()));
                res[0] = Some(self.mul(g, m)?);
            }
            Op::Sigmoid => {
                let one_minus = self.neg(out)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(out, one_minus)?;
                res[0] = Some(self.mul(g, d)?);
            }
            Op::Clamp { lo, hi } => {
                let (l, h) = (T::of(lo), T::of(hi));
                let m = self.constant(mask(&self.nodes[ins[0].id].value, |x| x >= l && x <= h));
                res[0] = Some(self.mul(g, m)?);
            }
            Op::Sum => {
                let s = in_shape(self, 0);
                res[0] = Some(self.broadcast_scalar(g, &s)?);
            }
            Op::BroadcastScalar => {
                let s = self.sum(g)?;
                let target = in_shape(self, 0);
                res[0] = Some(self.reshape(s, &target)?);
            }
            Op::Reshape => {
                let s = in_shape(self, 0);
                res[0] = Some(self.reshape(g, &s)?);
            }
            Op::Dot => {
                let s = in_shape(self, 0);
                let gb = self.broadcast_scalar(g, &s)?;
                if needs[0] {
                    res[0] = Some(self.mul(gb, ins[1])?);
                }
                if needs[1] {
                    res[1] = Some(self.mul(gb, ins[0])?);
                }
            }
            Op::L2Norm => {
                if !self.nodes[id].value.item().is_zero() {
                    let s = in_shape(self, 0);
                    let r = self.div(g, out)?;
                    let r = self.broadcast_scalar(r, &s)?;
                    res[0] = Some(self.mul(r, ins[0])?);
                }
            }
            Op::Conv2d { stride, pad } => {
                let xs = in_shape(self, 0);
                let ws = in_shape(self, 1);
                if needs[0] {
                    res[0] = Some(self.conv_transpose_to(g, ins[1], stride, pad, (xs[2], xs[3]))?);
                }
                if needs[1] {
                    res[1] = Some(self.conv2d_weight_grad(ins[0], g, stride, pad, (ws[2], ws[3]))?);
                }
            }
            Op::ConvTranspose2d { stride, pad } => {
                let ws = in_shape(self, 1);
                if needs[0] {
                    res[0] = Some(self.conv2d(g, ins[1], None, stride, pad)?);
                }
                if needs[1] {
                    res[1] = Some(self.conv2d_weight_grad(g, ins[0], stride, pad, (ws[2], ws[3]))?);
                }
            }
            Op::ConvWeightGrad { stride, pad } => {
                let xs = in_shape(self, 0);
                if needs[0] {
                    res[0] = Some(self.conv_transpose_to(ins[1], g, stride, pad, (xs[2], xs[3]))?);
                }
                if needs[1] {
                    res[1] = Some(self.conv2d(ins[0], g, None, stride, pad)?);
                }
            }
            Op::BroadcastChannels => res[0] = Some(self.sum_channels(g)?),
            Op::SumChannels => {
                let s = in_shape(self, 0);
                res[0] = Some(self.broadcast_channels(g, &s)?);
            }
            Op::SliceChannels { start } => {
                let total = in_shape(self, 0)[1];
                res[0] = Some(self.pad_channels(g, start, total)?);
            }
            Op::PadChannels { start } => {
                let len = in_shape(self, 0)[1];
                res[0] = Some(self.slice_channels(g, start, len)?);
            }
        }
        for (r, &need) in res.iter_mut().zip(needs) {
            if !need {
                *r = None;
            }
        }
        Ok(res)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are differentiable nodes;
    /// otherwise they are constants. Parameter values are never touched.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Gradients> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let out_shape = self.nodes[output.id].value.shape().to_vec();
        if self.nodes[output.id].value.numel() != 1 {
            return Err(Error::NotScalar {
                op: "grad",
                shape: out_shape,
            });
        }

        // Nodes on some path from a `wrt` variable to `output`.
        let end = output.id + 1;
        let mut depends = vec![false; end];
        for &w in wrt {
            if w.id < end {
                depends[w.id] = true;
            }
        }
        for i in 0..end {
            let node = &self.nodes[i];
            if !depends[i] && node.requires_grad && node.inputs.iter().any(|&j| depends[j]) {
                depends[i] = true;
            }
        }

        let saved_mode = self.grad_enabled;
        self.grad_enabled = create_graph;
        let result = self.backprop(output, end, &depends);
        self.grad_enabled = saved_mode;
        let acc = result?;

        let mut grads = Vec::with_capacity(wrt.len());
        let mut unreachable = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match acc.get(w.id).copied().flatten() {
                Some(g) => {
                    grads.push(g);
                    unreachable.push(false);
                }
                None => {
                    let z = Tensor::zeros(self.nodes[w.id].value.shape())?;
                    grads.push(self.constant(z));
                    unreachable.push(true);
                }
            }
        }
        if unreachable.iter().any(|&u| u) {
            log::warn!("grad: some variables do not influence the output; returning zeros");
        }
        Ok(Gradients { grads, unreachable })
    }

    fn backprop(&mut self, output: Var, end: usize, depends: &[bool]) -> Result<Vec<Option<Var>>> {
        let mut acc: Vec<Option<Var>> = vec![None; end];
        if !depends[output.id] {
            return Ok(acc);
        }
        let seed = self.constant(Tensor::full(self.nodes[output.id].value.shape(), T::one())?);
        acc[output.id] = Some(seed);
        for id in (0..end).rev() {
            let Some(g) = acc[id] else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let needs: Vec<bool> = self.nodes[id].inputs.iter().map(|&j| depends[j]).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let inputs = self.nodes[id].inputs.clone();
            let contribs = self.vjp(id, g, &needs)?;
            for (j, c) in inputs.into_iter().zip(contribs) {
                if let Some(c) = c {
                    acc[j] = Some(match acc[j] {
                        None => c,
                        Some(prev) => self.add(prev, c)?,
                    });
                }
            }
        }
        Ok(acc)
    }
}
