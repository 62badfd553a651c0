//! Tape of recorded operations and reverse-mode differentiation.
//!
//! Every backward rule is written in terms of recorded operations, so with
//! `create_graph = true` the gradients are themselves differentiable. This is
//! what the gradient penalty needs (gradient of a gradient norm).

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{gemm, numel, Tensor};

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    /// Elementwise product with a constant; backs relu, leaky relu and abs.
    MaskMul(usize, Rc<Tensor>),
    Sum(usize),
    Expand(usize),
    SumTrailing(usize),
    BroadcastTrailing(usize),
    ChannelSum(usize),
    ChannelBroadcast(usize),
    Reshape(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Conv {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvInputGrad {
        gy: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        gy: usize,
        stride: usize,
        pad: usize,
    },
    Gather(usize, Rc<[usize]>),
    ScatterAdd(usize, Rc<[usize]>),
    LogSoftmax(usize),
}

impl Op {
    fn inputs(&self) -> ([usize; 2], usize) {
        use Op::*;
        match *self {
            Leaf => ([0, 0], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Matmul(a, b) => ([a, b], 2),
            Conv { x, w, .. } => ([x, w], 2),
            ConvInputGrad { gy, w, .. } => ([gy, w], 2),
            ConvWeightGrad { x, gy, .. } => ([x, gy], 2),
            Scale(a, _)
            | AddScalar(a)
            | Powf(a, _)
            | Exp(a)
            | Ln(a)
            | Tanh(a)
            | MaskMul(a, _)
            | Sum(a)
            | Expand(a)
            | SumTrailing(a)
            | BroadcastTrailing(a)
            | ChannelSum(a)
            | ChannelBroadcast(a)
            | Reshape(a)
            | Transpose(a)
            | Gather(a, _)
            | ScatterAdd(a, _)
            | LogSoftmax(a) => ([a, 0], 1),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape. Build one per training step.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grad_mode: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Restores the previous recording mode on drop.
pub struct NoGradGuard<'g> {
    graph: &'g Graph,
    previous: bool,
}

impl Drop for NoGradGuard<'_> {
    fn drop(&mut self) {
        self.graph.grad_mode.set(self.previous);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_mode: Cell::new(true) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values recorded while the guard lives carry no gradient history.
    pub fn no_grad(&self) -> NoGradGuard<'_> {
        let previous = self.grad_mode.replace(false);
        NoGradGuard { graph: self, previous }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        self.push_rc(Rc::new(value), op)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let (ins, n) = op.inputs();
        let requires_grad = match op {
            Op::Leaf => false,
            _ => self.grad_mode.get() && ins[..n].iter().any(|&i| nodes[i].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value, op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A value that gradients never flow into.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.constant_rc(Rc::new(value))
    }

    pub fn constant_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.leaf_rc(Rc::new(value))
    }

    pub fn leaf_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Entries that `output` does not depend on come back as `None`. With
    /// `create_graph` the returned vars are differentiable again.
    pub fn grad_vars<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Vec<Option<Var<'g>>> {
        assert!(std::ptr::eq(output.graph, self), "output belongs to another graph");
        assert_eq!(output.value().len(), 1, "gradients need a scalar output");
        let end = output.id + 1;

        // Nodes that lie on some path from a `wrt` leaf.
        let mut reach = vec![false; end];
        {
            let nodes = self.nodes.borrow();
            for v in wrt {
                if v.id < end && nodes[v.id].requires_grad {
                    reach[v.id] = true;
                }
            }
            for i in 0..end {
                if reach[i] || !nodes[i].requires_grad {
                    continue;
                }
                let (ins, n) = nodes[i].op.inputs();
                reach[i] = ins[..n].iter().any(|&j| reach[j]);
            }
        }

        let _guard = (!create_graph).then(|| self.no_grad());
        let mut grads: Vec<Option<Var<'g>>> = vec![None; end];
        if reach[output.id] {
            grads[output.id] = Some(self.constant(Tensor::ones(output.value().shape())));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            for (input, contribution) in self.backward_rule(i, &op, g, &reach) {
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }
        wrt.iter().map(|v| if v.id < end { grads[v.id] } else { None }).collect()
    }

    /// Gradient values, with zeros for unreachable entries.
    pub fn grad<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Vec<Tensor> {
        self.grad_vars(output, wrt, false)
            .into_iter()
            .zip(wrt)
            .map(|(g, v)| match g {
                Some(g) => g.value().as_ref().clone(),
                None => Tensor::zeros(v.value().shape()),
            })
            .collect()
    }

    fn backward_rule<'g>(&'g self, id: usize, op: &Op, g: Var<'g>, reach: &[bool]) -> Vec<(usize, Var<'g>)> {
        use Op::*;
        let out = self.var(id);
        let v = |i| self.var(i);
        let shape_of = |i| self.value_of(i).shape().to_vec();
        let hw_of = |i| {
            let t = self.value_of(i);
            (t.shape()[2], t.shape()[3])
        };
        let kernel_of = |i| self.value_of(i).shape()[2];
        let mut grads = Vec::with_capacity(2);
        let mut emit = |input: usize, rule: &dyn Fn() -> Var<'g>| {
            if reach[input] {
                grads.push((input, rule()));
            }
        };
        const GEOM: &str = "conv backward geometry";
        match op {
            Leaf => {}
            Add(a, b) => {
                emit(*a, &|| g);
                emit(*b, &|| g);
            }
            Sub(a, b) => {
                emit(*a, &|| g);
                emit(*b, &|| -g);
            }
            Mul(a, b) => {
                emit(*a, &|| g * v(*b));
                emit(*b, &|| g * v(*a));
            }
            Scale(a, c) => emit(*a, &|| g.scale(*c)),
            AddScalar(a) => emit(*a, &|| g),
            Powf(a, p) => emit(*a, &|| g * v(*a).powf(p - 1.0).scale(*p)),
            Exp(a) => emit(*a, &|| g * out),
            Ln(a) => emit(*a, &|| g * v(*a).powf(-1.0)),
            Tanh(a) => emit(*a, &|| g - g * out * out),
            MaskMul(a, m) => emit(*a, &|| g.mask_mul(Rc::clone(m))),
            Sum(a) => emit(*a, &|| g.expand(&shape_of(*a))),
            Expand(a) => emit(*a, &|| g.sum()),
            SumTrailing(a) => emit(*a, &|| g.broadcast_trailing(&shape_of(*a))),
            BroadcastTrailing(a) => emit(*a, &|| g.sum_trailing(shape_of(*a).len())),
            ChannelSum(a) => emit(*a, &|| g.channel_broadcast(&shape_of(*a))),
            ChannelBroadcast(a) => emit(*a, &|| g.channel_sum()),
            Reshape(a) => emit(*a, &|| g.reshape(&shape_of(*a))),
            Matmul(a, b) => {
                emit(*a, &|| g.matmul(v(*b).t()));
                emit(*b, &|| v(*a).t().matmul(g));
            }
            Transpose(a) => emit(*a, &|| g.t()),
            Conv { x, w, stride, pad } => {
                emit(*x, &|| g.conv_transpose2d(v(*w), *stride, *pad, hw_of(*x)).expect(GEOM));
                emit(*w, &|| v(*x).conv_weight_grad(g, *stride, *pad, kernel_of(*w)).expect(GEOM));
            }
            ConvInputGrad { gy, w, stride, pad } => {
                emit(*gy, &|| g.conv2d(v(*w), *stride, *pad).expect(GEOM));
                emit(*w, &|| g.conv_weight_grad(v(*gy), *stride, *pad, kernel_of(*w)).expect(GEOM));
            }
            ConvWeightGrad { x, gy, stride, pad } => {
                emit(*x, &|| v(*gy).conv_transpose2d(g, *stride, *pad, hw_of(*x)).expect(GEOM));
                emit(*gy, &|| v(*x).conv2d(g, *stride, *pad).expect(GEOM));
            }
            Gather(a, idx) => emit(*a, &|| g.scatter_add(Rc::clone(idx), &shape_of(*a))),
            ScatterAdd(a, idx) => emit(*a, &|| g.gather(Rc::clone(idx), &shape_of(*a))),
            LogSoftmax(a) => emit(*a, &|| {
                let row_sums = g.sum_trailing(1).broadcast_trailing(&shape_of(*a));
                g - out.exp() * row_sums
            }),
        }
        grads
    }
}

fn assert_same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert!(a.shape() == b.shape(), "{op}: shape {:?} vs {:?}", a.shape(), b.shape());
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    /// Borrow of the recorded value. Do not record new ops while holding it.
    pub fn value_ref(&self) -> Ref<'_, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the gradient history.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant_rc(self.value())
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let value = self.value_ref().map(f);
        self.graph.push(value, op)
    }

    fn binary(self, other: Var<'g>, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Var<'g> {
        let value = {
            let (a, b) = (self.value(), other.value());
            assert_same_shape(name, &a, &b);
            a.zip_map(&b, f).expect("shapes checked")
        };
        self.graph.push(value, op)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.powf(0.5)
    }

    pub fn square(self) -> Var<'g> {
        self * self
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn mask_mul(self, mask: Rc<Tensor>) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_same_shape("mask_mul", &a, &mask);
            a.zip_map(&mask, |x, m| x * m).expect("shapes checked")
        };
        self.graph.push(value, Op::MaskMul(self.id, mask))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        let mask = self.value_ref().map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mask_mul(Rc::new(mask))
    }

    pub fn relu(self) -> Var<'g> {
        self.leaky_relu(0.0)
    }

    pub fn abs(self) -> Var<'g> {
        let mask = self.value_ref().map(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.mask_mul(Rc::new(mask))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(self) -> Var<'g> {
        let total = self.value_ref().sum();
        self.graph.push(Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value_ref().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_eq!(a.len(), 1, "expand needs a one-element tensor");
            Tensor::full(shape, a.data()[0])
        };
        self.graph.push(value, Op::Expand(self.id))
    }

    /// Sums over every axis after the first `keep`.
    pub fn sum_trailing(self, keep: usize) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert!(keep <= a.ndim());
            let outer = numel(&a.shape()[..keep]);
            let inner = numel(&a.shape()[keep..]);
            let data = (0..outer).map(|i| a.data()[i * inner..(i + 1) * inner].iter().sum()).collect();
            Tensor::from_parts(a.shape()[..keep].to_vec(), data)
        };
        self.graph.push(value, Op::SumTrailing(self.id))
    }

    pub fn mean_trailing(self, keep: usize) -> Var<'g> {
        let shape = self.shape();
        let inner = numel(&shape[keep..]) as f64;
        self.sum_trailing(keep).scale(1.0 / inner)
    }

    /// Repeats each element over trailing axes so the result has `shape`.
    pub fn broadcast_trailing(self, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert!(shape.starts_with(a.shape()), "broadcast {:?} to {:?}", a.shape(), shape);
            let inner = numel(&shape[a.ndim()..]);
            let mut data = Vec::with_capacity(a.len() * inner);
            for &x in a.data() {
                data.extend(std::iter::repeat_n(x, inner));
            }
            Tensor::from_parts(shape.to_vec(), data)
        };
        self.graph.push(value, Op::BroadcastTrailing(self.id))
    }

    /// Sums an `[N, C, ...]` tensor down to `[C]`.
    pub fn channel_sum(self) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert!(a.ndim() >= 2, "channel_sum on {:?}", a.shape());
            let (n, c) = (a.shape()[0], a.shape()[1]);
            let inner = numel(&a.shape()[2..]);
            let mut data = vec![0.0; c];
            for b in 0..n {
                for (ch, acc) in data.iter_mut().enumerate() {
                    *acc += a.data()[(b * c + ch) * inner..][..inner].iter().sum::<f64>();
                }
            }
            Tensor::from_parts(vec![c], data)
        };
        self.graph.push(value, Op::ChannelSum(self.id))
    }

    /// Broadcasts a `[C]` tensor along axis 1 of `shape`.
    pub fn channel_broadcast(self, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert!(shape.len() >= 2 && a.shape() == [shape[1]], "channel_broadcast {:?} to {:?}", a.shape(), shape);
            let (n, c) = (shape[0], shape[1]);
            let inner = numel(&shape[2..]);
            let mut data = Vec::with_capacity(numel(shape));
            for _ in 0..n {
                for ch in 0..c {
                    data.extend(std::iter::repeat_n(a.data()[ch], inner));
                }
            }
            Tensor::from_parts(shape.to_vec(), data)
        };
        self.graph.push(value, Op::ChannelBroadcast(self.id))
    }

    pub fn add_channel_bias(self, bias: Var<'g>) -> Var<'g> {
        let shape = self.shape();
        self + bias.channel_broadcast(&shape)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let value = self.value_ref().reshape(shape).expect("reshape size mismatch");
        self.graph.push(value, Op::Reshape(self.id))
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(self) -> Var<'g> {
        let shape = self.shape();
        self.reshape(&[shape[0], numel(&shape[1..])])
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let value = {
            let (a, b) = (self.value_ref(), other.value_ref());
            assert!(
                a.ndim() == 2 && b.ndim() == 2 && a.shape()[1] == b.shape()[0],
                "matmul {:?} x {:?}",
                a.shape(),
                b.shape()
            );
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            Tensor::from_parts(vec![m, n], c)
        };
        self.graph.push(value, Op::Matmul(self.id, other.id))
    }

    pub fn t(self) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_eq!(a.ndim(), 2, "transpose of {:?}", a.shape());
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], data)
        };
        self.graph.push(value, Op::Transpose(self.id))
    }

    pub fn conv2d(self, weight: Var<'g>, stride: usize, pad: usize) -> Result<Var<'g>> {
        let value = {
            let (x, w) = (self.value_ref(), weight.value_ref());
            let geom = ConvGeom::for_forward(x.shape(), w.shape(), stride, pad)?;
            conv::forward(&x, &w, &geom)
        };
        Ok(self.graph.push(value, Op::Conv { x: self.id, w: weight.id, stride, pad }))
    }

    /// Transposed convolution with weight `[C_in, C_out, K, K]` producing the
    /// spatial size `out_hw` (the adjoint of `conv2d` in its input).
    pub fn conv_transpose2d(
        self,
        weight: Var<'g>,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Var<'g>> {
        let value = {
            let (gy, w) = (self.value_ref(), weight.value_ref());
            let geom = ConvGeom::for_input_grad(gy.shape(), w.shape(), stride, pad, out_hw)?;
            conv::input_grad(&gy, &w, &geom)
        };
        Ok(self.graph.push(value, Op::ConvInputGrad { gy: self.id, w: weight.id, stride, pad }))
    }

    fn conv_weight_grad(self, gy: Var<'g>, stride: usize, pad: usize, kernel: usize) -> Result<Var<'g>> {
        let value = {
            let (x, g) = (self.value_ref(), gy.value_ref());
            let wshape = [g.shape()[1], x.shape()[1], kernel, kernel];
            let geom = ConvGeom::for_forward(x.shape(), &wshape, stride, pad)?;
            if geom.output_shape()[..] != g.shape()[..] {
                return Err(Error::Shape(format!(
                    "weight grad: {:?} does not match conv output {:?}",
                    g.shape(),
                    geom.output_shape()
                )));
            }
            conv::weight_grad(&x, &g, &geom)
        };
        Ok(self.graph.push(value, Op::ConvWeightGrad { x: self.id, gy: gy.id, stride, pad }))
    }

    /// `out[i] = self[index[i]]`, reshaped to `shape`.
    pub fn gather(self, index: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_eq!(index.len(), numel(shape), "gather index length");
            Tensor::from_parts(shape.to_vec(), index.iter().map(|&i| a.data()[i]).collect())
        };
        self.graph.push(value, Op::Gather(self.id, index))
    }

    /// `out[index[i]] += self[i]` into a zero tensor of `shape`.
    pub fn scatter_add(self, index: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_eq!(index.len(), a.len(), "scatter index length");
            let mut data = vec![0.0; numel(shape)];
            for (&i, &x) in index.iter().zip(a.data()) {
                data[i] += x;
            }
            Tensor::from_parts(shape.to_vec(), data)
        };
        self.graph.push(value, Op::ScatterAdd(self.id, index))
    }

    /// Row-wise log-softmax of a `[N, C]` tensor.
    pub fn log_softmax(self) -> Var<'g> {
        let value = {
            let a = self.value_ref();
            assert_eq!(a.ndim(), 2, "log_softmax of {:?}", a.shape());
            let c = a.shape()[1];
            let mut data = Vec::with_capacity(a.len());
            for row in a.data().chunks(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                data.extend(row.iter().map(|x| x - lse));
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        self.graph.push(value, Op::LogSoftmax(self.id))
    }
}

impl<'g> std::ops::Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Add(self.id, rhs.id), "add", |a, b| a + b)
    }
}

impl<'g> std::ops::Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), "sub", |a, b| a - b)
    }
}

impl<'g> std::ops::Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), "mul", |a, b| a * b)
    }
}

impl<'g> std::ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }
}
