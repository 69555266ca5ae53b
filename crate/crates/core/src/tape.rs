//! Reverse-mode differentiation over feature maps.
//!
//! A [`Tape`] records one forward pass of a network on a single image.
//! Operations read weights straight from a borrowed [`ParamStore`];
//! [`Tape::backward`] seeds gradients on any set of nodes and accumulates
//! parameter gradients into a [`Gradients`] buffer.

use crate::ops;
use crate::{Gradients, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            pad: kernel / 2,
            groups: 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv {
        x: usize,
        w: ParamId,
        b: Option<ParamId>,
        spec: ConvSpec,
    },
    Relu(usize),
    Relu6(usize),
    Tanh(usize),
    Add(usize, usize),
    Concat(Vec<usize>),
    ResizeNearest(usize),
    ResizeBilinear(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Gradients of every node after a backward pass.
pub struct NodeGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> NodeGrads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Set `requires_grad` to read its gradient afterwards.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>, spec: ConvSpec) -> Var {
        let weight = self.params.get(w);
        let bias = b.map(|b| self.params.get(b).data());
        let out = ops::conv2d_forward(&self.nodes[x.0].value, weight, bias, spec);
        self.push(out, Op::Conv { x: x.0, w, b, spec }, true)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x.0), rg)
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        let six = T::lit(6.0);
        let out = self.value(x).map(|v| v.max(T::zero()).min(six));
        let rg = self.rg(x);
        self.push(out, Op::Relu6(x.0), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x.0), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a.0, b.0), rg)
    }

    /// Concatenation along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (_, h, w) = self.value(parts[0]).chw();
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pc, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            c += pc;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_vec(&[c, h, w], data),
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            rg,
        )
    }

    pub fn resize_nearest(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = ops::resize_nearest(self.value(x), h, w);
        let rg = self.rg(x);
        self.push(out, Op::ResizeNearest(x.0), rg)
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = ops::resize_bilinear(self.value(x), h, w);
        let rg = self.rg(x);
        self.push(out, Op::ResizeBilinear(x.0), rg)
    }

    /// Back-propagates the seeded output gradients. Parameter gradients are
    /// added to `grads`; node gradients are returned.
    pub fn backward(
        &self,
        seeds: impl IntoIterator<Item = (Var, Tensor<T>)>,
        grads: &mut Gradients<T>,
    ) -> NodeGrads<T> {
        let mut g: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (v, s) in seeds {
            assert_eq!(s.shape(), self.value(v).shape(), "seed shape mismatch");
            acc(&mut g[v.0], s);
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = g[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    g[i] = Some(gy);
                    continue;
                }
                Op::Conv { x, w, b, spec } => {
                    let xin = &self.nodes[*x].value;
                    let weight = self.params.get(*w);
                    let need_dx = self.nodes[*x].requires_grad;
                    let (dx, dw, db) = ops::conv2d_backward(xin, weight, &gy, *spec, need_dx);
                    grads.accumulate(*w, weight.shape()).add_assign(&dw);
                    if let Some(b) = b {
                        let bs = self.params.get(*b).shape();
                        grads.accumulate(*b, bs).add_assign(&db);
                    }
                    if let Some(dx) = dx {
                        acc(&mut g[*x], dx);
                    }
                }
                Op::Relu(x) => {
                    let xin = &self.nodes[*x].value;
                    let mut dx = gy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xin.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    acc(&mut g[*x], dx);
                }
                Op::Relu6(x) => {
                    let xin = &self.nodes[*x].value;
                    let six = T::lit(6.0);
                    let mut dx = gy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xin.data()) {
                        if v <= T::zero() || v >= six {
                            *d = T::zero();
                        }
                    }
                    acc(&mut g[*x], dx);
                }
                Op::Tanh(x) => {
                    let mut dx = gy;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= T::one() - y * y;
                    }
                    acc(&mut g[*x], dx);
                }
                Op::Add(a, b) => {
                    if self.nodes[*b].requires_grad {
                        acc(&mut g[*b], gy.clone());
                    }
                    if self.nodes[*a].requires_grad {
                        acc(&mut g[*a], gy);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.nodes[p].value.shape();
                        let n = self.nodes[p].value.len();
                        if self.nodes[p].requires_grad {
                            let slice = gy.data()[off..off + n].to_vec();
                            acc(&mut g[p], Tensor::from_vec(shape, slice));
                        }
                        off += n;
                    }
                }
                Op::ResizeNearest(x) => {
                    let (_, h, w) = self.nodes[*x].value.chw();
                    acc(&mut g[*x], ops::resize_nearest_backward(&gy, h, w));
                }
                Op::ResizeBilinear(x) => {
                    let (_, h, w) = self.nodes[*x].value.chw();
                    acc(&mut g[*x], ops::resize_bilinear_backward(&gy, h, w));
                }
            }
        }
        NodeGrads { grads: g }
    }
}

fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, value: Tensor<T>) {
    match slot {
        Some(t) => t.add_assign(&value),
        None => *slot = Some(value),
    }
}
