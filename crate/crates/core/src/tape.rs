//! Reverse-mode differentiation by operation recording.
//!
//! Every op appends a node holding its output value and enough saved state
//! to run its backward rule. Nodes are only ever appended, so the node list
//! is already in topological order and [`Tape::backward`] replays it in
//! reverse.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::activation;
use crate::ops::attention;
use crate::ops::conv::{self, ConvDims, ConvGeom};
use crate::ops::linear;
use crate::ops::norm::{self, BnMode, BnSaved};
use crate::ops::pool::{self, PoolDims};
use crate::ops::softmax;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    NonLocal {
        phi: Var,
        theta: Var,
        g: Var,
        attn: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bindings: IndexMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records parameter `name` from `store` as a differentiable leaf.
    /// Binding the same name twice returns the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.leaf(value, true);
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter names bound on this tape, in binding order.
    pub fn bindings(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Attention matrices `[n, p, p]` saved by a [`Tape::non_local`] node.
    pub fn attention(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::NonLocal { attn, .. } => Some(attn),
            _ => None,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let dims = ConvDims::new(self.shape(x), self.shape(w), geom)?;
        if let Some(b) = b {
            if self.shape(b) != [dims.cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "bias: expected [{}], got {:?}",
                        dims.cout,
                        self.shape(b)
                    ),
                ));
            }
        }
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let value = Tensor::new(dims.out_shape().to_vec(), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, dims }, &inputs))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let d = PoolDims::new(self.shape(x), k, stride)?;
        let (out, argmax) = pool::maxpool_forward(self.value(x).data(), &d);
        let value = Tensor::new(vec![d.n, d.c, d.ho, d.wo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Batch normalization. In train mode also returns the biased batch
    /// mean and variance so the caller can update running statistics.
    #[allow(clippy::type_complexity)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[T], &[T]),
        mode: BnMode,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{what}: expected [{c}], got {:?}", self.shape(v)),
                ));
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(Error::shape("batchnorm2d", "running statistics width"));
        }
        if mode == BnMode::Train && n * h * w < 2 {
            return Err(Error::invalid(
                "batchnorm2d",
                "train mode needs at least two values per channel",
            ));
        }
        let (y, saved) = norm::batchnorm_forward(
            self.value(x).data(),
            (n, c, h * w),
            self.value(gamma).data(),
            self.value(beta).data(),
            mode,
            running,
            eps,
        );
        let stats = saved.batch_stats.clone();
        let value = Tensor::new(vec![n, c, h, w], y)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(activation::sigmoid_scalar);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Concatenation along the channel axis of rank-4 values.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::invalid("concat_channels", "no inputs"));
        };
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!(
                        "input {:?} does not match batch/spatial extents {:?}",
                        self.shape(v),
                        [n, h, w]
                    ),
                ));
            }
            total += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec()), xs))
    }

    /// `x[n, d] · w[d, m] + b[m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d, m) = match (self.shape(x), self.shape(w), self.shape(b)) {
            (&[n, d], &[wd, m], &[bm]) if wd == d && bm == m => (n, d, m),
            (xs, ws, bs) => {
                return Err(Error::shape(
                    "linear",
                    format!("x {xs:?}, w {ws:?}, b {bs:?}"),
                ))
            }
        };
        let y = linear::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            d,
            m,
        );
        let value = Tensor::new(vec![n, m], y)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let y = softmax::softmax(self.value(x).data(), &shape, axis);
        let value = Tensor::new(shape, y)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Mean cross-entropy of `logits[n, k]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let &[n, k] = self.shape(logits) else {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits must be [N, K], got {:?}", self.shape(logits)),
            ));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for batch of {n}", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let (loss, probs) = softmax::cross_entropy(self.value(logits).data(), k, labels);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Non-local attention response for rank-4 `phi`, `theta`, `g` of equal
    /// shape `[n, c, h, w]`; attention runs over the `h * w` positions.
    pub fn non_local(&mut self, phi: Var, theta: Var, g: Var) -> Result<Var> {
        same_shape("non_local", self.shape(phi), self.shape(theta))?;
        same_shape("non_local", self.shape(phi), self.shape(g))?;
        let (n, c, h, w) = self.value(phi).dims4()?;
        let (y, attn) = attention::non_local_forward(
            self.value(phi).data(),
            self.value(theta).data(),
            self.value(g).data(),
            n,
            c,
            h * w,
        );
        let value = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(
            value,
            Op::NonLocal {
                phi,
                theta,
                g,
                attn,
            },
            &[phi, theta, g],
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, d: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let need = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let cg = conv::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dims,
                    need,
                );
                if let Some(dx) = cg.dx {
                    acc(*x, dx);
                }
                if let Some(dw) = cg.dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    acc(*b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, pool::maxpool_backward(g, argmax, self.value(*x).numel()));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("rank checked on record");
                let (dx, dgamma, dbeta) =
                    norm::batchnorm_backward(g, (n, c, h * w), self.value(*gamma).data(), saved);
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Relu(x) => acc(*x, activation::relu_backward(self.value(*x).data(), g)),
            Op::Sigmoid(x) => acc(*x, activation::sigmoid_backward(node.value.data(), g)),
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(vb).map(|(g, y)| *g * *y).collect());
                acc(*b, g.iter().zip(va).map(|(g, x)| *g * *x).collect());
            }
            Op::Concat(xs) => {
                let (n, total, h, w) = node.value.dims4().expect("rank checked on record");
                let plane = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let start = (b * total + offset) * plane;
                            d.extend_from_slice(&g[start..start + c * plane]);
                        }
                        acc(v, d);
                    }
                    offset += c;
                }
            }
            Op::Linear { x, w, b } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let m = self.shape(*w)[1];
                let (dx, dw, db) = linear::linear_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    n,
                    d,
                    m,
                );
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Softmax { x, axis } => acc(
                *x,
                softmax::softmax_backward(node.value.data(), g, node.value.shape(), *axis),
            ),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                acc(
                    *logits,
                    softmax::cross_entropy_backward(probs, k, labels, g[0]),
                );
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::NonLocal {
                phi,
                theta,
                g: gv,
                attn,
            } => {
                let (n, c, h, w) = self.value(*phi).dims4().expect("rank checked on record");
                let (dphi, dtheta, dg) = attention::non_local_backward(
                    self.value(*phi).data(),
                    self.value(*theta).data(),
                    self.value(*gv).data(),
                    attn,
                    g,
                    n,
                    c,
                    h * w,
                );
                acc(*phi, dphi);
                acc(*theta, dtheta);
                acc(*gv, dg);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn get_or_zero(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Number of recorded nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
