use std::borrow::Cow;

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        depthwise: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BiasAdd(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Gather { x: Var, idx: Vec<usize> },
    Mse(Var, Var),
    KlDiv(Var, Var),
    Reshape(Var),
    Narrow { x: Var, start: usize },
    Select {
        paths: Vec<Var>,
        gates: Var,
        gate_index: Vec<usize>,
        selected: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Eager Wengert list for reverse-mode differentiation.
///
/// Every primitive evaluates immediately, stores its output and appends one
/// node; `backward` walks the nodes in exact reverse order. Leaves may borrow
/// parameter tensors for the tape's lifetime so binding a network is free.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

fn softmax_axis(t: &Tensor, axis: usize, log: bool) -> Tensor {
    let shape = t.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|j| (src[at(j)] - max).exp()).sum();
            for j in 0..len {
                let shifted = src[at(j)] - max;
                out[at(j)] = if log {
                    shifted - z.ln()
                } else {
                    shifted.exp() / z
                };
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("same shape")
}

/// Sum of `g` along `axis`, broadcast back over it.
fn axis_sums(g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut sums = vec![0.0; outer * inner];
    for o in 0..outer {
        for j in 0..len {
            for i in 0..inner {
                sums[o * inner + i] += g[(o * len + j) * inner + i];
            }
        }
    }
    sums
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, node: Op, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: node,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that borrows its value instead of copying it.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` that is cut off from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn conv_common(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        depthwise: bool,
    ) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(TensorError::shape(op, sx, sw));
        }
        let in_per_group = if depthwise { 1 } else { sx[1] };
        if sw[1] != in_per_group || (depthwise && sw[0] != sx[1]) {
            return Err(TensorError::shape(op, sx, sw));
        }
        let geom = ConvGeom::new((sx[0], sx[1], sx[2], sx[3]), (sw[0], sw[2], sw[3]), stride, pad)
            .ok_or_else(|| TensorError::invalid(op, format!("kernel {sw:?} stride {stride} pad {pad} on {sx:?}")))?;
        if let Some(b) = b {
            let sb = self.value(b).shape();
            if sb != [sw[0]] {
                return Err(TensorError::shape(op, sw, sb));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let out = if depthwise {
            kernels::depthwise(&geom, tx.data(), tw.data(), bias)
        } else {
            kernels::conv2d(&geom, tx.data(), tw.data(), bias)
        };
        let shape = vec![geom.n, geom.k, geom.oh, geom.ow];
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            op,
            Tensor::new(shape, out)?,
            Op::Conv {
                x,
                w,
                b,
                geom,
                depthwise,
            },
            rg,
        )
    }

    /// 2-D convolution; `x: [N,C,H,W]`, `w: [K,C,R,S]`, optional bias `[K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        self.conv_common("conv2d", x, w, b, stride, pad, false)
    }

    /// Per-channel convolution; `x: [N,C,H,W]`, `w: [C,1,R,S]`.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        self.conv_common("depthwise_conv2d", x, w, b, stride, pad, true)
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb || self.value(b).is_scalar_like() {
            Ok(sa.to_vec())
        } else if self.value(a).is_scalar_like() {
            Ok(sb.to_vec())
        } else {
            Err(TensorError::shape(op, sa, sb))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        match (da.len(), db.len()) {
            (x, y) if x == y => da.iter().zip(db).map(|(&u, &v)| f(u, v)).collect(),
            (_, 1) => da.iter().map(|&u| f(u, db[0])).collect(),
            _ => db.iter().map(|&v| f(da[0], v)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.broadcast_shape("add", a, b)?;
        let out = self.zip_broadcast(a, b, |u, v| u + v);
        let rg = self.rg(&[a, b]);
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.broadcast_shape("sub", a, b)?;
        let out = self.zip_broadcast(a, b, |u, v| u - v);
        let rg = self.rg(&[a, b]);
        self.push("sub", Tensor::new(shape, out)?, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.broadcast_shape("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |u, v| u * v);
        let rg = self.rg(&[a, b]);
        self.push("mul", Tensor::new(shape, out)?, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push("scale", out, Op::Scale(x, c), rg)
    }

    /// `x: [N,F]` plus a row bias `b: [F]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (sx, sb) = (tx.shape(), tb.shape());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(TensorError::shape("bias_add", sx, sb));
        }
        let f = sx[1];
        let out: Vec<f64> = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % f])
            .collect();
        let rg = self.rg(&[x, b]);
        self.push("bias_add", Tensor::new(sx.to_vec(), out)?, Op::BiasAdd(x, b), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push("relu", out, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push("exp", out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(f64::ln);
        let rg = self.rg(&[x]);
        self.push("log", out, Op::Log(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push("sum", out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[x]);
        self.push("mean", out, Op::Mean(x), rg)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), TensorError> {
        let s = self.value(x).shape();
        if axis >= s.len() || s[axis] == 0 {
            return Err(TensorError::invalid(op, format!("axis {axis} of shape {s:?}")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, axis)?;
        if !self.value(x).is_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let out = softmax_axis(self.value(x), axis, false);
        let rg = self.rg(&[x]);
        self.push("softmax", out, Op::Softmax { x, axis }, rg)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("log_softmax", x, axis)?;
        let out = softmax_axis(self.value(x), axis, true);
        let rg = self.rg(&[x]);
        self.push("log_softmax", out, Op::LogSoftmax { x, axis }, rg)
    }

    /// Picks `x[n, idx[n]]` from a `[N, A]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(TensorError::shape("gather", s, &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[1]) {
            return Err(TensorError::invalid("gather", format!("index {bad} out of range {}", s[1])));
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(n, &i)| t.data()[n * s[1] + i]).collect();
        let rg = self.rg(&[x]);
        self.push(
            "gather",
            Tensor::vector(out),
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape("mse", ta.shape(), tb.shape()));
        }
        if ta.is_empty() {
            return Err(TensorError::Empty("mse"));
        }
        let n = ta.len() as f64;
        let v: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        let rg = self.rg(&[a, b]);
        self.push("mse", Tensor::scalar(v), Op::Mse(a, b), rg)
    }

    /// `KL(p ‖ q)` along the last axis of two probability tensors; the result
    /// drops that axis.
    pub fn kl_div(&mut self, p: Var, q: Var) -> Result<Var, TensorError> {
        let (tp, tq) = (self.value(p), self.value(q));
        if tp.shape() != tq.shape() || tp.ndim() == 0 {
            return Err(TensorError::shape("kl_div", tp.shape(), tq.shape()));
        }
        let a = *tp.shape().last().expect("ndim > 0");
        let rows = tp.len() / a.max(1);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for j in 0..a {
                let (pv, qv) = (tp.data()[r * a + j], tq.data()[r * a + j]);
                if pv > 0.0 {
                    acc += pv * (pv.ln() - qv.ln());
                }
            }
            out.push(acc);
        }
        let shape = tp.shape()[..tp.ndim() - 1].to_vec();
        let rg = self.rg(&[p, q]);
        self.push("kl_div", Tensor::new(shape, out)?, Op::KlDiv(p, q), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.len() {
            return Err(TensorError::shape("reshape", t.shape(), shape));
        }
        let out = t.reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.shape();
        if s.is_empty() || start + len > s[0] {
            return Err(TensorError::invalid("narrow", format!("rows {start}..{} of {s:?}", start + len)));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        let out = Tensor::new(shape, t.data()[start * row..(start + len) * row].to_vec())?;
        let rg = self.rg(&[x]);
        self.push("narrow", out, Op::Narrow { x, start }, rg)
    }

    /// Forwards `paths[selected]` unchanged while letting every path reach the
    /// gate vector in the backward pass.
    ///
    /// The output value is exactly the selected path. Backward sends the
    /// upstream gradient only into the selected path and gives gate entry
    /// `gate_index[k]` the inner product of the upstream gradient with
    /// `paths[k]`, i.e. the partial derivative of `Σ_k gate_k · path_k`
    /// with respect to the gate. Gate entries without a path get zero.
    pub fn straight_through_select(
        &mut self,
        paths: &[Var],
        gates: Var,
        gate_index: &[usize],
        selected: usize,
    ) -> Result<Var, TensorError> {
        if paths.is_empty() || paths.len() != gate_index.len() || selected >= paths.len() {
            return Err(TensorError::invalid(
                "straight_through_select",
                format!("{} paths, {} gate indices, selected {selected}", paths.len(), gate_index.len()),
            ));
        }
        let shape = self.value(paths[selected]).shape().to_vec();
        for &p in paths {
            if self.value(p).shape() != shape.as_slice() {
                return Err(TensorError::shape("straight_through_select", &shape, self.value(p).shape()));
            }
        }
        let ng = self.value(gates).len();
        if self.value(gates).ndim() != 1 || gate_index.iter().any(|&g| g >= ng) {
            return Err(TensorError::invalid(
                "straight_through_select",
                format!("gate indices {gate_index:?} for gates {:?}", self.value(gates).shape()),
            ));
        }
        let out = self.value(paths[selected]).clone();
        let mut deps = paths.to_vec();
        deps.push(gates);
        let rg = self.rg(&deps);
        self.push(
            "straight_through_select",
            out,
            Op::Select {
                paths: paths.to_vec(),
                gates,
                gate_index: gate_index.to_vec(),
                selected,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let t = self.value(root);
        if !t.is_scalar_like() {
            return Err(TensorError::NotScalar { shape: t.shape().to_vec() });
        }
        let seed = Tensor::full(t.shape(), 1.0);
        Ok(self.backward_from(vec![(root, seed)]))
    }

    /// Reverse pass seeded with arbitrary upstream gradients. With no seeds
    /// (or an empty tape) this does nothing.
    pub fn backward_from(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut start = 0;
        for (v, g) in seeds {
            start = start.max(v.0 + 1);
            accumulate(&mut grads, &self.nodes, v, g);
        }
        for i in (0..start).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| accumulate(grads, nodes, v, t);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    let da = kernels::matmul_grad_lhs(g.data(), val(*b).data(), m, k, n);
                    acc(*a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if wants(*b) {
                    let db = kernels::matmul_grad_rhs(val(*a).data(), g.data(), m, k, n);
                    acc(*b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                depthwise,
            } => {
                let need = (wants(*x), wants(*w), b.is_some_and(wants));
                let f = if *depthwise {
                    kernels::depthwise_backward
                } else {
                    kernels::conv2d_backward
                };
                let r = f(geom, val(*x).data(), val(*w).data(), g.data(), need);
                if let Some(dx) = r.dx {
                    acc(*x, Tensor::new(val(*x).shape().to_vec(), dx).expect("shape"));
                }
                if let Some(dw) = r.dw {
                    acc(*w, Tensor::new(val(*w).shape().to_vec(), dw).expect("shape"));
                }
                if let (Some(b), Some(db)) = (b, r.db) {
                    acc(*b, Tensor::vector(db));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    if wants(v) {
                        acc(v, reduce_to(g, val(v), s));
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let o = val(other);
                        let prod: Vec<f64> = if o.len() == g.len() {
                            g.data().iter().zip(o.data()).map(|(x, y)| x * y).collect()
                        } else {
                            g.data().iter().map(|x| x * o.data()[0]).collect()
                        };
                        let prod = Tensor::new(g.shape().to_vec(), prod).expect("shape");
                        acc(v, reduce_to(&prod, val(v), 1.0));
                    }
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::BiasAdd(x, b) => {
                if wants(*x) {
                    acc(*x, g.clone());
                }
                if wants(*b) {
                    let f = val(*b).len();
                    let mut db = vec![0.0; f];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % f] += v;
                    }
                    acc(*b, Tensor::vector(db));
                }
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Exp(x) => {
                let d: Vec<f64> = g.data().iter().zip(node.value.data()).map(|(a, b)| a * b).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Log(x) => {
                let d: Vec<f64> = g.data().iter().zip(val(*x).data()).map(|(a, b)| a / b).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let t = val(*x);
                acc(*x, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let gy: Vec<f64> = g.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
                let sums = axis_sums(&gy, y.shape(), *axis);
                let d = scatter_axis(y.shape(), *axis, |flat, red| y.data()[flat] * (g.data()[flat] - sums[red]));
                acc(*x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::LogSoftmax { x, axis } => {
                let y = &node.value;
                let sums = axis_sums(g.data(), y.shape(), *axis);
                let d = scatter_axis(y.shape(), *axis, |flat, red| g.data()[flat] - y.data()[flat].exp() * sums[red]);
                acc(*x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Gather { x, idx } => {
                let s = val(*x).shape();
                let mut d = Tensor::zeros(s);
                for (n, &i) in idx.iter().enumerate() {
                    d.data_mut()[n * s[1] + i] += g.data()[n];
                }
                acc(*x, d);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = 2.0 * g.item() / ta.len() as f64;
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| c * (x - y)).collect();
                let diff = Tensor::new(ta.shape().to_vec(), diff).expect("shape");
                if wants(*b) {
                    acc(*b, diff.map(|v| -v));
                }
                if wants(*a) {
                    acc(*a, diff);
                }
            }
            Op::KlDiv(p, q) => {
                let (tp, tq) = (val(*p), val(*q));
                let a = *tp.shape().last().expect("ndim > 0");
                if wants(*p) {
                    let d: Vec<f64> = (0..tp.len())
                        .map(|i| {
                            let pv = tp.data()[i].max(f64::MIN_POSITIVE);
                            g.data()[i / a] * (pv.ln() - tq.data()[i].ln() + 1.0)
                        })
                        .collect();
                    acc(*p, Tensor::new(tp.shape().to_vec(), d).expect("shape"));
                }
                if wants(*q) {
                    let d: Vec<f64> = (0..tq.len())
                        .map(|i| -g.data()[i / a] * tp.data()[i] / tq.data()[i])
                        .collect();
                    acc(*q, Tensor::new(tq.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape()).expect("same size")),
            Op::Narrow { x, start } => {
                let mut d = Tensor::zeros(val(*x).shape());
                let off = start * (g.len() / g.shape()[0].max(1));
                d.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                acc(*x, d);
            }
            Op::Select {
                paths,
                gates,
                gate_index,
                selected,
            } => {
                if wants(paths[*selected]) {
                    acc(paths[*selected], g.clone());
                }
                if wants(*gates) {
                    let mut dg = Tensor::zeros(val(*gates).shape());
                    for (k, &p) in paths.iter().enumerate() {
                        let dot: f64 = g.data().iter().zip(val(p).data()).map(|(a, b)| a * b).sum();
                        dg.data_mut()[gate_index[k]] += dot;
                    }
                    acc(*gates, dg);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node<'_>], v: Var, t: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Reduces a broadcast gradient back to the shape of `target`.
fn reduce_to(g: &Tensor, target: &Tensor, sign: f64) -> Tensor {
    if g.len() == target.len() {
        let mut t = g.reshape(target.shape()).expect("same size");
        if sign != 1.0 {
            t.scale_in_place(sign);
        }
        t
    } else {
        Tensor::full(target.shape(), sign * g.sum())
    }
}

/// Builds a flat buffer over `shape`, calling `f(flat_index, reduced_index)`
/// where `reduced_index` addresses the tensor with `axis` summed out.
fn scatter_axis(shape: &[usize], axis: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let total: usize = shape.iter().product();
    (0..total)
        .map(|flat| {
            let o = flat / (len * inner);
            let i = flat % inner;
            f(flat, o * inner + i)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0; 4]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::new(vec![2, 3], vec![0.2, 0.3, 0.5, 0.6, 0.4, 0.0]).unwrap());
        let q = t.constant(t.value(p).clone());
        let k = t.kl_div(p, q).unwrap();
        assert_eq!(t.value(k).data(), &[0.0, 0.0]);
    }

    #[test]
    fn mse_gradient_vanishes_at_target() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0]), true);
        let c = t.constant(Tensor::vector(vec![1.5, -2.0]));
        let l = t.mse(x, c).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn non_finite_forward_fails_fast() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 1.0]));
        assert_eq!(t.log(x).unwrap_err(), TensorError::NonFinite { op: "log" });
        let big = t.constant(Tensor::vector(vec![1000.0]));
        assert!(t.exp(big).is_err());
    }

    #[test]
    fn backward_on_empty_tape_is_noop() {
        let t = Tape::new();
        let g = t.backward_from(Vec::new());
        assert!(g.is_empty());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn select_forwards_chosen_path_and_routes_gate_grads() {
        let mut t = Tape::new();
        let p0 = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let p1 = t.leaf(Tensor::vector(vec![3.0, -1.0]), true);
        let gates = t.leaf(Tensor::vector(vec![0.2, 0.5, 0.3]), true);
        let y = t.straight_through_select(&[p0, p1], gates, &[2, 0], 1).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, -1.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(p0).is_none());
        assert_eq!(g.get(p1).unwrap().data(), &[1.0, 1.0]);
        // gate 2 ← <1, p0> = 3, gate 0 ← <1, p1> = 2, gate 1 untouched
        assert_eq!(g.get(gates).unwrap().data(), &[2.0, 0.0, 3.0]);
    }
}
