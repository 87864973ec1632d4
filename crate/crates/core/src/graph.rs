//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A [`Graph`] is an append-only arena of nodes; a node's inputs always have
//! smaller ids, so id order is a topological order. Vector-Jacobian products
//! are themselves recorded as graph ops, which means a gradient can be
//! differentiated again. The gradient penalty relies on this.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeom, Exec};
use crate::sparse::SparseMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which tensor of the correlation `y = corr(x, k)` an op produces. The three
/// variants are the partial derivatives of one trilinear form, so each one's
/// adjoint is another member of the family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvSlot {
    /// Inputs `[x, k]`.
    Response,
    /// Inputs `[y, k]` (transposed convolution).
    Image,
    /// Inputs `[x, y]`.
    Kernel,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Offset(f64),
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Powf(f64),
    Abs,
    LeakyRelu(f64),
    Clamp(f64, f64),
    /// `op(a) * op(b)`; the flags mark transposed operands.
    MatMul { ta: bool, tb: bool },
    Transpose,
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    Reshape(Vec<usize>),
    Conv { slot: ConvSlot, geom: ConvGeom },
    Sparse { map: Arc<SparseMap>, transposed: bool },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Powf(_) => "powf",
            Op::Abs => "abs",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Clamp(..) => "clamp",
            Op::MatMul { .. } => "matmul",
            Op::Transpose => "transpose",
            Op::SumTo(_) => "sum_to",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Reshape(_) => "reshape",
            Op::Conv { .. } => "conv",
            Op::Sparse { .. } => "sparse",
        }
    }
}

#[derive(Debug)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
    pub requires_grad: bool,
    /// Adjoint recorded by the most recent [`Graph::backward`].
    pub grad: Option<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Sum,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.map.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    exec: Exec,
    /// While set, new nodes never require grad (backward without create-graph).
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self { exec, ..Self::default() }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Adjoint of `id` from the last `backward` call, if it was reached.
    pub fn grad_of(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.map(|g| self.value(g))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = !self.no_grad && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, requires_grad, grad: None });
        id
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value, requires_grad, grad: None });
        id
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    // ---- elementwise -------------------------------------------------------

    pub fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (value, op) = match kind {
            BinaryKind::Add => (va.zip_with(vb, |x, y| x + y)?, Op::Add),
            BinaryKind::Sub => (va.zip_with(vb, |x, y| x - y)?, Op::Sub),
            BinaryKind::Mul => (va.zip_with(vb, |x, y| x * y)?, Op::Mul),
            BinaryKind::Div => (va.zip_with(vb, |x, y| x / y)?, Op::Div),
        };
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.value(a).map(f);
        self.push(op, vec![a], value)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg, a, |x| -x)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(Op::Scale(s), a, |x| x * s)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Offset(c), a, |x| x + c)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a, f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Ln, a, f64::ln)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        self.unary(Op::Powf(p), a, |x| x.powf(p))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.powf(a, 0.5)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Abs, a, f64::abs)
    }

    /// `x` for `x > 0`, `slope * x` otherwise. Derivative at exactly 0 is `slope`.
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(Op::LeakyRelu(slope), a, |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp(lo, hi), a, |x| x.clamp(lo, hi))
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` transposes the flagged operands, without
    /// materializing the transpose.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[ra, ca], &[rb, cb]) = (sa, sb) else {
            return shape_err(format!("matmul expects two matrices, got {sa:?} x {sb:?}"));
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return shape_err(format!("matmul inner dimensions differ: {sa:?} x {sb:?} (transposed: {ta}, {tb})"));
        }
        let data = kernels::matmul_t(self.exec, self.value(a).data(), self.value(b).data(), m, k, n, ta, tb);
        let value = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(Op::MatMul { ta, tb }, vec![a, b], value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose2d()?;
        Ok(self.push(Op::Transpose, vec![a], value))
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(shape.to_vec()), vec![a], value))
    }

    pub fn sum_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = self.value(a).sum_to(shape)?;
        Ok(self.push(Op::SumTo(shape.to_vec()), vec![a], value))
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = self.value(a).broadcast_to(shape)?;
        Ok(self.push(Op::BroadcastTo(shape.to_vec()), vec![a], value))
    }

    /// Sum over `axes`, keeping them with extent 1.
    pub fn sum_axes(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.shape(a);
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return shape_err(format!("axis {bad} out of range for {shape:?}"));
        }
        let kept: Vec<usize> =
            shape.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect();
        self.sum_to(a, &kept)
    }

    /// Mean over `axes`, keeping them with extent 1.
    pub fn mean_axes(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let count: usize = axes.iter().map(|&ax| self.shape(a).get(ax).copied().unwrap_or(1)).product();
        let s = self.sum_axes(a, axes)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    /// Reduction over all axes to a `[1]` scalar.
    pub fn reduce(&mut self, kind: ReduceKind, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        let s = self.sum_to(a, &[1])?;
        Ok(match kind {
            ReduceKind::Sum => s,
            ReduceKind::Mean => self.scale(s, 1.0 / n as f64),
        })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, a)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, a)
    }

    pub fn sparse(&mut self, a: NodeId, map: Arc<SparseMap>) -> Result<NodeId> {
        if self.shape(a) != map.in_shape() {
            return shape_err(format!("sparse map expects {:?}, got {:?}", map.in_shape(), self.shape(a)));
        }
        let value = map.apply(self.value(a));
        Ok(self.push(Op::Sparse { map, transposed: false }, vec![a], value))
    }

    fn sparse_transposed(&mut self, a: NodeId, map: Arc<SparseMap>) -> NodeId {
        let value = map.apply_transpose(self.value(a));
        self.push(Op::Sparse { map, transposed: true }, vec![a], value)
    }

    /// Concatenates two `[N, a]` and `[N, b]` matrices along the feature axis.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (&[n, wa], &[n2, wb]) = (self.shape(a), self.shape(b)) else {
            return shape_err(format!("concat expects matrices, got {:?} and {:?}", self.shape(a), self.shape(b)));
        };
        if n != n2 {
            return shape_err(format!("concat batch sizes differ: {n} vs {n2}"));
        }
        let w = wa + wb;
        let embed = |width: usize, off: usize| {
            Arc::new(SparseMap::from_rows(
                &[n, width],
                &[n, w],
                (0..n * w).map(move |o| {
                    let (r, c) = (o / w, o % w);
                    (c >= off && c < off + width).then(|| (r * width + c - off, 1.0))
                }),
            ))
        };
        let ea = embed(wa, 0);
        let eb = embed(wb, wa);
        let pa = self.sparse(a, ea)?;
        let pb = self.sparse(b, eb)?;
        self.add(pa, pb)
    }

    // ---- convolution -------------------------------------------------------

    /// Cross-correlation of `x[N,C,H,W]` with `k[F,C,KH,KW]`, zero padding.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (&[n, c, h, w], &[f, c2, kh, kw]) = (self.shape(x), self.shape(k)) else {
            return shape_err(format!("conv2d expects [N,C,H,W] and [F,C,KH,KW], got {:?} and {:?}", self.shape(x), self.shape(k)));
        };
        if c != c2 {
            return shape_err(format!("conv2d channel mismatch: input {c}, kernel {c2}"));
        }
        let (Some(oh), Some(ow)) =
            (ConvGeom::out_extent(h, kh, stride, pad), ConvGeom::out_extent(w, kw, stride, pad))
        else {
            return shape_err(format!(
                "conv2d output would be empty: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {pad}"
            ));
        };
        let geom = ConvGeom { n, c, h, w, f, kh, kw, stride, pad, oh, ow };
        Ok(self.conv_op(ConvSlot::Response, geom, x, k))
    }

    /// Transposed convolution of `y[N,Cin,H,W]` with `k[Cin,Cout,KH,KW]`,
    /// producing `[N, Cout, stride*(H-1)+KH-2*pad, ...]`.
    pub fn conv_transpose2d(&mut self, y: NodeId, k: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (&[n, f, oh, ow], &[f2, c, kh, kw]) = (self.shape(y), self.shape(k)) else {
            return shape_err(format!(
                "conv_transpose2d expects [N,Cin,H,W] and [Cin,Cout,KH,KW], got {:?} and {:?}",
                self.shape(y),
                self.shape(k)
            ));
        };
        if f != f2 {
            return shape_err(format!("conv_transpose2d channel mismatch: input {f}, kernel {f2}"));
        }
        let (Some(h), Some(w)) =
            (ConvGeom::transposed_extent(oh, kh, stride, pad), ConvGeom::transposed_extent(ow, kw, stride, pad))
        else {
            return shape_err(format!("conv_transpose2d output would be empty for input {oh}x{ow}"));
        };
        let geom = ConvGeom { n, c, h, w, f, kh, kw, stride, pad, oh, ow };
        if ConvGeom::out_extent(h, kh, stride, pad) != Some(oh) {
            return shape_err("conv_transpose2d geometry is not invertible");
        }
        Ok(self.conv_op(ConvSlot::Image, geom, y, k))
    }

    fn conv_op(&mut self, slot: ConvSlot, geom: ConvGeom, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (data, shape) = match slot {
            ConvSlot::Response => (kernels::conv_forward(self.exec, &geom, va, vb), geom.y_shape()),
            ConvSlot::Image => (kernels::conv_transpose(self.exec, &geom, va, vb), geom.x_shape()),
            ConvSlot::Kernel => (kernels::conv_kernel(self.exec, &geom, va, vb), geom.k_shape()),
        };
        let value = Tensor::from_parts(shape.to_vec(), data);
        self.push(Op::Conv { slot, geom }, vec![a, b], value)
    }

    /// Builds the conv-family op producing `target` from the other two tensors.
    fn conv_produce(
        &mut self,
        geom: ConvGeom,
        target: ConvSlot,
        x: Option<NodeId>,
        y: Option<NodeId>,
        k: Option<NodeId>,
    ) -> NodeId {
        match target {
            ConvSlot::Response => self.conv_op(target, geom, x.unwrap(), k.unwrap()),
            ConvSlot::Image => self.conv_op(target, geom, y.unwrap(), k.unwrap()),
            ConvSlot::Kernel => self.conv_op(target, geom, x.unwrap(), y.unwrap()),
        }
    }

    // ---- differentiation ---------------------------------------------------

    /// Backpropagates from a scalar `loss`. Every requires-grad node on a path
    /// to `loss` gets its adjoint recorded (see [`Graph::grad_of`]); the
    /// returned map holds every requires-grad leaf, with zeros for leaves the
    /// loss does not reach.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let leaves: Vec<NodeId> = (0..=loss.0)
            .map(NodeId)
            .filter(|&i| matches!(self.nodes[i.0].op, Op::Leaf) && self.nodes[i.0].requires_grad)
            .collect();
        let all: Vec<NodeId> = (0..self.nodes.len()).map(NodeId).collect();
        let prev = std::mem::replace(&mut self.no_grad, true);
        let adj = self.propagate(loss, None, &all);
        self.no_grad = prev;
        let adj = adj?;
        for (i, a) in adj.iter().enumerate() {
            if let Some(a) = a {
                self.nodes[i].grad = Some(*a);
            }
        }
        let mut map = HashMap::new();
        for id in leaves {
            let g = match adj[id.0] {
                Some(a) => self.value(a).clone(),
                None => self.value(id).zeros_like(),
            };
            map.insert(id, g);
        }
        Ok(Gradients { map })
    }

    /// Differentiable gradient of `output` (seeded with ones) with respect to
    /// each of `wrt`. The returned nodes can themselves be differentiated.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let adj = self.propagate(output, None, wrt)?;
        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(a) => a,
                None => {
                    let z = self.value(w).zeros_like();
                    self.constant(z)
                }
            })
            .collect())
    }

    fn propagate(&mut self, output: NodeId, seed: Option<NodeId>, wrt: &[NodeId]) -> Result<Vec<Option<NodeId>>> {
        let end = output.0 + 1;
        // A node is relevant if it requires grad and depends on some `wrt` node.
        let mut relevant = vec![false; end];
        for &w in wrt {
            if w.0 < end && self.nodes[w.0].requires_grad {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if !relevant[i] && self.nodes[i].requires_grad {
                relevant[i] = self.nodes[i].inputs.iter().any(|p| relevant[p.0]);
            }
        }
        let mut adj: Vec<Option<NodeId>> = vec![None; end];
        if !relevant[output.0] {
            return Ok(adj);
        }
        adj[output.0] = Some(match seed {
            Some(s) => s,
            None => {
                let ones = Tensor::full(self.shape(output), 1.0)?;
                self.constant(ones)
            }
        });
        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !relevant[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            let wanted: Vec<bool> = inputs.iter().map(|p| relevant[p.0]).collect();
            let contribs = self.vjp(NodeId(i), g, &wanted)?;
            for (p, c) in inputs.into_iter().zip(contribs) {
                let Some(c) = c else { continue };
                adj[p.0] = Some(match adj[p.0] {
                    Some(prev) => self.add(prev, c)?,
                    None => c,
                });
            }
        }
        Ok(adj)
    }

    /// Vector-Jacobian products of node `id` for upstream adjoint `g`.
    fn vjp(&mut self, id: NodeId, g: NodeId, wanted: &[bool]) -> Result<Vec<Option<NodeId>>> {
        let op = self.nodes[id.0].op.clone();
        let inputs = self.nodes[id.0].inputs.clone();
        let a = inputs.first().copied();
        let b = inputs.get(1).copied();
        let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
        let mut out = vec![None; inputs.len()];

        // Constant mask derived from the primal input.
        let mask = |gr: &mut Graph, f: &dyn Fn(f64) -> f64| {
            let m = gr.value(a.unwrap()).map(f);
            gr.constant(m)
        };

        match op {
            Op::Leaf => {}
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                if want(0) {
                    let full = match op {
                        Op::Add | Op::Sub => g,
                        Op::Mul => self.mul(g, b)?,
                        _ => self.div(g, b)?,
                    };
                    out[0] = Some(self.sum_to(full, &sa)?);
                }
                if want(1) {
                    let full = match op {
                        Op::Add => g,
                        Op::Sub => self.neg(g),
                        Op::Mul => self.mul(g, a)?,
                        _ => {
                            // d(a/b)/db = -(a/b)/b
                            let q = self.div(id, b)?;
                            let t = self.mul(g, q)?;
                            self.neg(t)
                        }
                    };
                    out[1] = Some(self.sum_to(full, &sb)?);
                }
            }
            Op::Neg => out[0] = Some(self.neg(g)),
            Op::Scale(s) => out[0] = Some(self.scale(g, s)),
            Op::Offset(_) => out[0] = Some(g),
            Op::Exp => out[0] = Some(self.mul(g, id)?),
            Op::Ln => out[0] = Some(self.div(g, a.unwrap())?),
            Op::Tanh => {
                let y2 = self.mul(id, id)?;
                let ny2 = self.neg(y2);
                let d = self.offset(ny2, 1.0);
                out[0] = Some(self.mul(g, d)?);
            }
            Op::Sigmoid => {
                let ny = self.neg(id);
                let one_minus = self.offset(ny, 1.0);
                let d = self.mul(id, one_minus)?;
                out[0] = Some(self.mul(g, d)?);
            }
            Op::Powf(p) => {
                let pm1 = self.powf(a.unwrap(), p - 1.0);
                let d = self.scale(pm1, p);
                out[0] = Some(self.mul(g, d)?);
            }
            Op::Abs => {
                let m = mask(self, &|x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
                out[0] = Some(self.mul(g, m)?);
            }
            Op::LeakyRelu(slope) => {
                let m = mask(self, &|x: f64| if x > 0.0 { 1.0 } else { slope });
                out[0] = Some(self.mul(g, m)?);
            }
            Op::Clamp(lo, hi) => {
                let m = mask(self, &|x: f64| if x >= lo && x <= hi { 1.0 } else { 0.0 });
                out[0] = Some(self.mul(g, m)?);
            }
            Op::MatMul { ta, tb } => {
                // C = A'B' with A' = op(A), B' = op(B): dA' = G B'^T, dB' = A'^T G.
                let (a, b) = (a.unwrap(), b.unwrap());
                if want(0) {
                    out[0] = Some(if ta { self.matmul_t(b, g, tb, true)? } else { self.matmul_t(g, b, false, !tb)? });
                }
                if want(1) {
                    out[1] = Some(if tb { self.matmul_t(g, a, true, ta)? } else { self.matmul_t(a, g, !ta, false)? });
                }
            }
            Op::Transpose => out[0] = Some(self.transpose(g)?),
            Op::SumTo(_) => {
                let s = self.shape(a.unwrap()).to_vec();
                out[0] = Some(self.broadcast_to(g, &s)?);
            }
            Op::BroadcastTo(_) => {
                let s = self.shape(a.unwrap()).to_vec();
                out[0] = Some(self.sum_to(g, &s)?);
            }
            Op::Reshape(_) => {
                let s = self.shape(a.unwrap()).to_vec();
                out[0] = Some(self.reshape(g, &s)?);
            }
            Op::Conv { slot, geom } => {
                let (a, b) = (a.unwrap(), b.unwrap());
                // Slots of (output, input0, input1) for each variant.
                let (s0, s1) = match slot {
                    ConvSlot::Response => (ConvSlot::Image, ConvSlot::Kernel),
                    ConvSlot::Image => (ConvSlot::Response, ConvSlot::Kernel),
                    ConvSlot::Kernel => (ConvSlot::Image, ConvSlot::Response),
                };
                let bind = |slot_of: ConvSlot, node: NodeId, x: &mut Option<NodeId>, y: &mut Option<NodeId>, k: &mut Option<NodeId>| match slot_of {
                    ConvSlot::Image => *x = Some(node),
                    ConvSlot::Response => *y = Some(node),
                    ConvSlot::Kernel => *k = Some(node),
                };
                for (idx, target, other, other_slot) in [(0, s0, b, s1), (1, s1, a, s0)] {
                    if !want(idx) {
                        continue;
                    }
                    let (mut x, mut y, mut k) = (None, None, None);
                    bind(slot, g, &mut x, &mut y, &mut k);
                    bind(other_slot, other, &mut x, &mut y, &mut k);
                    out[idx] = Some(self.conv_produce(geom, target, x, y, k));
                }
            }
            Op::Sparse { map, transposed } => {
                out[0] = Some(if transposed { self.sparse(g, map)? } else { self.sparse_transposed(g, map) });
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a ⊙ b` with the broadcast rule, as a standalone tensor op.
pub fn elementwise(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (ia, ib) = (g.constant(a.clone()), g.constant(b.clone()));
    let r = g.binary(kind, ia, ib)?;
    Ok(g.value(r).clone())
}
