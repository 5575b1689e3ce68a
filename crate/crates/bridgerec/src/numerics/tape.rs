//! Define-by-run reverse-mode tape.
//!
//! Values are computed eagerly as nodes are recorded; `backward` replays the
//! recording in reverse, which is a reverse topological order because every
//! node's inputs precede it on the tape. The tape is rebuilt per minibatch.
//!
//! ReLU uses subgradient 0 at exactly 0; clamp passes gradient only strictly
//! inside its bounds; a zero-norm operand of the row-cosine op yields value 0
//! with zero gradient. These conventions are relied on by the training
//! objectives and by the finite-difference checks.

use super::tensor::{dot, norm, Tensor};
use super::NumericsError;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Relu(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    MulElem(usize, usize),
    /// (B x k) scaled per-row by a (1 x k) vector.
    MulRowBcast(usize, usize),
    /// Softmax down each column (across rows).
    SoftmaxCols(usize),
    /// Stack equal-width inputs vertically.
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    Row(usize, usize),
    /// Per-row cosine of two (B x k) tensors, yielding (B x 1).
    CosineRows(usize, usize),
    Clamp(usize, f64, f64),
    Log(usize),
    Exp(usize),
    SumAll(usize),
    /// Sum of squared entries (squared Frobenius norm), yielding a scalar.
    FrobSq(usize),
    ScalarMul(usize, f64),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradients of all named leaves, keyed by name. Unreached parameters get
    /// zero tensors so callers can treat the map as total over the tape's
    /// parameters.
    pub fn leaf_grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let g = match &self.grads[i] {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(node.value.rows(), node.value.cols()),
                };
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: Option<String>) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad, name });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false, None)
    }

    /// A differentiable leaf. Names key the gradient map returned by
    /// [`Gradients::leaf_grads`]; they must be unique per tape.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        debug_assert!(
            self.nodes.iter().all(|n| n.name.as_deref() != Some(name)),
            "duplicate parameter name {name:?}"
        );
        self.push(Op::Leaf, value, true, Some(name.to_string()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a.0, b.0), v, rg, None)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(
            xv.rows(),
            xv.cols(),
            xv.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect(),
        );
        let rg = self.needs(x);
        self.push(Op::Relu(x.0), v, rg, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let v = Tensor::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect(),
        );
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Add(a.0, b.0), v, rg, None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let v = Tensor::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect(),
        );
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a.0, b.0), v, rg, None)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(xv.rows(), xv.cols(), xv.data().iter().map(|a| -a).collect());
        let rg = self.needs(x);
        self.push(Op::Neg(x.0), v, rg, None)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul_elem shape mismatch");
        let v = Tensor::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
        );
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MulElem(a.0, b.0), v, rg, None)
    }

    /// Scale each row of `x` (B x k) elementwise by `v` (1 x k).
    pub fn mul_row_bcast(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.rows(), 1, "broadcast vector must be 1 x k");
        assert_eq!(xv.cols(), vv.cols(), "mul_row_bcast width mismatch");
        let w = vv.row(0).to_vec();
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            data.extend(xv.row(r).iter().zip(&w).map(|(a, b)| a * b));
        }
        let t = Tensor::from_vec(xv.rows(), xv.cols(), data);
        let rg = self.needs(x) || self.needs(v);
        self.push(Op::MulRowBcast(x.0, v.0), t, rg, None)
    }

    /// Softmax across rows, independently per column: output columns sum to 1.
    pub fn softmax_cols(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, k) = xv.shape();
        let mut out = Tensor::zeros(g, k);
        for j in 0..k {
            let mut max = f64::NEG_INFINITY;
            for y in 0..g {
                max = max.max(xv.get(y, j));
            }
            let mut sum = 0.0;
            for y in 0..g {
                let e = (xv.get(y, j) - max).exp();
                out.set(y, j, e);
                sum += e;
            }
            for y in 0..g {
                out.set(y, j, out.get(y, j) / sum);
            }
        }
        let rg = self.needs(x);
        self.push(Op::SoftmaxCols(x.0), out, rg, None)
    }

    /// Stack the inputs vertically (all must share a column count).
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows needs at least one input");
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::from_vec(rows, cols, data);
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.iter().map(|p| p.0).collect()), t, rg, None)
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> NodeId {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(indices.len() * xv.cols());
        for &i in indices {
            data.extend_from_slice(xv.row(i));
        }
        let t = Tensor::from_vec(indices.len(), xv.cols(), data);
        let rg = self.needs(x);
        self.push(Op::GatherRows(x.0, indices.to_vec()), t, rg, None)
    }

    pub fn row(&mut self, x: NodeId, r: usize) -> NodeId {
        let xv = self.value(x);
        let t = Tensor::row_vector(xv.row(r).to_vec());
        let rg = self.needs(x);
        self.push(Op::Row(x.0, r), t, rg, None)
    }

    /// Per-row cosine similarity of two equal-shape (B x k) tensors, (B x 1).
    /// A row where either operand has zero norm yields 0 with no gradient.
    pub fn cosine_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "cosine_rows shape mismatch");
        let mut data = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let (x, y) = (av.row(r), bv.row(r));
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                data.push(0.0);
            } else {
                data.push(dot(x, y) / (nx * ny));
            }
        }
        let t = Tensor::column(data);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::CosineRows(a.0, b.0), t, rg, None)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(
            xv.rows(),
            xv.cols(),
            xv.data().iter().map(|&a| a.clamp(lo, hi)).collect(),
        );
        let rg = self.needs(x);
        self.push(Op::Clamp(x.0, lo, hi), v, rg, None)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(xv.rows(), xv.cols(), xv.data().iter().map(|a| a.ln()).collect());
        let rg = self.needs(x);
        self.push(Op::Log(x.0), v, rg, None)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(xv.rows(), xv.cols(), xv.data().iter().map(|a| a.exp()).collect());
        let rg = self.needs(x);
        self.push(Op::Exp(x.0), v, rg, None)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.needs(x);
        self.push(Op::SumAll(x.0), v, rg, None)
    }

    pub fn frob_sq(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).data().iter().map(|a| a * a).sum());
        let rg = self.needs(x);
        self.push(Op::FrobSq(x.0), v, rg, None)
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::from_vec(xv.rows(), xv.cols(), xv.data().iter().map(|a| a * c).collect());
        let rg = self.needs(x);
        self.push(Op::ScalarMul(x.0, c), v, rg, None)
    }

    /// Reverse sweep from the scalar `loss` node. Every node is visited at
    /// most once, in reverse recording order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NumericsError::NonScalarLoss { rows: lv.rows(), cols: lv.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.all_finite() {
                return Err(NumericsError::NonFinite { node: i, context: "backward" });
            }
            let node = &self.nodes[i];
            if node.requires_grad {
                self.accumulate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], idx: usize, shape: (usize, usize), f: &mut dyn FnMut(&mut Tensor)| {
            if !self.nodes[idx].requires_grad {
                return;
            }
            let slot = grads[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                add_into(grads, *a, av.shape(), &mut |ga| {
                    let d = g.matmul_nt(bv);
                    for (x, y) in ga.data_mut().iter_mut().zip(d.data()) {
                        *x += y;
                    }
                });
                add_into(grads, *b, bv.shape(), &mut |gb| {
                    let d = av.matmul_tn(g);
                    for (x, y) in gb.data_mut().iter_mut().zip(d.data()) {
                        *x += y;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for ((o, &inp), &gv) in gx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        if inp > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for idx in [*a, *b] {
                    let shape = self.nodes[idx].value.shape();
                    add_into(grads, idx, shape, &mut |gx| {
                        for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                let ashape = self.nodes[*a].value.shape();
                add_into(grads, *a, ashape, &mut |gx| {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                });
                let bshape = self.nodes[*b].value.shape();
                add_into(grads, *b, bshape, &mut |gx| {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o -= gv;
                    }
                });
            }
            Op::Neg(x) => {
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o -= gv;
                    }
                });
            }
            Op::MulElem(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                add_into(grads, *a, av.shape(), &mut |gx| {
                    for ((o, &ov), &gv) in gx.data_mut().iter_mut().zip(bv.data()).zip(g.data()) {
                        *o += gv * ov;
                    }
                });
                add_into(grads, *b, bv.shape(), &mut |gx| {
                    for ((o, &ov), &gv) in gx.data_mut().iter_mut().zip(av.data()).zip(g.data()) {
                        *o += gv * ov;
                    }
                });
            }
            Op::MulRowBcast(x, v) => {
                let (xv, vv) = (&self.nodes[*x].value, &self.nodes[*v].value);
                let w = vv.row(0);
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for r in 0..xv.rows() {
                        for ((o, &gv), &wv) in
                            gx.row_mut(r).iter_mut().zip(g.row(r)).zip(w.iter())
                        {
                            *o += gv * wv;
                        }
                    }
                });
                add_into(grads, *v, vv.shape(), &mut |gv_acc| {
                    for r in 0..xv.rows() {
                        for ((o, &gv), &xval) in
                            gv_acc.row_mut(0).iter_mut().zip(g.row(r)).zip(xv.row(r))
                        {
                            *o += gv * xval;
                        }
                    }
                });
            }
            Op::SoftmaxCols(x) => {
                let xv = &self.nodes[*x].value;
                let yv = &self.nodes[i].value;
                let (rows, cols) = xv.shape();
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for j in 0..cols {
                        let mut dot_gy = 0.0;
                        for r in 0..rows {
                            dot_gy += g.get(r, j) * yv.get(r, j);
                        }
                        for r in 0..rows {
                            let cur = gx.get(r, j);
                            gx.set(r, j, cur + yv.get(r, j) * (g.get(r, j) - dot_gy));
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.nodes[p].value.shape();
                    add_into(grads, p, shape, &mut |gp| {
                        for r in 0..shape.0 {
                            for (o, &gv) in gp.row_mut(r).iter_mut().zip(g.row(offset + r)) {
                                *o += gv;
                            }
                        }
                    });
                    offset += shape.0;
                }
            }
            Op::GatherRows(x, indices) => {
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for (r, &src) in indices.iter().enumerate() {
                        for (o, &gv) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Row(x, r) => {
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for (o, &gv) in gx.row_mut(*r).iter_mut().zip(g.row(0)) {
                        *o += gv;
                    }
                });
            }
            Op::CosineRows(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let yv = &self.nodes[i].value;
                // d cos / da = b/(|a||b|) - cos * a/|a|^2, symmetric in b.
                let apply = |grads: &mut [Option<Tensor>], tgt: usize, this: &Tensor, other: &Tensor| {
                    add_into(grads, tgt, this.shape(), &mut |gx| {
                        for r in 0..this.rows() {
                            let (x, y) = (this.row(r), other.row(r));
                            let (nx, ny) = (norm(x), norm(y));
                            if nx == 0.0 || ny == 0.0 {
                                continue;
                            }
                            let c = yv.get(r, 0);
                            let gv = g.get(r, 0);
                            let inv = 1.0 / (nx * ny);
                            let inv_sq = c / (nx * nx);
                            for ((o, &xe), &ye) in gx.row_mut(r).iter_mut().zip(x).zip(y) {
                                *o += gv * (ye * inv - xe * inv_sq);
                            }
                        }
                    });
                };
                apply(grads, *a, av, bv);
                apply(grads, *b, bv, av);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &self.nodes[*x].value;
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for ((o, &inp), &gv) in gx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        if inp > *lo && inp < *hi {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Log(x) => {
                let xv = &self.nodes[*x].value;
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for ((o, &inp), &gv) in gx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        *o += gv / inp;
                    }
                });
            }
            Op::Exp(x) => {
                let yv = &self.nodes[i].value;
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for ((o, &out), &gv) in gx.data_mut().iter_mut().zip(yv.data()).zip(g.data()) {
                        *o += gv * out;
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = g.item();
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for o in gx.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::FrobSq(x) => {
                let xv = &self.nodes[*x].value;
                let gv = g.item();
                add_into(grads, *x, xv.shape(), &mut |gx| {
                    for (o, &inp) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *o += 2.0 * gv * inp;
                    }
                });
            }
            Op::ScalarMul(x, c) => {
                let shape = self.nodes[*x].value.shape();
                add_into(grads, *x, shape, &mut |gx| {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * c;
                    }
                });
            }
        }
    }
}
