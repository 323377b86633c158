//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Tensors are 2-d, row-major, 64-bit. A [`Tape`] owns every tensor created
//! through it and records one node per operation; [`Tape::backward`] walks the
//! recorded nodes in exact reverse order and accumulates gradients into every
//! tensor created with `requires_grad`. Tapes are built per training step
//! (define-by-run) and confined to a single owner.
//!
//! Sparse adjacency is handled by [`Tape::edge_aggregate`], a gather-add over
//! an explicit weighted edge list, so graph convolutions cost O(edges) rather
//! than O(n^2).

mod adam;
mod error;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};

use rand::Rng;
use std::sync::Arc;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

/// One weighted entry of a sparse row-gather: output row, input row, weight.
pub type Edge = (u32, u32, f64);

enum Op {
    Leaf,
    Matmul(TensorRef, TensorRef),
    Add(TensorRef, TensorRef),
    Sub(TensorRef, TensorRef),
    Mul(TensorRef, TensorRef),
    AddScalar(TensorRef),
    MulScalar(TensorRef, f64),
    Relu(TensorRef),
    Sigmoid(TensorRef),
    Tanh(TensorRef),
    Ln(TensorRef),
    MeanRows(TensorRef),
    SumAll(TensorRef),
    SumCols(TensorRef),
    Dropout(TensorRef, Vec<f64>),
    ConcatRows(Vec<TensorRef>),
    SliceCols(TensorRef, usize),
    Reshape(TensorRef),
    EdgeAggregate(TensorRef, Arc<Vec<Edge>>),
    GatherRows(TensorRef, Vec<usize>),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Record of one forward pass; owns all tensors and their gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded tensors.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: TensorRef) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].values
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, t: TensorRef) -> Result<f64> {
        let n = &self.nodes[t.0];
        if n.rows * n.cols != 1 {
            return Err(TensorError::BadShape {
                op: "scalar",
                expected: "a 1x1 tensor",
                got: (n.rows, n.cols),
            });
        }
        Ok(n.values[0])
    }

    /// Gradient accumulated into `t` by the last [`Tape::backward`] call, if any.
    pub fn grad(&self, t: TensorRef) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorRef {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad: None,
            requires_grad,
            op,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs_grad(&self, inputs: &[TensorRef]) -> bool {
        inputs.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    /// A tensor that does not take gradients.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<TensorRef> {
        if values.len() != rows * cols {
            return Err(TensorError::InvalidArgument {
                op: "constant",
                msg: format!("{} values for a {}x{} tensor", values.len(), rows, cols),
            });
        }
        Ok(self.push(rows, cols, values, false, Op::Leaf))
    }

    /// A leaf tensor that accumulates gradients.
    pub fn param(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<TensorRef> {
        if values.len() != rows * cols {
            return Err(TensorError::InvalidArgument {
                op: "param",
                msg: format!("{} values for a {}x{} tensor", values.len(), rows, cols),
            });
        }
        Ok(self.push(rows, cols, values, true, Op::Leaf))
    }

    /// Matrix product `a * b`.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != rb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let mut out = vec![0.0; ra * cb];
        matmul_into(&mut out, self.values(a), self.values(b), ra, ca, cb);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ra, cb, out, rg, Op::Matmul(a, b)))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: TensorRef,
        b: TensorRef,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorRef> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let out = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ra, ca, out, rg, op))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: TensorRef, f: impl Fn(f64) -> f64, op: Op) -> TensorRef {
        let (r, c) = self.shape(a);
        let out = self.values(a).iter().map(|&x| f(x)).collect();
        let rg = self.needs_grad(&[a]);
        self.push(r, c, out, rg, op)
    }

    pub fn add_scalar(&mut self, a: TensorRef, s: f64) -> TensorRef {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: TensorRef, s: f64) -> TensorRef {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn neg(&mut self, a: TensorRef) -> TensorRef {
        self.mul_scalar(a, -1.0)
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    /// Column-wise mean over rows: `[n,d] -> [1,d]`.
    pub fn mean_rows(&mut self, a: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(TensorError::BadShape {
                op: "mean_rows",
                expected: "at least one row",
                got: (r, c),
            });
        }
        let vals = self.values(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += vals[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v /= r as f64;
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(1, c, out, rg, Op::MeanRows(a)))
    }

    /// Sum of every entry: `[n,d] -> [1,1]`.
    pub fn sum_all(&mut self, a: TensorRef) -> TensorRef {
        let total: f64 = self.values(a).iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(1, 1, vec![total], rg, Op::SumAll(a))
    }

    /// Row sums: `[n,d] -> [n,1]`.
    pub fn sum_cols(&mut self, a: TensorRef) -> TensorRef {
        let (r, c) = self.shape(a);
        let vals = self.values(a);
        let out = (0..r).map(|i| vals[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.needs_grad(&[a]);
        self.push(r, 1, out, rg, Op::SumCols(a))
    }

    /// Inverted dropout: in train mode each entry is kept with probability
    /// `1 - p` and scaled by `1/(1-p)`; in eval mode (or at p = 0) this is the
    /// identity.
    pub fn dropout(
        &mut self,
        a: TensorRef,
        p: f64,
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorRef> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                msg: format!("rate {p} outside [0,1)"),
            });
        }
        if !train_mode || p == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let out = self
            .values(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(r, c, out, rg, Op::Dropout(a, mask)))
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_rows",
                msg: "no tensors given".into(),
            });
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut out = Vec::new();
        for &t in parts {
            let (r, tc) = self.shape(t);
            if tc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(parts[0]),
                    right: (r, tc),
                });
            }
            rows += r;
            out.extend_from_slice(self.values(t));
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(rows, c, out, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `[start, start+len)` of every row.
    pub fn slice_cols(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(TensorError::InvalidArgument {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of {c}", start + len),
            });
        }
        let vals = self.values(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&vals[i * c + start..i * c + start + len]);
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(r, len, out, rg, Op::SliceCols(a, start)))
    }

    /// Same data, new shape; element count must be preserved.
    pub fn reshape(&mut self, a: TensorRef, rows: usize, cols: usize) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: (r, c),
                right: (rows, cols),
            });
        }
        let out = self.values(a).to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(rows, cols, out, rg, Op::Reshape(a)))
    }

    /// Weighted gather-add over an edge list: `out[r] += w * a[c]` for every
    /// `(r, c, w)` edge. This is sparse-matrix times dense-matrix with the
    /// sparse factor given in coordinate form.
    pub fn edge_aggregate(
        &mut self,
        a: TensorRef,
        edges: Arc<Vec<Edge>>,
        out_rows: usize,
    ) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        for &(dst, src, _) in edges.iter() {
            if dst as usize >= out_rows || src as usize >= r {
                return Err(TensorError::InvalidArgument {
                    op: "edge_aggregate",
                    msg: format!("edge ({dst},{src}) out of bounds for {out_rows}x{r}"),
                });
            }
        }
        let vals = self.values(a);
        let mut out = vec![0.0; out_rows * c];
        for &(dst, src, w) in edges.iter() {
            let (d, s) = (dst as usize * c, src as usize * c);
            for j in 0..c {
                out[d + j] += w * vals[s + j];
            }
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out_rows, c, out, rg, Op::EdgeAggregate(a, edges)))
    }

    /// Row lookup: `out[k] = a[indices[k]]`.
    pub fn gather_rows(&mut self, a: TensorRef, indices: Vec<usize>) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of {r}"),
            });
        }
        let vals = self.values(a);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            out.extend_from_slice(&vals[i * c..(i + 1) * c]);
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(indices.len(), c, out, rg, Op::GatherRows(a, indices)))
    }

    fn accumulate(&mut self, t: TensorRef, contribution: &[f64]) {
        let node = &mut self.nodes[t.0];
        if !node.requires_grad {
            return;
        }
        let grad = node.grad.get_or_insert_with(|| vec![0.0; node.rows * node.cols]);
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Populate gradients of every `requires_grad` tensor reachable from a
    /// scalar loss. Visits nodes in exact reverse recording order.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss { got: (r, c) });
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backward_node(i);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize) {
        let grad_out = self.nodes[i].grad.clone().expect("checked by caller");
        // Ops that need no allocation beyond the contribution buffers.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (ra, ca) = self.shape(a);
                let (_, cb) = self.shape(b);
                let mut da = vec![0.0; ra * ca];
                matmul_nt_into(&mut da, &grad_out, self.values(b), ra, cb, ca);
                self.accumulate(a, &da);
                let mut db = vec![0.0; ca * cb];
                matmul_tn_into(&mut db, self.values(a), &grad_out, ra, ca, cb);
                self.accumulate(b, &db);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &grad_out);
                self.accumulate(b, &grad_out);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &grad_out);
                let neg: Vec<f64> = grad_out.iter().map(|g| -g).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da: Vec<f64> = grad_out
                    .iter()
                    .zip(self.values(b))
                    .map(|(&g, &y)| g * y)
                    .collect();
                let db: Vec<f64> = grad_out
                    .iter()
                    .zip(self.values(a))
                    .map(|(&g, &x)| g * x)
                    .collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.accumulate(a, &grad_out);
            }
            Op::MulScalar(a, s) => {
                let (a, s) = (*a, *s);
                let da: Vec<f64> = grad_out.iter().map(|g| g * s).collect();
                self.accumulate(a, &da);
            }
            Op::Relu(a) => {
                let a = *a;
                let da: Vec<f64> = grad_out
                    .iter()
                    .zip(self.values(a))
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let da: Vec<f64> = grad_out
                    .iter()
                    .zip(&self.nodes[i].values)
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let a = *a;
                let da: Vec<f64> = grad_out
                    .iter()
                    .zip(&self.nodes[i].values)
                    .map(|(&g, &y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Ln(a) => {
                let a = *a;
                let da: Vec<f64> = grad_out
                    .iter()
                    .zip(self.values(a))
                    .map(|(&g, &x)| g / x)
                    .collect();
                self.accumulate(a, &da);
            }
            Op::MeanRows(a) => {
                let a = *a;
                let (r, c) = self.shape(a);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = grad_out[j] / r as f64;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::SumAll(a) => {
                let a = *a;
                let (r, c) = self.shape(a);
                let da = vec![grad_out[0]; r * c];
                self.accumulate(a, &da);
            }
            Op::SumCols(a) => {
                let a = *a;
                let (r, c) = self.shape(a);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = grad_out[i];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Dropout(a, mask) => {
                let a = *a;
                let da: Vec<f64> = grad_out.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accumulate(a, &da);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let c = self.nodes[i].cols;
                let mut offset = 0;
                for t in parts {
                    let (r, _) = self.shape(t);
                    let next = offset + r * c;
                    let da = grad_out[offset..next].to_vec();
                    self.accumulate(t, &da);
                    offset = next;
                }
            }
            Op::SliceCols(a, start) => {
                let (a, start) = (*a, *start);
                let (r, c) = self.shape(a);
                let len = self.nodes[i].cols;
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    for j in 0..len {
                        da[row * c + start + j] = grad_out[row * len + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Reshape(a) => {
                let a = *a;
                self.accumulate(a, &grad_out);
            }
            Op::EdgeAggregate(a, edges) => {
                let (a, edges) = (*a, Arc::clone(edges));
                let (r, c) = self.shape(a);
                let mut da = vec![0.0; r * c];
                for &(dst, src, w) in edges.iter() {
                    let (d, s) = (dst as usize * c, src as usize * c);
                    for j in 0..c {
                        da[s + j] += w * grad_out[d + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::GatherRows(a, indices) => {
                let (a, indices) = (*a, indices.clone());
                let (r, c) = self.shape(a);
                let mut da = vec![0.0; r * c];
                for (k, &src) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[src * c + j] += grad_out[k * c + j];
                    }
                }
                self.accumulate(a, &da);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out = a * b^T` where `a` is n x m and `b` is k x m.
fn matmul_nt_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        for j in 0..k {
            let mut acc = 0.0;
            for p in 0..m {
                acc += a[i * m + p] * b[j * m + p];
            }
            out[i * k + j] += acc;
        }
    }
}

/// `out = a^T * b` where `a` is n x k and `b` is n x m.
fn matmul_tn_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * m..(i + 1) * m];
            let orow = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}
