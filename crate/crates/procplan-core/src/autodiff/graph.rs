//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Operations append nodes to a [`Graph`]; the tape order is the topological
//! order, so `backward` is a single reverse sweep. Gradients land in the
//! graph first and are exported to a [`Params`] store with [`Graph::write_grads`].

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{ParamId, Params, Tensor};
use crate::error::{Error, Result};

static STORE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Unique identity for a `Params` store so a graph can hold leaves from
/// several stores and export gradients per store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoreId(u64);

pub fn next_store_id() -> StoreId {
    StoreId(STORE_COUNTER.fetch_add(1, Ordering::Relaxed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(StoreId, ParamId),
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Clamp(NodeId, f64, f64),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        [self.nodes[id.0].rows, self.nodes[id.0].cols]
    }

    /// Gradient of the last backward root w.r.t. this node, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.rows, t.cols, t.data.clone(), Op::Constant, false)
    }

    pub fn constant_data(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(rows, cols, data, Op::Constant, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant_data(1, 1, vec![v])
    }

    /// Binds a parameter as a differentiable leaf.
    pub fn param(&mut self, store: &Params, store_id: StoreId, id: ParamId) -> NodeId {
        let t = store.get(id);
        self.push(t.rows, t.cols, t.data.clone(), Op::Param(store_id, id), true)
    }

    /// Binds a parameter as a constant (no gradient will flow).
    pub fn frozen(&mut self, store: &Params, id: ParamId) -> NodeId {
        let t = store.get(id);
        self.push(t.rows, t.cols, t.data.clone(), Op::Constant, false)
    }

    // ── Shape helpers ───────────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.rows != nb.rows || na.cols != nb.cols {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![na.rows, na.cols],
                rhs: vec![nb.rows, nb.cols],
            });
        }
        Ok(())
    }

    // ── Forward operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (k2, n) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::Matmul(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Mul(a, b), ng))
    }

    /// Adds a `[1, c]` bias row to every row of a `[r, c]` tensor.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (br, bc) = (self.nodes[bias.0].rows, self.nodes[bias.0].cols);
        if br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let mut v = self.nodes[a.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] += self.nodes[bias.0].value[j];
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(r, c, v, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + k).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::AddScalar(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Tanh(a), ng)
    }

    /// log(1 + e^x), evaluated stably.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| softplus(x)).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Softplus(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Log(a), ng)
    }

    /// Clamp with pass-through gradient inside `[lo, hi]`, zero outside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.clamp(lo, hi)).collect();
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Clamp(a, lo, hi), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].value[i * c..(i + 1) * c];
            softmax_row(row, &mut v[i * c..(i + 1) * c]);
        }
        let ng = self.needs(a);
        self.push(r, c, v, Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].value[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for j in 0..c {
                v[i * c + j] = row[j] - lse;
            }
        }
        let ng = self.needs(a);
        self.push(r, c, v, Op::LogSoftmax(a), ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let ng = self.needs(a);
        self.push(1, 1, vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len().max(1);
        let s: f64 = self.nodes[a.0].value.iter().sum::<f64>() / n as f64;
        let ng = self.needs(a);
        self.push(1, 1, vec![s], Op::Mean(a), ng)
    }

    /// Sums each row: `[r, c] -> [r, 1]`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let mut v = vec![0.0; r];
        for i in 0..r {
            v[i] = self.nodes[a.0].value[i * c..(i + 1) * c].iter().sum();
        }
        let ng = self.needs(a);
        self.push(r, 1, v, Op::RowSum(a), ng)
    }

    /// Concatenates along columns: `[r, c1] ++ [r, c2] -> [r, c1+c2]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (rb, cb) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
        if ra != rb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let mut v = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            v.extend_from_slice(&self.nodes[a.0].value[i * ca..(i + 1) * ca]);
            v.extend_from_slice(&self.nodes[b.0].value[i * cb..(i + 1) * cb]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(ra, ca + cb, v, Op::ConcatCols(a, b), ng))
    }

    /// Column slice `[start, end)`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        if start >= end || end > c {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut v = Vec::with_capacity(r * w);
        for i in 0..r {
            v.extend_from_slice(&self.nodes[a.0].value[i * c + start..i * c + end]);
        }
        let ng = self.needs(a);
        Ok(self.push(r, w, v, Op::SliceCols(a, start, end), ng))
    }

    /// z = mu + exp(log_var / 2) ⊙ eps, the reparameterized Gaussian draw.
    pub fn gaussian_reparam(&mut self, mu: NodeId, log_var: NodeId, eps: NodeId) -> Result<NodeId> {
        let half = self.scale(log_var, 0.5);
        let sigma = self.exp(half);
        let noise = self.mul(sigma, eps)?;
        self.add(mu, noise)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Gradients from any previous sweep
    /// on this graph are discarded first.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let rn = &self.nodes[root.0];
        if rn.rows * rn.cols != 1 {
            return Err(Error::NonScalarRoot {
                shape: vec![rn.rows, rn.cols],
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = self.nodes[id.0].value.len();
        let slot = self.grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        // Split borrow: take the buffer out to appease the closure.
        contrib(slot);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Constant | Op::Param(..) => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                let n = self.nodes[b.0].cols;
                if self.nodes[a.0].needs_grad {
                    // dA = dC · Bᵀ
                    let bv = self.nodes[b.0].value.clone();
                    self.accumulate(a, |da| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let brow = &bv[..];
                                for p in 0..k {
                                    da[i * k + p] += gij * brow[p * n + j];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ · dC
                    let av = self.nodes[a.0].value.clone();
                    self.accumulate(b, |db| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, |da| add_into(da, g, 1.0));
                self.accumulate(b, |db| add_into(db, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |da| add_into(da, g, 1.0));
                self.accumulate(b, |db| add_into(db, g, -1.0));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let bv = self.nodes[b.0].value.clone();
                    self.accumulate(a, |da| {
                        for (d, (gi, bi)) in da.iter_mut().zip(g.iter().zip(&bv)) {
                            *d += gi * bi;
                        }
                    });
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.nodes[a.0].value.clone();
                    self.accumulate(b, |db| {
                        for (d, (gi, ai)) in db.iter_mut().zip(g.iter().zip(&av)) {
                            *d += gi * ai;
                        }
                    });
                }
            }
            Op::AddRow(a, bias) => {
                let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                self.accumulate(a, |da| add_into(da, g, 1.0));
                self.accumulate(bias, |db| {
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(a, |da| add_into(da, g, k));
            }
            Op::AddScalar(a) => {
                self.accumulate(a, |da| add_into(da, g, 1.0));
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, yi)) in da.iter_mut().zip(g.iter().zip(&y)) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, yi)) in da.iter_mut().zip(g.iter().zip(&y)) {
                        *d += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Softplus(a) => {
                let x = self.nodes[a.0].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, xi)) in da.iter_mut().zip(g.iter().zip(&x)) {
                        *d += gi * sigmoid(*xi);
                    }
                });
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, yi)) in da.iter_mut().zip(g.iter().zip(&y)) {
                        *d += gi * yi;
                    }
                });
            }
            Op::Log(a) => {
                let x = self.nodes[a.0].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, xi)) in da.iter_mut().zip(g.iter().zip(&x)) {
                        *d += gi / xi;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.nodes[a.0].value.clone();
                self.accumulate(a, |da| {
                    for (d, (gi, xi)) in da.iter_mut().zip(g.iter().zip(&x)) {
                        if *xi >= lo && *xi <= hi {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |da| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        for j in 0..c {
                            da[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |da| {
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..c {
                            let p = y[i * c + j].exp();
                            da[i * c + j] += gr[j] - p * gsum;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(a, |da| da.iter_mut().for_each(|d| *d += g0));
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len().max(1);
                let g0 = g[0] / n as f64;
                self.accumulate(a, |da| da.iter_mut().for_each(|d| *d += g0));
            }
            Op::RowSum(a) => {
                let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                self.accumulate(a, |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[i];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let r = self.nodes[idx].rows;
                let ca = self.nodes[a.0].cols;
                let cb = self.nodes[b.0].cols;
                self.accumulate(a, |da| {
                    for i in 0..r {
                        for j in 0..ca {
                            da[i * ca + j] += g[i * (ca + cb) + j];
                        }
                    }
                });
                self.accumulate(b, |db| {
                    for i in 0..r {
                        for j in 0..cb {
                            db[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                });
            }
            Op::SliceCols(a, start, _end) => {
                let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                let w = self.nodes[idx].cols;
                self.accumulate(a, |da| {
                    for i in 0..r {
                        for j in 0..w {
                            da[i * c + start + j] += g[i * w + j];
                        }
                    }
                });
            }
        }
    }

    /// Exports gradients to one store: all of its grads are zeroed, then the
    /// contributions of every leaf bound from it are accumulated.
    pub fn write_grads(&self, store: &mut Params, store_id: StoreId) {
        store.zero_grad();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(sid, pid) = node.op {
                if sid == store_id {
                    if let Some(Some(g)) = self.grads.get(idx) {
                        store.accumulate_grad(pid, g);
                    }
                }
            }
        }
    }
}

// ── Scalar kernels ──────────────────────────────────────────────────

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - mx).exp();
        *o = e;
        z += e;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}
