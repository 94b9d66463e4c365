//! Reverse-mode tape over whole tensors.
//!
//! Every operation appends a node whose inputs are earlier nodes, so node
//! ids are already a topological order and `backward` is one reverse sweep.

use std::sync::Arc;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How per-point loss terms are reduced within one resolution level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for LossReduction {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(crate::Error::InvalidArgument(format!("unknown loss reduction '{other}' (mean|sum)"))),
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Reshape(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    MaxOverNeighbors(Var, Vec<u32>),
    GatherMax {
        center: Var,
        source: Var,
        index: Arc<Vec<usize>>,
        k: usize,
        argmax: Vec<u32>,
    },
    Interpolate {
        source: Var,
        index: Arc<Vec<usize>>,
        weights: Arc<Vec<T>>,
        k: usize,
    },
    Sum(Var),
    SoftmaxBce {
        logits: Var,
        dlogits: Vec<T>,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` did not require gradients; zeros when it did but
    /// did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::shape(op, detail)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Every piecewise choice made on this tape: ReLU input signs and the
    /// winning neighbor of each max. Two evaluations of the same graph with
    /// equal patterns lie on the same linear piece of the ReLU/max parts.
    pub fn switch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.extend(self.value(*x).data().iter().map(|&v| (v > T::zero()) as u32)),
                Op::MaxOverNeighbors(_, arg) => out.extend_from_slice(arg),
                Op::GatherMax { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf tensor; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// `x[..×K] · w[K×N]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        let k = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != k {
            return Err(shape_err("matmul", format!("{xs:?} x {ws:?}")));
        }
        let rows = self.value(x).len() / k;
        let out = kernels::matmul(self.value(x).data(), self.value(w).data(), rows, k, ws[1]);
        let mut shape = xs;
        *shape.last_mut().unwrap() = ws[1];
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(x, w), &[x, w]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).len() != c {
            return Err(shape_err(
                "add_bias",
                format!("{} channels vs bias {:?}", c, self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x·w + b` over the trailing axis.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    /// Elementwise `max(0, x)`; the derivative at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    /// Concatenation along the trailing axis, in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err(
                    "concat",
                    format!("leading dims {:?} vs {:?}", &s[..s.len() - 1], lead),
                ));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, end)?;
        Ok(self.push(out, Op::SliceCols(x, start, end), &[x]))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start >= end || end > t.rows() {
            return Err(shape_err("slice_rows", format!("{start}..{end} of {}", t.rows())));
        }
        let stride = t.len() / t.rows();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let out = Tensor::new(shape, t.data()[start * stride..end * stride].to_vec())?;
        Ok(self.push(out, Op::SliceRows(x, start, end), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `out[i] = x[index[i]]`, output `[M × C]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let c = self.value(x).cols();
        self.gather_impl(x, index, vec![], c)
    }

    /// Neighbor lookup: `index` is `[M × k]`, output `[M × k × C]`.
    pub fn gather_neighbors(&mut self, x: Var, index: Arc<Vec<usize>>, k: usize) -> Result<Var> {
        if k == 0 || !index.len().is_multiple_of(k) {
            return Err(shape_err("gather_neighbors", format!("{} indices, k={k}", index.len())));
        }
        let c = self.value(x).cols();
        self.gather_impl(x, index, vec![k], c)
    }

    fn gather_impl(&mut self, x: Var, index: Arc<Vec<usize>>, mid: Vec<usize>, c: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(shape_err("gather_rows", format!("source must be 2-D, got {:?}", t.shape())));
        }
        let n = t.rows();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let k: usize = mid.iter().product();
        let mut shape = vec![index.len() / k.max(1)];
        shape.extend(mid);
        shape.push(c);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::GatherRows(x, index), &[x]))
    }

    /// Per-point, per-channel maximum over the neighbor axis of `[N × K × C]`.
    /// Returns the output and the winning neighbor slot (first on ties).
    pub fn max_over_neighbors(&mut self, x: Var) -> Result<(Var, Vec<u32>)> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 3 {
            return Err(shape_err("max_over_neighbors", format!("expected [N×K×C], got {s:?}")));
        }
        let (n, k, c) = (s[0], s[1], s[2]);
        let mut out = vec![T::zero(); n * c];
        let mut arg = vec![0u32; n * c];
        let d = t.data();
        for i in 0..n {
            for ch in 0..c {
                let mut best = 0usize;
                let mut bv = d[i * k * c + ch];
                for j in 1..k {
                    let v = d[(i * k + j) * c + ch];
                    if v > bv {
                        bv = v;
                        best = j;
                    }
                }
                out[i * c + ch] = bv;
                arg[i * c + ch] = best as u32;
            }
        }
        let out = Tensor::new(vec![n, c], out)?;
        let v = self.push(out, Op::MaxOverNeighbors(x, arg.clone()), &[x]);
        Ok((v, arg))
    }

    /// Fused edge aggregation: `out[i,c] = max_j (center[i,c] + source[index[i,j],c])`.
    ///
    /// This is `max_over_neighbors` applied to a per-edge affine map that
    /// decomposes into a center term and a neighbor term, without
    /// materialising the `[M × K × C]` edge tensor.
    pub fn gather_max(&mut self, center: Var, source: Var, index: Arc<Vec<usize>>, k: usize) -> Result<Var> {
        let (tc, ts) = (self.value(center), self.value(source));
        let c = tc.cols();
        let m = tc.len() / c;
        if ts.cols() != c || k == 0 || index.len() != m * k {
            return Err(shape_err(
                "gather_max",
                format!("center {:?}, source {:?}, {} indices, k={k}", tc.shape(), ts.shape(), index.len()),
            ));
        }
        let n = ts.len() / c;
        if let Some(&bad) = index.iter().find(|&&j| j >= n) {
            return Err(Error::Index {
                op: "gather_max",
                index: bad,
                len: n,
            });
        }
        let (cd, sd) = (tc.data(), ts.data());
        let mut out = vec![T::zero(); m * c];
        let mut arg = vec![0u32; m * c];
        for i in 0..m {
            let nbrs = &index[i * k..(i + 1) * k];
            let orow = &mut out[i * c..(i + 1) * c];
            let arow = &mut arg[i * c..(i + 1) * c];
            orow.copy_from_slice(&sd[nbrs[0] * c..(nbrs[0] + 1) * c]);
            for (slot, &j) in nbrs.iter().enumerate().skip(1) {
                let srow = &sd[j * c..(j + 1) * c];
                for ch in 0..c {
                    if srow[ch] > orow[ch] {
                        orow[ch] = srow[ch];
                        arow[ch] = slot as u32;
                    }
                }
            }
            for ch in 0..c {
                orow[ch] = orow[ch] + cd[i * c + ch];
            }
        }
        let out = Tensor::new(vec![m, c], out)?;
        Ok(self.push(
            out,
            Op::GatherMax {
                center,
                source,
                index,
                k,
                argmax: arg,
            },
            &[center, source],
        ))
    }

    /// Weighted row blend: `out[i] = Σ_j weights[i,j] · source[index[i,j]]`.
    pub fn interpolate(&mut self, source: Var, index: Arc<Vec<usize>>, weights: Arc<Vec<T>>, k: usize) -> Result<Var> {
        let ts = self.value(source);
        if ts.shape().len() != 2 || k == 0 || !index.len().is_multiple_of(k) || weights.len() != index.len() {
            return Err(shape_err(
                "interpolate",
                format!("source {:?}, {} indices, {} weights, k={k}", ts.shape(), index.len(), weights.len()),
            ));
        }
        let (n, c) = (ts.rows(), ts.cols());
        let m = index.len() / k;
        let mut out = vec![T::zero(); m * c];
        for i in 0..m {
            let orow = &mut out[i * c..(i + 1) * c];
            for j in 0..k {
                let src = index[i * k + j];
                if src >= n {
                    return Err(Error::Index {
                        op: "interpolate",
                        index: src,
                        len: n,
                    });
                }
                let w = weights[i * k + j];
                for (o, &s) in orow.iter_mut().zip(ts.row(src)) {
                    *o = *o + w * s;
                }
            }
        }
        let out = Tensor::new(vec![m, c], out)?;
        Ok(self.push(
            out,
            Op::Interpolate {
                source,
                index,
                weights,
                k,
            },
            &[source],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::full(vec![1], s), Op::Sum(x), &[x])
    }

    /// Softmax over the class axis followed by the per-class binary
    /// cross-entropy against one-hot labels, summed over classes and reduced
    /// over points:
    /// `−Σ_c [a_c log s_c + (1 − a_c) log(1 − s_c)]`.
    pub fn softmax_bce(&mut self, logits: Var, labels: &[usize], reduction: LossReduction) -> Result<Var> {
        let t = self.value(logits);
        let c = t.cols();
        let n = t.len() / c;
        if labels.len() != n {
            return Err(shape_err("softmax_bce", format!("{n} rows vs {} labels", labels.len())));
        }
        if c < 2 {
            return Err(shape_err("softmax_bce", "need at least 2 classes".into()));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let norm = match reduction {
            LossReduction::Mean => T::one() / T::of_usize(n),
            LossReduction::Sum => T::one(),
        };
        let mut total = T::zero();
        let mut dlogits = vec![T::zero(); n * c];
        let mut log_s = vec![T::zero(); c];
        let mut log_not = vec![T::zero(); c];
        let mut s = vec![T::zero(); c];
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Index {
                    op: "softmax_bce",
                    index: y,
                    len: c,
                });
            }
            let z = t.row(i);
            let top = (0..c).fold(0, |b, o| if z[o] > z[b] { o } else { b });
            let m = z[top];
            // lse = m + log1p(rest), kept split so log s of the top class keeps its precision
            let rest: T = (0..c).filter(|&o| o != top).map(|o| (z[o] - m).exp()).sum();
            let lse_rel = rest.ln_1p();
            for ch in 0..c {
                log_s[ch] = z[ch] - m - lse_rel;
                s[ch] = log_s[ch].exp();
                log_not[ch] = if log_s[ch] < -T::of(std::f64::consts::LN_2) {
                    (-s[ch]).ln_1p()
                } else {
                    let others: T = (0..c).filter(|&o| o != ch).map(|o| (z[o] - m).exp()).sum();
                    others.ln() - lse_rel
                };
            }
            let mut loss = -log_s[y];
            for ch in 0..c {
                if ch != y {
                    loss = loss - log_not[ch];
                }
            }
            total = total + loss;
            // odds_c = s_c / (1 − s_c)
            let mut odds_sum = T::zero();
            for ch in 0..c {
                if ch != y {
                    odds_sum = odds_sum + (log_s[ch] - log_not[ch]).exp();
                }
            }
            let drow = &mut dlogits[i * c..(i + 1) * c];
            for ch in 0..c {
                let onehot = if ch == y { T::one() } else { T::zero() };
                let mut g = s[ch] - onehot - s[ch] * odds_sum;
                if ch != y {
                    g = g + (log_s[ch] - log_not[ch]).exp();
                }
                drow[ch] = g * norm;
            }
        }
        let value = Tensor::full(vec![1], total * norm);
        Ok(self.push(value, Op::SoftmaxBce { logits, dlogits }, &[logits]))
    }

    /// `Σ w_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum", format!("non-scalar term {:?}", t.shape())));
            }
            total = total + w * t.data()[0];
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::full(vec![1], total), Op::WeightedSum(terms.to_vec()), &inputs))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // Leaves requiring grad but never reached get explicit zeros.
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (k, n) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.len() / k;
                if self.requires_grad(*x) {
                    let dx = kernels::matmul_bt(g, tw.data(), rows, n, k);
                    self.accumulate(grads, *x, |s| add_into(s, &dx));
                }
                if self.requires_grad(*w) {
                    let dw = kernels::matmul_at(tx.data(), g, rows, k, n);
                    self.accumulate(grads, *w, |s| add_into(s, &dw));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |s| add_into(s, g));
                let c = out.cols();
                self.accumulate(grads, *b, |s| {
                    for row in g.chunks(c) {
                        add_into(s, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| {
                    s.iter_mut().zip(g).for_each(|(d, &v)| *d = *d - v);
                });
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, |s| {
                    s.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v * *f);
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, |s| {
                    for ((d, &v), &xv) in s.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *d = *d + v;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.len() / total;
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    self.accumulate(grads, *p, |s| {
                        for r in 0..rows {
                            add_into(&mut s[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(x, start, end) => {
                let c = self.value(*x).cols();
                let w = end - start;
                let rows = out.len() / w;
                self.accumulate(grads, *x, |s| {
                    for r in 0..rows {
                        add_into(&mut s[r * c + start..r * c + end], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::SliceRows(x, start, end) => {
                let t = self.value(*x);
                let stride = t.len() / t.rows();
                self.accumulate(grads, *x, |s| add_into(&mut s[start * stride..end * stride], g));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |s| add_into(s, g)),
            Op::GatherRows(x, index) => {
                let c = self.value(*x).cols();
                self.accumulate(grads, *x, |s| {
                    for (i, &src) in index.iter().enumerate() {
                        add_into(&mut s[src * c..(src + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::MaxOverNeighbors(x, arg) => {
                let sh = self.value(*x).shape();
                let (k, c) = (sh[1], sh[2]);
                self.accumulate(grads, *x, |s| {
                    for (pos, (&gv, &a)) in g.iter().zip(arg).enumerate() {
                        let (i, ch) = (pos / c, pos % c);
                        let idx = (i * k + a as usize) * c + ch;
                        s[idx] = s[idx] + gv;
                    }
                });
            }
            Op::GatherMax {
                center,
                source,
                index,
                k,
                argmax,
            } => {
                self.accumulate(grads, *center, |s| add_into(s, g));
                let c = out.cols();
                self.accumulate(grads, *source, |s| {
                    for (pos, (&gv, &a)) in g.iter().zip(argmax).enumerate() {
                        let (i, ch) = (pos / c, pos % c);
                        let j = index[i * k + a as usize];
                        s[j * c + ch] = s[j * c + ch] + gv;
                    }
                });
            }
            Op::Interpolate {
                source,
                index,
                weights,
                k,
            } => {
                let c = out.cols();
                self.accumulate(grads, *source, |s| {
                    for (pos, (&src, &w)) in index.iter().zip(weights.iter()).enumerate() {
                        let i = pos / k;
                        let grow = &g[i * c..(i + 1) * c];
                        for (d, &gv) in s[src * c..(src + 1) * c].iter_mut().zip(grow) {
                            *d = *d + w * gv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|d| *d = *d + gv));
            }
            Op::SoftmaxBce { logits, dlogits } => {
                let gv = g[0];
                self.accumulate(grads, *logits, |s| {
                    s.iter_mut().zip(dlogits).for_each(|(d, &v)| *d = *d + gv * v);
                });
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, |s| s[0] = s[0] + w * g[0]);
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 0.0]]));
        let w = tape.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        let x = tape.constant(t(&[vec![1.0, 2.0]]));
        let w = tape.constant(t(&[vec![1.0], vec![1.0]]));
        let b = tape.constant(Tensor::full(vec![1], 0.5));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);

        let x = tape.constant(Tensor::zeros(vec![4, 3]));
        let w = tape.constant(Tensor::zeros(vec![2, 5]));
        assert!(matches!(tape.matmul(x, w), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);

        let z = tape.constant(Tensor::full(vec![4], -3.0));
        let r = tape.relu(z);
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_orders_columns_and_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[vec![1.0], vec![2.0]]), true);
        let b = tape.leaf(t(&[vec![3.0], vec![4.0]]), true);
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 2.0, 4.0]);
        let single = tape.concat(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));

        let w = tape.constant(t(&[vec![1.0], vec![10.0]]));
        let y = tape.matmul(c, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap(), &[10.0, 10.0]);

        let odd = tape.constant(Tensor::zeros(vec![3, 1]));
        assert!(tape.concat(&[a, odd]).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let b = tape.constant(t(&[vec![7.0], vec![8.0]]));
        let c = tape.concat(&[a, b]).unwrap();
        let a2 = tape.slice_cols(c, 0, 3).unwrap();
        let b2 = tape.slice_cols(c, 3, 4).unwrap();
        assert_eq!(tape.value(a2), tape.value(a));
        assert_eq!(tape.value(b2), tape.value(b));
    }

    #[test]
    fn max_over_neighbors_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3, 1], vec![1.0, 5.0, 3.0]).unwrap(), true);
        let (m, arg) = tape.max_over_neighbors(x).unwrap();
        assert_eq!(tape.value(m).data(), &[5.0]);
        assert_eq!(arg, vec![1]);

        let eq = tape.leaf(Tensor::full(vec![1, 4, 2], 2.0), true);
        let (m2, _) = tape.max_over_neighbors(eq).unwrap();
        let s = tape.sum(m2);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(eq).unwrap(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let one = tape.constant(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let (m3, _) = tape.max_over_neighbors(one).unwrap();
        assert_eq!(tape.value(m3).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0], vec![2.0], vec![3.0]]), true);
        let same = tape.gather_rows(x, Arc::new(vec![0, 1, 2])).unwrap();
        assert_eq!(tape.value(same), tape.value(x));
        let y = tape.gather_rows(x, Arc::new(vec![2, 2])).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 2.0]);
        assert!(matches!(
            tape.gather_rows(x, Arc::new(vec![3])),
            Err(Error::Index { index: 3, len: 3, .. })
        ));
    }

    #[test]
    fn backward_basics() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let unused = tape.leaf(Tensor::full(vec![2], 5.0), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(unused).unwrap(), &[0.0, 0.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gather_max_equals_materialised_max() {
        let mut tape = Tape::new();
        let center = tape.leaf(t(&[vec![0.5, -1.0], vec![2.0, 0.0]]), true);
        let source = tape.leaf(t(&[vec![1.0, 4.0], vec![3.0, -2.0], vec![0.0, 0.0]]), true);
        let idx = Arc::new(vec![0, 1, 2, 1, 2, 0]);
        let fused = tape.gather_max(center, source, idx.clone(), 3).unwrap();
        let gathered = tape.gather_neighbors(source, idx, 3).unwrap();
        let rep = tape.gather_neighbors(center, Arc::new(vec![0, 0, 0, 1, 1, 1]), 3).unwrap();
        let sum = tape.add(gathered, rep).unwrap();
        let (reference, _) = tape.max_over_neighbors(sum).unwrap();
        assert_eq!(tape.value(fused), tape.value(reference));
    }

    #[test]
    fn softmax_bce_uniform_two_classes() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![1, 2]));
        let l = tape.softmax_bce(z, &[1], LossReduction::Mean).unwrap();
        let expected = 2.0 * std::f64::consts::LN_2;
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-12);
        assert!(tape.softmax_bce(z, &[2], LossReduction::Mean).is_err());
        let nan = tape.constant(Tensor::full(vec![1, 2], f64::NAN));
        assert!(matches!(tape.softmax_bce(nan, &[0], LossReduction::Mean), Err(Error::NonFinite(_))));
    }
}
