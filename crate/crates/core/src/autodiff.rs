//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every op appends a node holding its forward value. Nodes are only ever
//! appended, so creation order is a topological order and `backward` walks
//! the tape once in reverse.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::kernels::{self, GruCache};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    Interleave(Var, Var),
    Gather(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(f64, f64)>,
    },
    Attention {
        qkv: Var,
        segments: Vec<Range<usize>>,
        heads: usize,
        probs: Vec<f64>,
        offsets: Vec<usize>,
    },
    GruStep {
        x: Var,
        h: Var,
        w: GruWeights,
        caches: Vec<GruCache>,
    },
    GruSeq {
        x: Var,
        w: GruWeights,
        segments: Vec<Range<usize>>,
        caches: Vec<GruCache>,
    },
}

/// Tape handles for the four GRU parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    /// `[d_in x 3d]`
    pub w_x: Var,
    /// `[d x 3d]`
    pub w_h: Var,
    /// `[3d]`
    pub b_x: Var,
    /// `[3d]`
    pub b_h: Var,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => Tensor::new(self.shapes[var.0].clone(), g.clone()).expect("congruent gradient"),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn check_segments(segments: &[Range<usize>], rows: usize) -> Result<()> {
    let mut prev = 0;
    for s in segments {
        if s.start < prev || s.end > rows || s.start >= s.end {
            return Err(Error::Contract(format!(
                "segments must be ordered, non-empty and within {rows} rows"
            )));
        }
        prev = s.end;
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf node. Gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a trainable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let value = store.tensor(id).clone();
        self.push("param", value, Op::Param, true)
    }

    /// Binds every parameter of the store, indexed by [`ParamId`].
    pub fn bind_all(&mut self, store: &ParamStore) -> Result<Vec<Var>> {
        (0..store.len()).map(|i| self.param(store, ParamId(i))).collect()
    }

    /// Copy of `var` cut off from the gradient flow.
    pub fn detach(&mut self, var: Var) -> Result<Var> {
        let value = self.value(var).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    /// `x * W + b` with `x: [m x k]`, `W: [k x n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || self.value(x).cols() != ws[0] {
            return Err(Error::shape("linear", xs, ws));
        }
        let (k, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.value(b).numel() != n {
                return Err(Error::shape("linear bias", ws, self.shape(b)));
            }
        }
        let m = self.value(x).rows();
        let mut out = vec![0.0; m * n];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            for i in 0..m {
                kernels::affine_row(&xv[i * k..(i + 1) * k], wv, bv, &mut out[i * n..(i + 1) * n]);
            }
        }
        let mut vars = vec![x, w];
        vars.extend(b);
        let rg = self.rg(&vars);
        self.push("linear", Tensor::new(vec![m, n], out)?, Op::Linear { x, w, b }, rg)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("minimum", a, b, Op::Minimum(a, b), f64::min)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| f(*v)).collect())?;
        let rg = self.rg(&[a]);
        self.push(name, value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, Op::AddScalar(a), |v| v + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), kernels::relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), kernels::sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map("clamp", a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[a]);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::shape("concat_cols", ta.shape(), tb.shape()));
        }
        let (m, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let rg = self.rg(&[a, b]);
        self.push(
            "concat_cols",
            Tensor::new(vec![m, p + q], out)?,
            Op::ConcatCols(a, b),
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::shape("slice_cols", t.shape(), &[start, end]));
        }
        let m = t.rows();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..end]);
        }
        let rg = self.rg(&[a]);
        self.push(
            "slice_cols",
            Tensor::new(vec![m, end - start], out)?,
            Op::SliceCols(a, start, end),
            rg,
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if rows.is_empty() {
            return Err(Error::Contract("select_rows needs at least one row".into()));
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::OutOfRange {
                    what: "rows",
                    index: r,
                    size: t.rows(),
                });
            }
            out.extend_from_slice(t.row(r));
        }
        let rg = self.rg(&[a]);
        self.push(
            "select_rows",
            Tensor::new(vec![rows.len(), c], out)?,
            Op::SelectRows(a, rows.to_vec()),
            rg,
        )
    }

    /// Rows `[a_0, b_0, a_1, b_1, ...]`.
    pub fn interleave(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("interleave", ta.shape(), tb.shape()));
        }
        let (m, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(2 * m * c);
        for i in 0..m {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let rg = self.rg(&[a, b]);
        self.push(
            "interleave",
            Tensor::new(vec![2 * m, c], out)?,
            Op::Interleave(a, b),
            rg,
        )
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, c) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(Error::Contract("gather needs at least one id".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: id,
                    size: v,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(
            "gather",
            Tensor::new(vec![ids.len(), c], out)?,
            Op::Gather(table, ids.to_vec()),
            rg,
        )
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::shape("pick_per_row", t.shape(), &[idx.len()]));
        }
        let mut out = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            if j >= t.cols() {
                return Err(Error::OutOfRange {
                    what: "columns",
                    index: j,
                    size: t.cols(),
                });
            }
            out.push(t.row(i)[j]);
        }
        let rg = self.rg(&[a]);
        self.push("pick_per_row", Tensor::vector(out), Op::PickPerRow(a, idx.to_vec()), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * c];
        for i in 0..m {
            kernels::log_softmax_row(t.row(i), &mut out[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[a]);
        self.push("log_softmax", Tensor::new(vec![m, c], out)?, Op::LogSoftmax(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, c) = (t.rows(), t.cols());
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape("layer_norm", t.shape(), self.shape(gamma)));
        }
        let mut out = vec![0.0; m * c];
        let mut stats = Vec::with_capacity(m);
        {
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            for i in 0..m {
                stats.push(kernels::layer_norm_row(t.row(i), g, b, &mut out[i * c..(i + 1) * c]));
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            Tensor::new(vec![m, c], out)?,
            Op::LayerNorm { x, gamma, beta, stats },
            rg,
        )
    }

    /// Multi-head causal self-attention over packed `[q | k | v]` rows.
    ///
    /// Rows are grouped into independent `segments`; a row attends to rows of
    /// its own segment at or before itself. Rows outside every segment are an
    /// error. Output is `[n x d]` with `d = cols / 3`.
    pub fn causal_attention(&mut self, qkv: Var, segments: &[Range<usize>], heads: usize) -> Result<Var> {
        let t = self.value(qkv);
        let (n, c) = (t.rows(), t.cols());
        if c % 3 != 0 {
            return Err(Error::shape("causal_attention", t.shape(), &[3]));
        }
        let d = c / 3;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        check_segments(segments, n)?;
        if segments.iter().map(|s| s.len()).sum::<usize>() != n {
            return Err(Error::Contract("segments must cover every row".into()));
        }
        let dh = d / heads;
        let mut out = vec![0.0; n * d];
        let mut offsets = vec![0usize; n];
        let total: usize = segments.iter().map(|s| heads * s.len() * (s.len() + 1) / 2).sum();
        let mut probs = vec![0.0; total];
        let mut cursor = 0;
        let data = t.data();
        for seg in segments {
            for row in seg.clone() {
                offsets[row] = cursor;
                let span = row - seg.start + 1;
                for h in 0..heads {
                    let p = &mut probs[cursor + h * span..cursor + (h + 1) * span];
                    let o = &mut out[row * d + h * dh..row * d + (h + 1) * dh];
                    kernels::attend_row(data, d, seg.start, row, h, dh, p, o);
                }
                cursor += heads * span;
            }
        }
        let rg = self.rg(&[qkv]);
        self.push(
            "causal_attention",
            Tensor::new(vec![n, d], out)?,
            Op::Attention {
                qkv,
                segments: segments.to_vec(),
                heads,
                probs,
                offsets,
            },
            rg,
        )
    }

    fn gru_dims(&self, x: Var, w: &GruWeights) -> Result<(usize, usize)> {
        let wx = self.shape(w.w_x);
        let wh = self.shape(w.w_h);
        if wx.len() != 2 || wh.len() != 2 || wh[1] != 3 * wh[0] || wx[1] != wh[1] {
            return Err(Error::shape("gru weights", wx, wh));
        }
        if self.value(w.b_x).numel() != wx[1] || self.value(w.b_h).numel() != wx[1] {
            return Err(Error::shape("gru bias", wx, self.shape(w.b_x)));
        }
        if self.value(x).cols() != wx[0] {
            return Err(Error::shape("gru input", self.shape(x), wx));
        }
        Ok((wx[0], wh[0]))
    }

    /// One GRU step applied row-wise: `x: [B x d_in]`, `h: [B x d]`.
    pub fn gru_step(&mut self, x: Var, h: Var, w: GruWeights) -> Result<Var> {
        let (din, d) = self.gru_dims(x, &w)?;
        let (tx, th) = (self.value(x), self.value(h));
        if th.cols() != d || th.rows() != tx.rows() {
            return Err(Error::shape("gru hidden", th.shape(), &[tx.rows(), d]));
        }
        let b = tx.rows();
        let mut out = vec![0.0; b * d];
        let mut caches = Vec::with_capacity(b);
        for i in 0..b {
            let mut cache = GruCache::default();
            kernels::gru_cell(
                &tx.data()[i * din..(i + 1) * din],
                th.row(i),
                self.value(w.w_x).data(),
                self.value(w.w_h).data(),
                self.value(w.b_x).data(),
                self.value(w.b_h).data(),
                &mut out[i * d..(i + 1) * d],
                Some(&mut cache),
            );
            caches.push(cache);
        }
        let rg = self.rg(&[x, h, w.w_x, w.w_h, w.b_x, w.b_h]);
        self.push(
            "gru_step",
            Tensor::new(vec![b, d], out)?,
            Op::GruStep { x, h, w, caches },
            rg,
        )
    }

    /// GRU unrolled over each segment of rows, starting from a zero hidden
    /// state per segment. Row `i` of the output is the hidden state after
    /// consuming input row `i`.
    pub fn gru_sequence(&mut self, x: Var, w: GruWeights, segments: &[Range<usize>]) -> Result<Var> {
        let (din, d) = self.gru_dims(x, &w)?;
        let n = self.value(x).rows();
        check_segments(segments, n)?;
        let mut out = vec![0.0; n * d];
        let mut caches = vec![GruCache::default(); n];
        let zeros = vec![0.0; d];
        {
            let xs = self.value(x).data();
            let (wx, wh, bx, bh) = (
                self.value(w.w_x).data(),
                self.value(w.w_h).data(),
                self.value(w.b_x).data(),
                self.value(w.b_h).data(),
            );
            for seg in segments {
                for row in seg.clone() {
                    let prev = if row == seg.start {
                        zeros.clone()
                    } else {
                        out[(row - 1) * d..row * d].to_vec()
                    };
                    kernels::gru_cell(
                        &xs[row * din..(row + 1) * din],
                        &prev,
                        wx,
                        wh,
                        bx,
                        bh,
                        &mut out[row * d..(row + 1) * d],
                        Some(&mut caches[row]),
                    );
                }
            }
        }
        let rg = self.rg(&[x, w.w_x, w.w_h, w.b_x, w.b_h]);
        self.push(
            "gru_sequence",
            Tensor::new(vec![n, d], out)?,
            Op::GruSeq {
                x,
                w,
                segments: segments.to_vec(),
                caches,
            },
            rg,
        )
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires them. Multiple uses of a node accumulate.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        kernels::vec_mat_t_acc(&g[r * n..(r + 1) * n], tb.data(), &mut da[r * k..(r + 1) * k]);
                    }
                    add_into(&mut grads[a.0], &da);
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        kernels::outer_acc(ta.row(r), &g[r * n..(r + 1) * n], &mut db);
                    }
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
                if needs(*x) {
                    let mut dx = vec![0.0; m * k];
                    for r in 0..m {
                        kernels::vec_mat_t_acc(&g[r * n..(r + 1) * n], tw.data(), &mut dx[r * k..(r + 1) * k]);
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if needs(*w) {
                    let mut dw = vec![0.0; k * n];
                    for r in 0..m {
                        kernels::outer_acc(&tx.data()[r * k..(r + 1) * k], &g[r * n..(r + 1) * n], &mut dw);
                    }
                    add_into(&mut grads[w.0], &dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; n];
                        for r in 0..m {
                            for j in 0..n {
                                db[j] += g[r * n + j];
                            }
                        }
                        add_into(&mut grads[b.0], &db);
                    }
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if needs(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    let d: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if needs(*b) {
                    let d: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    let d: Vec<f64> = (0..g.len()).map(|j| if va[j] <= vb[j] { g[j] } else { 0.0 }).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if needs(*b) {
                    let d: Vec<f64> = (0..g.len()).map(|j| if va[j] <= vb[j] { 0.0 } else { g[j] }).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::AddScalar(a) => add_into(&mut grads[a.0], g),
            Op::Tanh(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Exp(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * y).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.value(*a).numel()];
                add_into(&mut grads[a.0], &d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let d = vec![g[0] / n as f64; n];
                add_into(&mut grads[a.0], &d);
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let m = self.value(*a).rows();
                if needs(*a) {
                    let mut d = Vec::with_capacity(m * p);
                    for r in 0..m {
                        d.extend_from_slice(&g[r * (p + q)..r * (p + q) + p]);
                    }
                    add_into(&mut grads[a.0], &d);
                }
                if needs(*b) {
                    let mut d = Vec::with_capacity(m * q);
                    for r in 0..m {
                        d.extend_from_slice(&g[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::SliceCols(a, start, end) => {
                let t = self.value(*a);
                let (m, c, w) = (t.rows(), t.cols(), end - start);
                let mut d = vec![0.0; m * c];
                for r in 0..m {
                    d[r * c + start..r * c + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::SelectRows(a, rows) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += g[k * c + j];
                    }
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::Interleave(a, b) => {
                let t = self.value(*a);
                let (m, c) = (t.rows(), t.cols());
                let mut da = Vec::with_capacity(m * c);
                let mut db = Vec::with_capacity(m * c);
                for r in 0..m {
                    da.extend_from_slice(&g[2 * r * c..(2 * r + 1) * c]);
                    db.extend_from_slice(&g[(2 * r + 1) * c..(2 * r + 2) * c]);
                }
                if needs(*a) {
                    add_into(&mut grads[a.0], &da);
                }
                if needs(*b) {
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Gather(table, ids) => {
                let t = self.value(*table);
                let c = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        d[id * c + j] += g[k * c + j];
                    }
                }
                add_into(&mut grads[table.0], &d);
            }
            Op::PickPerRow(a, idx) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (r, &j) in idx.iter().enumerate() {
                    d[r * c + j] += g[r];
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::LogSoftmax(a) => {
                let t = self.value(*a);
                let (m, c) = (t.rows(), t.cols());
                let mut d = vec![0.0; m * c];
                for r in 0..m {
                    let gr = &g[r * c..(r + 1) * c];
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        d[r * c + j] = gr[j] - out[r * c + j].exp() * total;
                    }
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let t = self.value(*x);
                let (m, c) = (t.rows(), t.cols());
                let gm = self.value(*gamma).data();
                let mut dx = vec![0.0; m * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for r in 0..m {
                    let (mean, rstd) = stats[r];
                    let xr = t.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    for j in 0..c {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gm[j];
                        dg[j] += gr[j] * xhat[j];
                        db[j] += gr[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[r * c + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
                if needs(*x) {
                    add_into(&mut grads[x.0], &dx);
                }
                if needs(*gamma) {
                    add_into(&mut grads[gamma.0], &dg);
                }
                if needs(*beta) {
                    add_into(&mut grads[beta.0], &db);
                }
            }
            Op::Attention {
                qkv,
                segments,
                heads,
                probs,
                offsets,
            } => {
                let t = self.value(*qkv);
                let data = t.data();
                let c = t.cols();
                let d = c / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dqkv = vec![0.0; t.numel()];
                let mut dp = Vec::new();
                for seg in segments {
                    for row in seg.clone() {
                        let span = row - seg.start + 1;
                        for h in 0..*heads {
                            let p = &probs[offsets[row] + h * span..offsets[row] + (h + 1) * span];
                            let gout = &g[row * d + h * dh..row * d + (h + 1) * dh];
                            dp.clear();
                            let mut weighted = 0.0;
                            for (slot, j) in (seg.start..=row).enumerate() {
                                let vo = j * c + 2 * d + h * dh;
                                let mut s = 0.0;
                                for e in 0..dh {
                                    s += gout[e] * data[vo + e];
                                    dqkv[vo + e] += p[slot] * gout[e];
                                }
                                dp.push(s);
                                weighted += p[slot] * s;
                            }
                            let qo = row * c + h * dh;
                            for (slot, j) in (seg.start..=row).enumerate() {
                                let ds = p[slot] * (dp[slot] - weighted) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let ko = j * c + d + h * dh;
                                for e in 0..dh {
                                    dqkv[qo + e] += ds * data[ko + e];
                                    dqkv[ko + e] += ds * data[qo + e];
                                }
                            }
                        }
                    }
                }
                add_into(&mut grads[qkv.0], &dqkv);
            }
            Op::GruStep { x, h, w, caches } => {
                let (tx, th) = (self.value(*x), self.value(*h));
                let (din, d) = (tx.cols(), th.cols());
                let mut bufs = GruGrads::new(self, w, tx.numel(), th.numel());
                for (r, cache) in caches.iter().enumerate() {
                    kernels::gru_cell_backward(
                        &tx.data()[r * din..(r + 1) * din],
                        th.row(r),
                        self.value(w.w_x).data(),
                        self.value(w.w_h).data(),
                        cache,
                        &g[r * d..(r + 1) * d],
                        &mut bufs.dx[r * din..(r + 1) * din],
                        &mut bufs.dh[r * d..(r + 1) * d],
                        &mut bufs.dwx,
                        &mut bufs.dwh,
                        &mut bufs.dbx,
                        &mut bufs.dbh,
                    );
                }
                if needs(*x) {
                    add_into(&mut grads[x.0], &bufs.dx);
                }
                if needs(*h) {
                    add_into(&mut grads[h.0], &bufs.dh);
                }
                bufs.flush(self, w, grads);
            }
            Op::GruSeq { x, w, segments, caches } => {
                let tx = self.value(*x);
                let din = tx.cols();
                let d = node.value.cols();
                let mut bufs = GruGrads::new(self, w, tx.numel(), d);
                let zeros = vec![0.0; d];
                for seg in segments {
                    // running gradient w.r.t. the hidden state after `row`
                    let mut carry = vec![0.0; d];
                    for row in seg.clone().rev() {
                        let mut dout = g[row * d..(row + 1) * d].to_vec();
                        dout.iter_mut().zip(&carry).for_each(|(a, b)| *a += b);
                        let prev = if row == seg.start {
                            &zeros[..]
                        } else {
                            &out[(row - 1) * d..row * d]
                        };
                        bufs.dh.iter_mut().for_each(|v| *v = 0.0);
                        kernels::gru_cell_backward(
                            &tx.data()[row * din..(row + 1) * din],
                            prev,
                            self.value(w.w_x).data(),
                            self.value(w.w_h).data(),
                            &caches[row],
                            &dout,
                            &mut bufs.dx[row * din..(row + 1) * din],
                            &mut bufs.dh,
                            &mut bufs.dwx,
                            &mut bufs.dwh,
                            &mut bufs.dbx,
                            &mut bufs.dbh,
                        );
                        carry.copy_from_slice(&bufs.dh);
                    }
                }
                if needs(*x) {
                    add_into(&mut grads[x.0], &bufs.dx);
                }
                bufs.flush(self, w, grads);
            }
        }
    }
}

struct GruGrads {
    dx: Vec<f64>,
    dh: Vec<f64>,
    dwx: Vec<f64>,
    dwh: Vec<f64>,
    dbx: Vec<f64>,
    dbh: Vec<f64>,
}

impl GruGrads {
    fn new(tape: &Tape, w: &GruWeights, nx: usize, nh: usize) -> Self {
        Self {
            dx: vec![0.0; nx],
            dh: vec![0.0; nh],
            dwx: vec![0.0; tape.value(w.w_x).numel()],
            dwh: vec![0.0; tape.value(w.w_h).numel()],
            dbx: vec![0.0; tape.value(w.b_x).numel()],
            dbh: vec![0.0; tape.value(w.b_h).numel()],
        }
    }

    fn flush(self, tape: &Tape, w: &GruWeights, grads: &mut [Option<Vec<f64>>]) {
        for (var, buf) in [
            (w.w_x, &self.dwx),
            (w.w_h, &self.dwh),
            (w.b_x, &self.dbx),
            (w.b_h, &self.dbh),
        ] {
            if tape.requires_grad(var) {
                add_into(&mut grads[var.0], buf);
            }
        }
    }
}
