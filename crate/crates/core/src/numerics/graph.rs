//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Ops append a node recording
//! their inputs and whatever activations the backward rule needs; `backward`
//! walks the node list once in reverse.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::rng::derive_rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Column range of an embedding row that a slot contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub width: usize,
}

/// Per-pair lookup into a relation embedding table.
///
/// Entry `(i, j, k)` is the table row used for slot `k` of pair `(i, j)`, or
/// [`PairIndex::NONE`] when the slot is absent (zero vector). Slot `k` only
/// reads and writes the columns of `segments[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    pub rows: usize,
    pub cols: usize,
    pub segments: Vec<Segment>,
    ids: Vec<u32>,
}

impl PairIndex {
    pub const NONE: u32 = u32::MAX;

    pub fn new(rows: usize, cols: usize, segments: Vec<Segment>, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != rows * cols * segments.len() {
            return Err(Error::ShapeMismatch {
                op: "pair_index",
                left: vec![rows, cols, segments.len()],
                right: vec![ids.len()],
            });
        }
        Ok(PairIndex {
            rows,
            cols,
            segments,
            ids,
        })
    }

    #[inline]
    pub fn slots(&self) -> usize {
        self.segments.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u32 {
        self.ids[(i * self.cols + j) * self.segments.len() + k]
    }

    pub fn max_id(&self) -> Option<u32> {
        self.ids.iter().copied().filter(|&v| v != Self::NONE).max()
    }

    pub fn width(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.start + s.width)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    Pick(Var, usize),
    MaxRows(Var, Vec<usize>),
    MatVecMix(Var, Var),
    RelScores(Var, Var, Arc<PairIndex>),
    RelMix(Var, Var, Arc<PairIndex>),
    Lstm { pre: Var, c_prev: Var, gates: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A compute graph. Confined to one thread; parameters are read from a shared store.
pub struct Graph<'s> {
    nodes: Vec<Node>,
    store: Option<&'s ParamStore>,
    param_vars: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
    grads: Vec<Vec<f64>>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, train: bool, rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            store: Some(store),
            param_vars: vec![None; store.len()],
            train,
            rng,
            grads: Vec::new(),
            consumed: false,
        }
    }

    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval(store: &'s ParamStore) -> Self {
        Self::new(store, false, derive_rng(0, "eval", 0))
    }

    /// Graph without a parameter store, for standalone tensor maths.
    pub fn standalone(train: bool, rng: ChaCha8Rng) -> Graph<'static> {
        Graph {
            nodes: Vec::new(),
            store: None,
            param_vars: Vec::new(),
            train,
            rng,
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = &self.nodes[v.0];
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape is consistent")
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        Error::ShapeMismatch {
            op,
            left: vec![ar, ac],
            right: vec![br, bc],
        }
    }

    // ---- leaves ----

    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                left: vec![rows, cols],
                right: vec![value.len()],
            });
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let t = store.get(id);
        let (r, c) = t.dims2();
        let v = self.push(r, c, t.data().to_vec(), Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, &bb) in orow.iter_mut().zip(brow) {
                        *o += x * bb;
                    }
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bv[j * k..(j + 1) * k];
                    out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMulT(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(c, r, out, Op::Transpose(a), ng)
    }

    /// Fully connected layer `x · w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(self.mismatch("add_row", a, b));
        }
        let bv = &self.nodes[b.0].value;
        let out = self.nodes[a.0]
            .value
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::AddRow(a, b), ng))
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::ShapeMismatch {
            op: "add_n",
            left: vec![],
            right: vec![],
        })?;
        let shape = self.shape(first);
        let mut out = vec![0.0; shape.0 * shape.1];
        let mut ng = false;
        for &v in vars {
            if self.shape(v) != shape {
                return Err(self.mismatch("add_n", first, v));
            }
            out.iter_mut()
                .zip(&self.nodes[v.0].value)
                .for_each(|(o, x)| *o += x);
            ng |= self.ng(v);
        }
        Ok(self.push(shape.0, shape.1, out, Op::AddN(vars.to_vec()), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("sub", a, b));
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Scale(a, factor), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a);
        self.push(r, c, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    // ---- normalisation ----

    fn check_mask(&self, op: &'static str, a: Var, mask: Option<&[bool]>) -> Result<()> {
        let (_, c) = self.shape(a);
        match mask {
            Some(m) if m.len() != c => Err(Error::ShapeMismatch {
                op,
                left: vec![c],
                right: vec![m.len()],
            }),
            Some(m) if !m.iter().any(|&b| b) => Err(Error::Config(format!(
                "{op}: mask leaves no valid entry"
            ))),
            _ => Ok(()),
        }
    }

    /// Row-wise softmax. Entries where `mask` is false get exactly zero probability.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask("softmax", a, mask)?;
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        let av = &self.nodes[a.0].value;
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let keep = |j: usize| mask.map_or(true, |m| m[j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    z += e;
                }
            }
            out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= z);
        }
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::Softmax(a), ng))
    }

    /// Row-wise log-softmax; masked entries are `-inf`.
    pub fn log_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask("log_softmax", a, mask)?;
        let (r, c) = self.shape(a);
        let mut out = vec![f64::NEG_INFINITY; r * c];
        let av = &self.nodes[a.0].value;
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let keep = |j: usize| mask.map_or(true, |m| m[j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c)
                .filter(|&j| keep(j))
                .map(|j| (row[j] - max).exp())
                .sum();
            let lse = max + z.ln();
            for j in 0..c {
                if keep(j) {
                    out[i * c + j] = row[j] - lse;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::LogSoftmax(a), ng))
    }

    /// Row-wise layer normalisation with affine `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != (1, c) {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout: identity in eval mode, survivors scaled by `1/(1-rate)` in train mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let (r, c) = self.shape(a);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Samples an inverted-dropout mask of the given shape without applying it (for masks
    /// shared across time steps). Returns `None` in eval mode.
    pub fn dropout_mask(&mut self, rows: usize, cols: usize, rate: f64) -> Option<Vec<f64>> {
        if !self.train || rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        Some(
            (0..rows * cols)
                .map(|_| {
                    if self.rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(mask.len(), r * c, "dropout mask shape");
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Dropout(a, mask), ng)
    }

    // ---- indexing and reshaping ----

    /// Embedding lookup: one output row per id.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, c) = self.shape(table);
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "gather row",
                    index: id,
                    len: rows,
                });
            }
            out.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(ids.len(), c, out, Op::Gather(table, ids.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let r = self.shape(vars[0]).0;
        for &v in vars {
            if self.shape(v).0 != r {
                return Err(self.mismatch("concat_cols", vars[0], v));
            }
        }
        let total: usize = vars.iter().map(|&v| self.shape(v).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &v in vars {
                let c = self.shape(v).1;
                out.extend_from_slice(&self.nodes[v.0].value[i * c..(i + 1) * c]);
            }
        }
        let ng = vars.iter().any(|&v| self.ng(v));
        Ok(self.push(r, total, out, Op::ConcatCols(vars.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let c = self.shape(vars[0]).1;
        for &v in vars {
            if self.shape(v).1 != c {
                return Err(self.mismatch("concat_rows", vars[0], v));
            }
        }
        let total: usize = vars.iter().map(|&v| self.shape(v).0).sum();
        let mut out = Vec::with_capacity(total * c);
        for &v in vars {
            out.extend_from_slice(&self.nodes[v.0].value);
        }
        let ng = vars.iter().any(|&v| self.ng(v));
        Ok(self.push(total, c, out, Op::ConcatRows(vars.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::IndexOutOfRange {
                what: "slice_cols end",
                index: start + len,
                len: c,
            });
        }
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::IndexOutOfRange {
                what: "slice_rows end",
                index: start + len,
                len: r,
            });
        }
        let out = self.nodes[a.0].value[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(len, c, out, Op::SliceRows(a, start), ng))
    }

    pub fn row_of(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, 1)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Scalar at flat position `idx`.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let len = self.nodes[a.0].value.len();
        if idx >= len {
            return Err(Error::IndexOutOfRange {
                what: "pick",
                index: idx,
                len,
            });
        }
        let v = self.nodes[a.0].value[idx];
        let ng = self.ng(a);
        Ok(self.push(1, 1, vec![v], Op::Pick(a, idx), ng))
    }

    /// Column-wise maximum over rows, giving a single row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(Error::IndexOutOfRange {
                what: "max_rows on empty",
                index: 0,
                len: 0,
            });
        }
        let av = &self.nodes[a.0].value;
        let mut arg = vec![0usize; c];
        let mut out = av[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                if av[i * c + j] > out[j] {
                    out[j] = av[i * c + j];
                    arg[j] = i;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(1, c, out, Op::MaxRows(a, arg), ng))
    }

    /// `weights (1×m) · matrix (m×n)`; same as `matmul` but kept separate so
    /// pointer mixtures read clearly in traces.
    pub fn mix(&mut self, weights: Var, matrix: Var) -> Result<Var> {
        let (one, m) = self.shape(weights);
        let (m2, n) = self.shape(matrix);
        if one != 1 || m != m2 {
            return Err(self.mismatch("mix", weights, matrix));
        }
        let wv = &self.nodes[weights.0].value;
        let mv = &self.nodes[matrix.0].value;
        let mut out = vec![0.0; n];
        for j in 0..m {
            let w = wv[j];
            for (o, x) in out.iter_mut().zip(&mv[j * n..(j + 1) * n]) {
                *o += w * x;
            }
        }
        let ng = self.ng(weights) || self.ng(matrix);
        Ok(self.push(1, n, out, Op::MatVecMix(weights, matrix), ng))
    }

    // ---- relation-aware attention terms ----

    /// `out[i][j] = Σ_k q[i][seg_k] · table[id(i,j,k)][seg_k]`
    pub fn rel_scores(&mut self, q: Var, table: Var, index: &Arc<PairIndex>) -> Result<Var> {
        let (n, w) = self.shape(q);
        let (trows, tw) = self.shape(table);
        if n != index.rows || w != tw || index.width() > w {
            return Err(self.mismatch("rel_scores", q, table));
        }
        if let Some(max) = index.max_id() {
            if max as usize >= trows {
                return Err(Error::IndexOutOfRange {
                    what: "relation id",
                    index: max as usize,
                    len: trows,
                });
            }
        }
        let m = index.cols;
        let qv = &self.nodes[q.0].value;
        let tv = &self.nodes[table.0].value;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let qrow = &qv[i * w..(i + 1) * w];
            for j in 0..m {
                let mut s = 0.0;
                for (k, seg) in index.segments.iter().enumerate() {
                    let id = index.get(i, j, k);
                    if id == PairIndex::NONE {
                        continue;
                    }
                    let base = id as usize * w;
                    for c in seg.start..seg.start + seg.width {
                        s += qrow[c] * tv[base + c];
                    }
                }
                out[i * m + j] = s;
            }
        }
        let ng = self.ng(q) || self.ng(table);
        Ok(self.push(n, m, out, Op::RelScores(q, table, Arc::clone(index)), ng))
    }

    /// `out[i][seg_k] = Σ_j alpha[i][j] · table[id(i,j,k)][seg_k]`
    pub fn rel_mix(&mut self, alpha: Var, table: Var, index: &Arc<PairIndex>) -> Result<Var> {
        let (n, m) = self.shape(alpha);
        let (trows, w) = self.shape(table);
        if n != index.rows || m != index.cols || index.width() > w {
            return Err(self.mismatch("rel_mix", alpha, table));
        }
        if let Some(max) = index.max_id() {
            if max as usize >= trows {
                return Err(Error::IndexOutOfRange {
                    what: "relation id",
                    index: max as usize,
                    len: trows,
                });
            }
        }
        let av = &self.nodes[alpha.0].value;
        let tv = &self.nodes[table.0].value;
        let mut out = vec![0.0; n * w];
        for i in 0..n {
            let orow = &mut out[i * w..(i + 1) * w];
            for j in 0..m {
                let a = av[i * m + j];
                if a == 0.0 {
                    continue;
                }
                for (k, seg) in index.segments.iter().enumerate() {
                    let id = index.get(i, j, k);
                    if id == PairIndex::NONE {
                        continue;
                    }
                    let base = id as usize * w;
                    for c in seg.start..seg.start + seg.width {
                        orow[c] += a * tv[base + c];
                    }
                }
            }
        }
        let ng = self.ng(alpha) || self.ng(table);
        Ok(self.push(n, w, out, Op::RelMix(alpha, table, Arc::clone(index)), ng))
    }

    // ---- recurrent cell ----

    /// LSTM cell on pre-activations `pre = [i f g o]` (rows × 4h); returns `[h c]` (rows × 2h).
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Result<Var> {
        let (r, c4) = self.shape(pre);
        let h = c4 / 4;
        if c4 % 4 != 0 || self.shape(c_prev) != (r, h) {
            return Err(self.mismatch("lstm_cell", pre, c_prev));
        }
        let pv = &self.nodes[pre.0].value;
        let cv = &self.nodes[c_prev.0].value;
        let mut gates = vec![0.0; r * 4 * h];
        let mut out = vec![0.0; r * 2 * h];
        for row in 0..r {
            let p = &pv[row * 4 * h..(row + 1) * 4 * h];
            let g = &mut gates[row * 4 * h..(row + 1) * 4 * h];
            for u in 0..h {
                let ig = sigmoid(p[u]);
                let fg = sigmoid(p[h + u]);
                let gg = p[2 * h + u].tanh();
                let og = sigmoid(p[3 * h + u]);
                g[u] = ig;
                g[h + u] = fg;
                g[2 * h + u] = gg;
                g[3 * h + u] = og;
                let c = fg * cv[row * h + u] + ig * gg;
                out[row * 2 * h + h + u] = c;
                out[row * 2 * h + u] = og * c.tanh();
            }
        }
        let ng = self.ng(pre) || self.ng(c_prev);
        Ok(self.push(r, 2 * h, out, Op::Lstm { pre, c_prev, gates }, ng))
    }

    // ---- backward ----

    fn grad_slot(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let g = &mut self.grads[v.0];
        if g.is_empty() {
            g.resize(node.value.len(), 0.0);
        }
        Some(g)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`. Fails when called twice.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(vec![r, c]));
        }
        self.consumed = true;
        self.grads = vec![Vec::new(); self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients::default());
        }
        self.grads[loss.0] = vec![1.0];

        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[idx]);
            self.backprop_node(idx, &g);
            self.grads[idx] = g;
        }

        let mut out = Gradients::default();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                let g = &self.grads[v.0];
                if !g.is_empty() {
                    out.by_param.insert(ParamId(pid), g.clone());
                }
            }
        }
        Ok(out)
    }

    /// Gradient of the last loss with respect to `v` (after `backward`).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .get(v.0)
            .filter(|g| !g.is_empty())
            .map(Vec::as_slice)
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Temporarily move the op out so we can borrow self mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
        match &op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.ng(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if self.ng(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let gb = self.grad_slot(*b).unwrap();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gg) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gg;
                            }
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.ng(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for (o, y) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *o += gg * y;
                            }
                        }
                    }
                }
                if self.ng(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let gb = self.grad_slot(*b).unwrap();
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for (o, x) in gb[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *o += gg * x;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.grad_slot(*a) {
                    // node is cols×rows of the input; input is rows'×cols' = cols×rows
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.grad_slot(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::AddN(vars) => {
                for &v in vars {
                    if let Some(gv) = self.grad_slot(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.grad_slot(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = self.grad_slot(*b) {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_slot(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = self.grad_slot(*b) {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *o += x * y;
                    }
                }
                if self.ng(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let gb = self.grad_slot(*b).unwrap();
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(&av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                if let Some(ga) = self.grad_slot(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += f * x);
                }
            }
            Op::Relu(a) => {
                if self.ng(*a) {
                    let y = self.nodes[idx].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for ((o, x), yv) in ga.iter_mut().zip(g).zip(&y) {
                        if *yv > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.ng(*a) {
                    let y = self.nodes[idx].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for ((o, x), yv) in ga.iter_mut().zip(g).zip(&y) {
                        *o += x * (1.0 - yv * yv);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.ng(*a) {
                    let y = self.nodes[idx].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for ((o, x), yv) in ga.iter_mut().zip(g).zip(&y) {
                        *o += x * yv * (1.0 - yv);
                    }
                }
            }
            Op::Log(a) => {
                if self.ng(*a) {
                    let av = self.nodes[a.0].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for ((o, x), xv) in ga.iter_mut().zip(g).zip(&av) {
                        *o += x / xv;
                    }
                }
            }
            Op::Softmax(a) => {
                if self.ng(*a) {
                    let y = self.nodes[idx].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..cols {
                            ga[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.ng(*a) {
                    let y = self.nodes[idx].value.clone();
                    let ga = self.grad_slot(*a).unwrap();
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let total: f64 = (0..cols)
                            .filter(|&j| yr[j].is_finite())
                            .map(|j| gr[j])
                            .sum();
                        for j in 0..cols {
                            if yr[j].is_finite() {
                                ga[i * cols + j] += gr[j] - yr[j].exp() * total;
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[gain.0].value.clone();
                if let Some(gg) = self.grad_slot(*gain) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gg[j] += g[i * cols + j] * xhat[i * cols + j];
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(*bias) {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
                if let Some(gx) = self.grad_slot(*x) {
                    let n = cols as f64;
                    for i in 0..rows {
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let dxh: Vec<f64> = (0..cols).map(|j| g[i * cols + j] * gv[j]).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let inv = inv_std[i];
                        for j in 0..cols {
                            gx[i * cols + j] += inv / n * (n * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.grad_slot(*a) {
                    for ((o, x), m) in ga.iter_mut().zip(g).zip(mask) {
                        *o += x * m;
                    }
                }
            }
            Op::Gather(table, ids) => {
                if let Some(gt) = self.grad_slot(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, x) in gt[id * cols..(id + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                        {
                            *o += x;
                        }
                    }
                }
            }
            Op::ConcatCols(vars) => {
                let mut offset = 0;
                for &v in vars {
                    let vc = self.shape(v).1;
                    if let Some(gv) = self.grad_slot(v) {
                        for i in 0..rows {
                            for (o, x) in gv[i * vc..(i + 1) * vc]
                                .iter_mut()
                                .zip(&g[i * cols + offset..i * cols + offset + vc])
                            {
                                *o += x;
                            }
                        }
                    }
                    offset += vc;
                }
            }
            Op::ConcatRows(vars) => {
                let mut offset = 0;
                for &v in vars {
                    let len = self.nodes[v.0].value.len();
                    if let Some(gv) = self.grad_slot(v) {
                        gv.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(o, x)| *o += x);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = self.shape(*a).1;
                let start = *start;
                if let Some(ga) = self.grad_slot(*a) {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * ac + start + j] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let start = *start;
                if let Some(ga) = self.grad_slot(*a) {
                    ga[start * cols..(start + rows) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::Sum(a) => {
                let gs = g[0];
                if let Some(ga) = self.grad_slot(*a) {
                    ga.iter_mut().for_each(|o| *o += gs);
                }
            }
            Op::Pick(a, i) => {
                let i = *i;
                if let Some(ga) = self.grad_slot(*a) {
                    ga[i] += g[0];
                }
            }
            Op::MaxRows(a, arg) => {
                let ac = self.shape(*a).1;
                if let Some(ga) = self.grad_slot(*a) {
                    for (j, &i) in arg.iter().enumerate() {
                        ga[i * ac + j] += g[j];
                    }
                }
            }
            Op::MatVecMix(w, m) => {
                let (mrows, n) = self.shape(*m);
                if self.ng(*w) {
                    let mv = self.nodes[m.0].value.clone();
                    let gw = self.grad_slot(*w).unwrap();
                    for j in 0..mrows {
                        gw[j] += mv[j * n..(j + 1) * n].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if self.ng(*m) {
                    let wv = self.nodes[w.0].value.clone();
                    let gm = self.grad_slot(*m).unwrap();
                    for j in 0..mrows {
                        for (o, x) in gm[j * n..(j + 1) * n].iter_mut().zip(g) {
                            *o += wv[j] * x;
                        }
                    }
                }
            }
            Op::RelScores(q, table, index) => {
                let w = self.shape(*q).1;
                let m = index.cols;
                if self.ng(*q) {
                    let tv = self.nodes[table.0].value.clone();
                    let gq = self.grad_slot(*q).unwrap();
                    for i in 0..rows {
                        for j in 0..m {
                            let gg = g[i * m + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for (k, seg) in index.segments.iter().enumerate() {
                                let id = index.get(i, j, k);
                                if id == PairIndex::NONE {
                                    continue;
                                }
                                let base = id as usize * w;
                                for c in seg.start..seg.start + seg.width {
                                    gq[i * w + c] += gg * tv[base + c];
                                }
                            }
                        }
                    }
                }
                if self.ng(*table) {
                    let qv = self.nodes[q.0].value.clone();
                    let gt = self.grad_slot(*table).unwrap();
                    for i in 0..rows {
                        for j in 0..m {
                            let gg = g[i * m + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for (k, seg) in index.segments.iter().enumerate() {
                                let id = index.get(i, j, k);
                                if id == PairIndex::NONE {
                                    continue;
                                }
                                let base = id as usize * w;
                                for c in seg.start..seg.start + seg.width {
                                    gt[base + c] += gg * qv[i * w + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::RelMix(alpha, table, index) => {
                let m = index.cols;
                let w = cols;
                if self.ng(*alpha) {
                    let tv = self.nodes[table.0].value.clone();
                    let ga = self.grad_slot(*alpha).unwrap();
                    for i in 0..rows {
                        let grow = &g[i * w..(i + 1) * w];
                        for j in 0..m {
                            let mut s = 0.0;
                            for (k, seg) in index.segments.iter().enumerate() {
                                let id = index.get(i, j, k);
                                if id == PairIndex::NONE {
                                    continue;
                                }
                                let base = id as usize * w;
                                for c in seg.start..seg.start + seg.width {
                                    s += grow[c] * tv[base + c];
                                }
                            }
                            ga[i * m + j] += s;
                        }
                    }
                }
                if self.ng(*table) {
                    let av = self.nodes[alpha.0].value.clone();
                    let gt = self.grad_slot(*table).unwrap();
                    for i in 0..rows {
                        let grow = &g[i * w..(i + 1) * w];
                        for j in 0..m {
                            let a = av[i * m + j];
                            if a == 0.0 {
                                continue;
                            }
                            for (k, seg) in index.segments.iter().enumerate() {
                                let id = index.get(i, j, k);
                                if id == PairIndex::NONE {
                                    continue;
                                }
                                let base = id as usize * w;
                                for c in seg.start..seg.start + seg.width {
                                    gt[base + c] += a * grow[c];
                                }
                            }
                        }
                    }
                }
            }
            Op::Lstm { pre, c_prev, gates } => {
                let h = cols / 2;
                let cp = self.nodes[c_prev.0].value.clone();
                let out = self.nodes[idx].value.clone();
                let mut dpre = vec![0.0; rows * 4 * h];
                let mut dcp = vec![0.0; rows * h];
                for r in 0..rows {
                    let gt = &gates[r * 4 * h..(r + 1) * 4 * h];
                    for u in 0..h {
                        let (ig, fg, gg, og) = (gt[u], gt[h + u], gt[2 * h + u], gt[3 * h + u]);
                        let c = out[r * 2 * h + h + u];
                        let tc = c.tanh();
                        let dh = g[r * 2 * h + u];
                        let dc = g[r * 2 * h + h + u] + dh * og * (1.0 - tc * tc);
                        dpre[r * 4 * h + u] = dc * gg * ig * (1.0 - ig);
                        dpre[r * 4 * h + h + u] = dc * cp[r * h + u] * fg * (1.0 - fg);
                        dpre[r * 4 * h + 2 * h + u] = dc * ig * (1.0 - gg * gg);
                        dpre[r * 4 * h + 3 * h + u] = dh * tc * og * (1.0 - og);
                        dcp[r * h + u] = dc * fg;
                    }
                }
                if let Some(gp) = self.grad_slot(*pre) {
                    gp.iter_mut().zip(&dpre).for_each(|(o, x)| *o += x);
                }
                if let Some(gc) = self.grad_slot(*c_prev) {
                    gc.iter_mut().zip(&dcp).for_each(|(o, x)| *o += x);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}
