//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! activations its backward rule needs. [`Tape::backward`] walks the record
//! in reverse and returns the gradient of a `1×1` loss with respect to every
//! [`Parameter`] that was read onto the tape.
//!
//! Parameters live in a [`ParamStore`] outside the tape, so one store can
//! feed many independent tapes (one per graph in a batch).

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix, Trans};

pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Ordered, uniquely named collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// `grad += scale * g` for every parameter reached in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::shape(
                "ParamStore::accumulate",
                format!("{} gradients for {} parameters", grads.grads.len(), self.params.len()),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                p.grad.add_scaled_assign(g, scale);
            }
        }
        Ok(())
    }

    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

/// Per-parameter gradients of one backward pass; `None` for parameters the
/// loss does not depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Scalar gradient at flat index `idx` of parameter `id` (zero if unreached).
    pub fn coordinate(&self, id: ParamId, idx: usize) -> f64 {
        self.get(id).map_or(0.0, |g| g.as_slice()[idx])
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    /// `aᵀ · b`
    MatMulTN(Var, Var),
    Add(Var, Var),
    /// Adds a `1×c` row to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    /// Column sums, `r×c → 1×c`.
    SumRows(Var),
    MeanRows(Var),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Flatten(Var),
    Sum(Var),
    /// `-ln max(p[label], floor)` for a `1×C` probability row.
    Nll {
        x: Var,
        label: usize,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Lower clamp applied to probabilities inside the log of the NLL.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant (no gradient is reported for it).
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "matmul_tn",
                format!("{:?}ᵀ x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = Matrix::zeros(av.cols(), bv.cols());
        gemm(av, Trans::Yes, bv, Trans::No, &mut out, false);
        Ok(self.push(out, Op::MatMulTN(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("cannot broadcast {:?} over {:?}", rv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).softmax_rows()?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    /// Per-row standardization followed by `gain ⊙ · + bias` (both `1×c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain {:?} and bias {:?} for input {:?}",
                    self.shape(gain),
                    self.shape(bias),
                    (r, c)
                ),
            ));
        }
        let xv = self.value(x);
        let mut normed = Matrix::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in normed.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = normed.clone();
        for i in 0..r {
            for ((o, gj), bj) in out.row_mut(i).iter_mut().zip(g.as_slice()).zip(b.as_slice()) {
                *o = *o * gj + bj;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} | {:?}", av.shape(), bv.shape()),
            ));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Matrix::zeros(av.rows(), ca + cb);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..ca].copy_from_slice(av.row(r));
            row[ca..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, xv.shape()),
            ));
        }
        let out = Matrix::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Matrix::from_fn(1, xv.cols(), |_, c| (0..xv.rows()).map(|r| xv.get(r, c)).sum());
        self.push(out, Op::SumRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::invalid("mean over zero rows"));
        }
        let n = xv.rows() as f64;
        let out = Matrix::from_fn(1, xv.cols(), |_, c| {
            (0..xv.rows()).map(|r| xv.get(r, c)).sum::<f64>() / n
        });
        Ok(self.push(out, Op::MeanRows(x)))
    }

    /// Column-wise maximum; ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::invalid("max over zero rows"));
        }
        let mut argmax = vec![0usize; xv.cols()];
        let mut out = Matrix::zeros(1, xv.cols());
        for c in 0..xv.cols() {
            let mut best = 0;
            for r in 1..xv.rows() {
                if xv.get(r, c) > xv.get(best, c) {
                    best = r;
                }
            }
            argmax[c] = best;
            out.set(0, c, xv.get(best, c));
        }
        Ok(self.push(out, Op::MaxRows { x, argmax }))
    }

    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {:?}", xv.shape())));
        }
        let mut out = Matrix::zeros(index.len(), xv.cols());
        for (o, &i) in index.iter().enumerate() {
            out.row_mut(o).copy_from_slice(xv.row(i));
        }
        Ok(self.push(out, Op::GatherRows { x, index }))
    }

    /// Row-major reshape to `1 × (r·c)`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Matrix::row_vector(xv.as_slice());
        self.push(out, Op::Flatten(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::row_vector(&[s]), Op::Sum(x))
    }

    pub fn nll(&mut self, probs: Var, label: usize) -> Result<Var> {
        let pv = self.value(probs);
        if pv.rows() != 1 || label >= pv.cols() {
            return Err(Error::invalid(format!(
                "label {label} for probability row of shape {:?}",
                pv.shape()
            )));
        }
        let p = pv.get(0, label).max(PROB_FLOOR);
        Ok(self.push(Matrix::row_vector(&[-p.ln()]), Op::Nll { x: probs, label }))
    }

    /// Gradients of the `1×1` value `loss` with respect to every parameter
    /// read onto this tape. `num_params` sizes the result (usually
    /// `store.len()`).
    pub fn backward(&self, loss: Var, num_params: usize) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward on a value not recorded on this tape"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients {
            grads: vec![None; num_params],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = out
                        .grads
                        .get_mut(*id)
                        .ok_or_else(|| Error::invalid(format!("parameter {id} outside store of {num_params}")))?;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(&g, Trans::No, bv, Trans::Yes, &mut ga, false);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, Trans::Yes, &g, Trans::No, &mut gb, false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(&g, Trans::No, bv, Trans::No, &mut ga, false);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(&g, Trans::Yes, av, Trans::No, &mut gb, false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulTN(a, b) => {
                    // y = aᵀ b: da = b gᵀ, db = a g
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(bv, Trans::No, &g, Trans::Yes, &mut ga, false);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, Trans::No, &g, Trans::No, &mut gb, false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    let gr = column_sums(&g);
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads, *x, g.scale(*s));
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (gv, &v) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = gx.row_mut(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (r, c) = normed.shape();
                    let mut g_gain = Matrix::zeros(1, c);
                    let g_bias = column_sums(&g);
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.row(i);
                        let ni = normed.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dn = 0.0;
                        for j in 0..c {
                            let d = gi[j] * gv.get(0, j);
                            mean_d += d;
                            mean_dn += d * ni[j];
                            g_gain.as_mut_slice()[j] += gi[j] * ni[j];
                        }
                        mean_d /= c as f64;
                        mean_dn /= c as f64;
                        let row = gx.row_mut(i);
                        for j in 0..c {
                            let d = gi[j] * gv.get(0, j);
                            row[j] = inv_std[i] * (d - mean_d - ni[j] * mean_dn);
                        }
                    }
                    accumulate(&mut grads, *gain, g_gain);
                    accumulate(&mut grads, *bias, g_bias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let ga = Matrix::from_fn(g.rows(), ca, |r, c| g.get(r, c));
                    let gb = Matrix::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumRows(x) => {
                    let (r, c) = self.shape(*x);
                    let gx = Matrix::from_fn(r, c, |_, j| g.get(0, j));
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.shape(*x);
                    let n = r as f64;
                    let gx = Matrix::from_fn(r, c, |_, j| g.get(0, j) / n);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxRows { x, argmax } => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    for (j, &i) in argmax.iter().enumerate() {
                        gx.set(i, j, g.get(0, j));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { x, index } => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    for (o, &i) in index.iter().enumerate() {
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Flatten(x) => {
                    let (r, c) = self.shape(*x);
                    accumulate(&mut grads, *x, Matrix::new(r, c, g.into_vec())?);
                }
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Nll { x, label } => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    let p = self.value(*x).get(0, *label);
                    if p >= PROB_FLOOR {
                        gx.set(0, *label, -g.get(0, 0) / p);
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }

        for (id, g) in out.grads.iter().enumerate() {
            if let Some(g) = g {
                g.ensure_finite(&format!("gradient of parameter {id}"))?;
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Scalar loss evaluated through a tape: returns the loss and its gradients.
pub trait Objective {
    fn loss_and_grads(&mut self, store: &ParamStore) -> Result<(f64, Gradients)>;
}

impl<F> Objective for F
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    fn loss_and_grads(&mut self, store: &ParamStore) -> Result<(f64, Gradients)> {
        self(store)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Coordinates to sample; every coordinate is checked when the model is
    /// smaller than this.
    pub coordinates: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are compared absolutely.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            coordinates: 200,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.checked.iter().filter(move |c| c.rel_error > self.tolerance)
    }
}

/// Compares analytic gradients against central differences on a sampled set
/// of parameter coordinates. The store is restored before returning.
pub fn finite_diff_check<O: Objective>(
    store: &mut ParamStore,
    objective: &mut O,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = objective.loss_and_grads(store)?;
    let total = store.num_scalars();
    let mut flat: Vec<(ParamId, usize)> = Vec::with_capacity(total);
    for id in 0..store.len() {
        for i in 0..store.get(id).value.len() {
            flat.push((id, i));
        }
    }
    let chosen: Vec<(ParamId, usize)> = if opts.coordinates >= total {
        flat
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picks: Vec<usize> = sample(&mut rng, total, opts.coordinates).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| flat[i]).collect()
    };

    let mut checked = Vec::with_capacity(chosen.len());
    let mut max_rel_error: f64 = 0.0;
    for (id, i) in chosen {
        let orig = store.get(id).value.as_slice()[i];
        store.get_mut(id).value.as_mut_slice()[i] = orig + opts.step;
        let plus = objective.loss_and_grads(store);
        store.get_mut(id).value.as_mut_slice()[i] = orig - opts.step;
        let minus = objective.loss_and_grads(store);
        store.get_mut(id).value.as_mut_slice()[i] = orig;
        let (plus, minus) = (plus?.0, minus?.0);

        let numeric = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.coordinate(id, i);
        let denom = analytic.abs().max(numeric.abs()).max(opts.denominator_floor);
        let rel_error = (analytic - numeric).abs() / denom;
        max_rel_error = max_rel_error.max(rel_error);
        checked.push(CoordinateCheck {
            param: store.get(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        checked,
        max_rel_error,
        tolerance: opts.tolerance,
    })
}
