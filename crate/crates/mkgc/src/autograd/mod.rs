//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Recording`] is a tape of eagerly evaluated operations. Every
//! [`DiffValue`] is a handle into one recording; [`Recording::backward`]
//! walks the tape in reverse and returns gradients for every registered
//! parameter (zeros for parameters the loss never touched).
//!
//! The op set is exactly what the encoder/decoder losses need: matmul,
//! add, scale, row/column extraction, concatenation, leaky-relu, a
//! stabilized softmax over scalar logits, Euclidean distance, cosine,
//! dot, and the hinge `max(x + margin, 0)`.

mod adam;
mod check;
mod checkpoint;
mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use check::{finite_diff_check, FdCheckReport};
pub use checkpoint::{read_tensor_file, write_tensor_file};
pub use tensor::Tensor;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Handle to a value inside a [`Recording`]. Cheap to copy; only valid
/// for the recording that produced it.
#[derive(Clone, Copy, Debug)]
pub struct DiffValue {
    id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl DiffValue {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    ConcatRows(usize, usize),
    LeakyRelu(usize, f64),
    /// Softmax over scalar logits; output is a `(k, 1)` vector.
    Softmax(Vec<usize>),
    /// Row `i` of the input as a `(1, cols)` value.
    SliceRow(usize, usize),
    /// Column `j` of the input as a `(rows, 1)` value.
    Col(usize, usize),
    L2NormDiff(usize, usize),
    Cosine(usize, usize),
    Dot(usize, usize),
    Hinge(usize, f64),
    /// Elementwise product of same-shape values.
    Mul(usize, usize),
    SumScalars(Vec<usize>),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// A single-threaded tape of operations with a parameter registry.
pub struct Recording {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
}

impl Default for Recording {
    fn default() -> Self {
        Self::new()
    }
}

impl Recording {
    pub fn new() -> Self {
        Recording {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> DiffValue {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        DiffValue { id, rows, cols }
    }

    /// A constant (non-parameter) leaf.
    pub fn constant(&mut self, t: &Tensor) -> DiffValue {
        self.push(Op::Leaf, t.rows, t.cols, t.data.clone())
    }

    pub fn constant_column(&mut self, data: &[f64]) -> DiffValue {
        let n = data.len();
        self.push(Op::Leaf, n, 1, data.to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> DiffValue {
        self.push(Op::Leaf, 1, 1, vec![v])
    }

    /// Register a named parameter leaf. Names must be unique within one
    /// recording; gradients are reported under these names.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<DiffValue> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!(
                "parameter {name:?} registered twice in one recording"
            )));
        }
        let v = self.push(Op::Leaf, t.rows, t.cols, t.data.clone());
        self.params.push((name.to_string(), v.id));
        Ok(v)
    }

    pub fn value(&self, v: DiffValue) -> &[f64] {
        &self.nodes[v.id].value
    }

    pub fn value_tensor(&self, v: DiffValue) -> Tensor {
        Tensor {
            rows: v.rows,
            cols: v.cols,
            data: self.nodes[v.id].value.clone(),
        }
    }

    pub fn scalar_value(&self, v: DiffValue) -> f64 {
        debug_assert!(v.is_scalar());
        self.nodes[v.id].value[0]
    }

    fn shape_err(
        op: &'static str,
        a: DiffValue,
        b: DiffValue,
    ) -> Error {
        Error::ShapeMismatch {
            op,
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        }
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.cols != b.rows {
            return Err(Self::shape_err("matmul", a, b));
        }
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let av = &self.nodes[a.id].value;
        let bv = &self.nodes[b.id].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        Ok(self.push(Op::MatMul(a.id, b.id), m, n, out))
    }

    pub fn add(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.shape() != b.shape() {
            return Err(Self::shape_err("add", a, b));
        }
        let out: Vec<f64> = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a.id, b.id), a.rows, a.cols, out))
    }

    /// `a - b`, composed from scale and add.
    pub fn sub(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn scale(&mut self, a: DiffValue, c: f64) -> DiffValue {
        let out: Vec<f64> = self.nodes[a.id].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a.id, c), a.rows, a.cols, out)
    }

    /// Stack `a` on top of `b`; both must have the same column count.
    pub fn concat_rows(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.cols != b.cols {
            return Err(Self::shape_err("concat_rows", a, b));
        }
        let mut out = self.nodes[a.id].value.clone();
        out.extend_from_slice(&self.nodes[b.id].value);
        Ok(self.push(Op::ConcatRows(a.id, b.id), a.rows + b.rows, a.cols, out))
    }

    pub fn leaky_relu(&mut self, a: DiffValue, slope: f64) -> DiffValue {
        let out: Vec<f64> = self.nodes[a.id]
            .value
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        self.push(Op::LeakyRelu(a.id, slope), a.rows, a.cols, out)
    }

    /// Softmax over scalar logits, max-subtracted for stability. Returns
    /// one scalar handle per input, in order; the weights sum to 1.
    pub fn softmax_over(&mut self, logits: &[DiffValue]) -> Result<Vec<DiffValue>> {
        if logits.is_empty() {
            return Err(Error::invalid("softmax over an empty logit list"));
        }
        for l in logits {
            if !l.is_scalar() {
                return Err(Error::invalid(format!(
                    "softmax input must be scalar, got {}x{}",
                    l.rows, l.cols
                )));
            }
        }
        let raw: Vec<f64> = logits.iter().map(|l| self.scalar_value(*l)).collect();
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let ids = logits.iter().map(|l| l.id).collect();
        let vec = self.push(Op::Softmax(ids), logits.len(), 1, weights);
        Ok((0..logits.len()).map(|i| self.slice_row_inner(vec, i)).collect())
    }

    fn slice_row_inner(&mut self, a: DiffValue, i: usize) -> DiffValue {
        let cols = a.cols;
        let out = self.nodes[a.id].value[i * cols..(i + 1) * cols].to_vec();
        self.push(Op::SliceRow(a.id, i), 1, cols, out)
    }

    /// Row `i` of `a` as a `(1, cols)` value.
    pub fn slice_row(&mut self, a: DiffValue, i: usize) -> Result<DiffValue> {
        if i >= a.rows {
            return Err(Error::invalid(format!(
                "row {i} out of range for {}x{}",
                a.rows, a.cols
            )));
        }
        Ok(self.slice_row_inner(a, i))
    }

    /// Column `j` of `a` as a `(rows, 1)` value.
    pub fn col(&mut self, a: DiffValue, j: usize) -> Result<DiffValue> {
        if j >= a.cols {
            return Err(Error::invalid(format!(
                "column {j} out of range for {}x{}",
                a.rows, a.cols
            )));
        }
        let out: Vec<f64> = (0..a.rows)
            .map(|r| self.nodes[a.id].value[r * a.cols + j])
            .collect();
        Ok(self.push(Op::Col(a.id, j), a.rows, 1, out))
    }

    /// Euclidean distance `||a - b||_2` as a scalar.
    pub fn l2_norm_diff(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.shape() != b.shape() {
            return Err(Self::shape_err("l2_norm_diff", a, b));
        }
        let sq: f64 = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::L2NormDiff(a.id, b.id), 1, 1, vec![sq.sqrt()]))
    }

    /// Cosine similarity of two same-shape values; errors on a zero norm.
    pub fn cosine(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.shape() != b.shape() {
            return Err(Self::shape_err("cosine", a, b));
        }
        let av = &self.nodes[a.id].value;
        let bv = &self.nodes[b.id].value;
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::numeric(
                "cosine of a zero-norm vector; caller must guard".to_string(),
            ));
        }
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Cosine(a.id, b.id), 1, 1, vec![dot / (na * nb)]))
    }

    pub fn dot(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.shape() != b.shape() {
            return Err(Self::shape_err("dot", a, b));
        }
        let d: f64 = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot(a.id, b.id), 1, 1, vec![d]))
    }

    /// `max(x + margin, 0)` for a scalar `x`.
    pub fn hinge(&mut self, x: DiffValue, margin: f64) -> Result<DiffValue> {
        if !x.is_scalar() {
            return Err(Error::invalid(format!(
                "hinge input must be scalar, got {}x{}",
                x.rows, x.cols
            )));
        }
        let v = (self.scalar_value(x) + margin).max(0.0);
        Ok(self.push(Op::Hinge(x.id, margin), 1, 1, vec![v]))
    }

    /// Elementwise product of same-shape values.
    pub fn mul(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        if a.shape() != b.shape() {
            return Err(Self::shape_err("mul", a, b));
        }
        let out: Vec<f64> = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a.id, b.id), a.rows, a.cols, out))
    }

    /// Sum of scalar terms; an empty list yields the constant 0.
    pub fn sum_scalars(&mut self, terms: &[DiffValue]) -> Result<DiffValue> {
        for t in terms {
            if !t.is_scalar() {
                return Err(Error::invalid(format!(
                    "sum_scalars input must be scalar, got {}x{}",
                    t.rows, t.cols
                )));
            }
        }
        let total: f64 = terms.iter().map(|t| self.scalar_value(*t)).sum();
        let ids = terms.iter().map(|t| t.id).collect();
        Ok(self.push(Op::SumScalars(ids), 1, 1, vec![total]))
    }

    /// Reverse pass from a scalar loss. Returns one gradient tensor per
    /// registered parameter; parameters the loss does not reach get zeros.
    pub fn backward(&mut self, loss: DiffValue) -> Result<BTreeMap<String, Tensor>> {
        if !loss.is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let grad = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &grad, &mut adj);
            // Parameters keep their accumulated adjoint for collection below.
            if self.params.iter().any(|(_, pid)| *pid == id) {
                adj[id] = Some(grad);
            }
        }

        let mut out = BTreeMap::new();
        for (name, pid) in &self.params {
            let node = &self.nodes[*pid];
            let data = match adj[*pid].take() {
                Some(g) => g,
                None => vec![0.0; node.value.len()],
            };
            out.insert(
                name.clone(),
                Tensor {
                    rows: node.rows,
                    cols: node.cols,
                    data,
                },
            );
        }
        Ok(out)
    }

    fn accumulate(adj: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, id: usize, grad: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let n = self.nodes[*b].cols;
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                Self::accumulate(adj, *a, m * k, |da| {
                    // dA += dC * B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += acc;
                        }
                    }
                });
                Self::accumulate(adj, *b, k * n, |db| {
                    // dB += A^T * dC
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * grad[i * n + j];
                            }
                            db[p * n + j] += acc;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for src in [*a, *b] {
                    Self::accumulate(adj, src, grad.len(), |d| {
                        for (x, g) in d.iter_mut().zip(grad) {
                            *x += g;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                Self::accumulate(adj, *a, grad.len(), |d| {
                    for (x, g) in d.iter_mut().zip(grad) {
                        *x += c * g;
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let alen = self.nodes[*a].value.len();
                Self::accumulate(adj, *a, alen, |d| {
                    for (x, g) in d.iter_mut().zip(&grad[..alen]) {
                        *x += g;
                    }
                });
                let blen = self.nodes[*b].value.len();
                Self::accumulate(adj, *b, blen, |d| {
                    for (x, g) in d.iter_mut().zip(&grad[alen..]) {
                        *x += g;
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let input = &self.nodes[*a].value;
                let slope = *slope;
                Self::accumulate(adj, *a, input.len(), |d| {
                    for i in 0..input.len() {
                        let factor = if input[i] >= 0.0 { 1.0 } else { slope };
                        d[i] += factor * grad[i];
                    }
                });
            }
            Op::Softmax(inputs) => {
                let w = &node.value;
                let dotted: f64 = grad.iter().zip(w).map(|(g, wi)| g * wi).sum();
                for (i, src) in inputs.iter().enumerate() {
                    let gi = w[i] * (grad[i] - dotted);
                    Self::accumulate(adj, *src, 1, |d| d[0] += gi);
                }
            }
            Op::SliceRow(a, i) => {
                let cols = self.nodes[*a].cols;
                let len = self.nodes[*a].value.len();
                Self::accumulate(adj, *a, len, |d| {
                    for (j, g) in grad.iter().enumerate() {
                        d[i * cols + j] += g;
                    }
                });
            }
            Op::Col(a, j) => {
                let cols = self.nodes[*a].cols;
                let len = self.nodes[*a].value.len();
                Self::accumulate(adj, *a, len, |d| {
                    for (r, g) in grad.iter().enumerate() {
                        d[r * cols + j] += g;
                    }
                });
            }
            Op::L2NormDiff(a, b) => {
                let norm = node.value[0];
                if norm == 0.0 {
                    // Subgradient 0 at the non-differentiable point.
                    return;
                }
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let g = grad[0];
                Self::accumulate(adj, *a, av.len(), |d| {
                    for i in 0..av.len() {
                        d[i] += g * (av[i] - bv[i]) / norm;
                    }
                });
                Self::accumulate(adj, *b, bv.len(), |d| {
                    for i in 0..bv.len() {
                        d[i] -= g * (av[i] - bv[i]) / norm;
                    }
                });
            }
            Op::Cosine(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let cosv = node.value[0];
                let g = grad[0];
                Self::accumulate(adj, *a, av.len(), |d| {
                    for i in 0..av.len() {
                        d[i] += g * (bv[i] / (na * nb) - cosv * av[i] / (na * na));
                    }
                });
                Self::accumulate(adj, *b, bv.len(), |d| {
                    for i in 0..bv.len() {
                        d[i] += g * (av[i] / (na * nb) - cosv * bv[i] / (nb * nb));
                    }
                });
            }
            Op::Dot(a, b) => {
                let av = self.nodes[*a].value.clone();
                let bv = &self.nodes[*b].value;
                let g = grad[0];
                Self::accumulate(adj, *a, bv.len(), |d| {
                    for (x, y) in d.iter_mut().zip(bv) {
                        *x += g * y;
                    }
                });
                Self::accumulate(adj, *b, av.len(), |d| {
                    for (x, y) in d.iter_mut().zip(&av) {
                        *x += g * y;
                    }
                });
            }
            Op::Hinge(a, margin) => {
                let x = self.nodes[*a].value[0];
                if x + margin > 0.0 {
                    let g = grad[0];
                    Self::accumulate(adj, *a, 1, |d| d[0] += g);
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[*a].value.clone();
                let bv = &self.nodes[*b].value;
                Self::accumulate(adj, *a, bv.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += grad[i] * bv[i];
                    }
                });
                Self::accumulate(adj, *b, av.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += grad[i] * av[i];
                    }
                });
            }
            Op::SumScalars(inputs) => {
                let g = grad[0];
                for src in inputs {
                    Self::accumulate(adj, *src, 1, |d| d[0] += g);
                }
            }
        }
    }
}
