//! Eager tape autodiff over dense f64 matrices.
//!
//! A `Graph` records every operation as it is evaluated; `backward` walks
//! the tape in reverse and accumulates gradients, which can then be
//! exported per parameter name. Shape mismatches are programming errors
//! and panic; conditions a caller can legitimately hit (fully masked
//! softmax row, missing parameter) are `Result`s.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;

use super::tensor::{Parameters, Tensor};

#[derive(Debug)]
pub enum NnError {
    /// Softmax over a row whose entries are all masked out.
    FullyMasked { row: usize },
    /// A model asked for a parameter the store does not hold.
    MissingParam(String),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::FullyMasked { row } => write!(f, "softmax row {row} is fully masked"),
            NnError::MissingParam(name) => write!(f, "missing parameter {name}"),
        }
    }
}

impl std::error::Error for NnError {}

/// Handle to a node in one specific graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Add a [1, c] row vector to every row.
    AddRow(usize, usize),
    /// Multiply every row elementwise by a [1, c] row vector.
    MulRow(usize, usize),
    ScaleConst(usize, f64),
    /// Multiply by a [1, 1] graph scalar.
    ScaleVar(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Ln(usize),
    /// Row-wise softmax with an additive {0, -inf} mask baked in.
    MaskedSoftmax { x: usize },
    /// Per-column standardization over rows.
    InstanceNorm { x: usize, eps: f64 },
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    /// Mean of rows from..to, a [1, c] result.
    MeanRows { x: usize, from: usize, to: usize },
    MeanAll(usize),
    SelectRow { x: usize, row: usize },
    SliceRows { x: usize, from: usize, to: usize },
    SelectEntry { x: usize, row: usize, col: usize },
    /// Copy of x with row `row` incremented by the [1, c] vector b.
    AddToRow { x: usize, row: usize, b: usize },
    /// Relative-position scores: out[i][j] = q[i] . table[buckets[i*cols+j]].
    RelPos { q: usize, table: usize, buckets: Vec<usize>, cols: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf: no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf, cached by name: repeated leases return the same node
    /// so gradients from every use accumulate together.
    pub fn param(&mut self, params: &Parameters, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value =
            params.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))?.clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).matmul(self.val(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.val(a), self.val(row));
        assert!(r.rows == 1 && r.cols == x.cols, "add_row needs a matching [1, c] vector");
        let mut value = x.clone();
        for i in 0..value.rows {
            for j in 0..value.cols {
                value.data[i * value.cols + j] += r.data[j];
            }
        }
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.val(a), self.val(row));
        assert!(r.rows == 1 && r.cols == x.cols, "mul_row needs a matching [1, c] vector");
        let mut value = x.clone();
        for i in 0..value.rows {
            for j in 0..value.cols {
                value.data[i * value.cols + j] *= r.data[j];
            }
        }
        self.push(value, Op::MulRow(a.0, row.0))
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let value = self.val(a).map(|x| k * x);
        self.push(value, Op::ScaleConst(a.0, k))
    }

    pub fn scale_var(&mut self, a: Var, s: Var) -> Var {
        let k = self.val(s).item();
        let value = self.val(a).map(|x| k * x);
        self.push(value, Op::ScaleVar(a.0, s.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::ln);
        self.push(value, Op::Ln(a.0))
    }

    /// Row-wise softmax of `a + mask`, where `mask` entries are 0 or -inf.
    /// The max is subtracted per row before exponentiation. A row with no
    /// unmasked entry is an error.
    pub fn masked_softmax(&mut self, a: Var, mask: &Tensor) -> Result<Var, NnError> {
        let x = self.val(a);
        assert!(x.same_shape(mask), "mask shape mismatch");
        let mut value = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..x.cols {
                let z = x.get(i, j) + mask.get(i, j);
                if z > mx {
                    mx = z;
                }
            }
            if !mx.is_finite() {
                return Err(NnError::FullyMasked { row: i });
            }
            let mut sum = 0.0;
            for j in 0..x.cols {
                let z = x.get(i, j) + mask.get(i, j);
                let e = if z.is_finite() { (z - mx).exp() } else { 0.0 };
                value.set(i, j, e);
                sum += e;
            }
            for j in 0..x.cols {
                value.set(i, j, value.get(i, j) / sum);
            }
        }
        Ok(self.push(value, Op::MaskedSoftmax { x: a.0 }))
    }

    /// Standardizes each column over the rows: (x - mean) / sqrt(var + eps),
    /// with the biased variance.
    pub fn instance_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.val(a);
        let r = x.rows as f64;
        let mut value = Tensor::zeros(x.rows, x.cols);
        for j in 0..x.cols {
            let mean = (0..x.rows).map(|i| x.get(i, j)).sum::<f64>() / r;
            let var = (0..x.rows).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / r;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..x.rows {
                value.set(i, j, (x.get(i, j) - mean) * inv);
            }
        }
        self.push(value, Op::InstanceNorm { x: a.0, eps })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.rows, y.rows, "concat_cols row mismatch");
        let mut value = Tensor::zeros(x.rows, x.cols + y.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                value.set(i, j, x.get(i, j));
            }
            for j in 0..y.cols {
                value.set(i, x.cols + j, y.get(i, j));
            }
        }
        self.push(value, Op::ConcatCols(a.0, b.0))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.cols, y.cols, "concat_rows column mismatch");
        let mut data = Vec::with_capacity((x.rows + y.rows) * x.cols);
        data.extend_from_slice(&x.data);
        data.extend_from_slice(&y.data);
        let value = Tensor::from_vec(x.rows + y.rows, x.cols, data);
        self.push(value, Op::ConcatRows(a.0, b.0))
    }

    pub fn mean_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let x = self.val(a);
        assert!(from < to && to <= x.rows, "mean_rows range out of bounds");
        let mut value = Tensor::zeros(1, x.cols);
        for i in from..to {
            for j in 0..x.cols {
                value.data[j] += x.get(i, j);
            }
        }
        let k = (to - from) as f64;
        for v in &mut value.data {
            *v /= k;
        }
        self.push(value, Op::MeanRows { x: a.0, from, to })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let value = Tensor::scalar(x.data.iter().sum::<f64>() / x.data.len() as f64);
        self.push(value, Op::MeanAll(a.0))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let x = self.val(a);
        assert!(row < x.rows, "select_row out of bounds");
        let mut value = Tensor::zeros(1, x.cols);
        value.data.copy_from_slice(&x.data[row * x.cols..(row + 1) * x.cols]);
        self.push(value, Op::SelectRow { x: a.0, row })
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let x = self.val(a);
        assert!(from < to && to <= x.rows, "slice_rows range out of bounds");
        let mut value = Tensor::zeros(to - from, x.cols);
        value.data.copy_from_slice(&x.data[from * x.cols..to * x.cols]);
        self.push(value, Op::SliceRows { x: a.0, from, to })
    }

    pub fn select_entry(&mut self, a: Var, row: usize, col: usize) -> Var {
        let x = self.val(a);
        assert!(row < x.rows && col < x.cols, "select_entry out of bounds");
        let value = Tensor::scalar(x.get(row, col));
        self.push(value, Op::SelectEntry { x: a.0, row, col })
    }

    pub fn add_to_row(&mut self, a: Var, row: usize, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert!(y.rows == 1 && y.cols == x.cols && row < x.rows, "add_to_row shape mismatch");
        let mut value = x.clone();
        for j in 0..value.cols {
            value.data[row * value.cols + j] += y.data[j];
        }
        self.push(value, Op::AddToRow { x: a.0, row, b: b.0 })
    }

    /// Pairwise scores against a bucketed embedding table:
    /// out[i][j] = q[i] . table[buckets[i * cols + j]].
    pub fn relpos_scores(&mut self, q: Var, table: Var, buckets: &[usize], cols: usize) -> Var {
        let (qv, tv) = (self.val(q), self.val(table));
        assert_eq!(qv.cols, tv.cols, "relpos dims mismatch");
        assert_eq!(buckets.len(), qv.rows * cols, "relpos bucket matrix mismatch");
        assert!(buckets.iter().all(|&b| b < tv.rows), "relpos bucket out of range");
        let mut value = Tensor::zeros(qv.rows, cols);
        for i in 0..qv.rows {
            for j in 0..cols {
                let b = buckets[i * cols + j];
                let mut s = 0.0;
                for d in 0..qv.cols {
                    s += qv.get(i, d) * tv.get(b, d);
                }
                value.set(i, j, s);
            }
        }
        self.push(value, Op::RelPos { q: q.0, table: table.0, buckets: buckets.to_vec(), cols })
    }

    fn add_grad(&mut self, id: usize, g: Tensor) {
        match &mut self.grads[id] {
            Some(acc) => acc.add_scaled(&g, 1.0),
            slot => *slot = Some(g),
        }
    }

    /// Reverse pass from a [1, 1] loss node. Gradients stay in the graph
    /// until exported; calling backward again restarts accumulation.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            self.val(loss).rows == 1 && self.val(loss).cols == 1,
            "backward needs a scalar loss"
        );
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            // Detach this node's gradient while descendants accumulate into
            // earlier slots, then restore it for export.
            let Some(g) = self.grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul(&self.nodes[b].value.transpose());
                    let db = self.nodes[a].value.transpose().matmul(&g);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let da = g.transpose();
                    self.add_grad(a, da);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.zip_map(&self.nodes[b].value, |x, y| x * y);
                    let db = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::AddRow(a, r) => {
                    let (a, r) = (*a, *r);
                    let mut dr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            dr.data[j] += g.get(i, j);
                        }
                    }
                    self.add_grad(a, g.clone());
                    self.add_grad(r, dr);
                }
                Op::MulRow(a, r) => {
                    let (a, r) = (*a, *r);
                    let av = &self.nodes[a].value;
                    let rv = &self.nodes[r].value;
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    let mut dr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            da.set(i, j, g.get(i, j) * rv.data[j]);
                            dr.data[j] += g.get(i, j) * av.get(i, j);
                        }
                    }
                    self.add_grad(a, da);
                    self.add_grad(r, dr);
                }
                Op::ScaleConst(a, k) => {
                    let (a, k) = (*a, *k);
                    self.add_grad(a, g.map(|x| k * x));
                }
                Op::ScaleVar(a, s) => {
                    let (a, s) = (*a, *s);
                    let k = self.nodes[s].value.item();
                    let av = &self.nodes[a].value;
                    let ds = g.data.iter().zip(&av.data).map(|(&gi, &ai)| gi * ai).sum();
                    self.add_grad(a, g.map(|x| k * x));
                    self.add_grad(s, Tensor::scalar(ds));
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.nodes[id].value, |gi, y| gi * (1.0 - y * y));
                    self.add_grad(a, da);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.nodes[id].value, |gi, y| gi * y * (1.0 - y));
                    self.add_grad(a, da);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let da =
                        g.zip_map(&self.nodes[a].value, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    self.add_grad(a, da);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.nodes[a].value, |gi, x| gi / x);
                    self.add_grad(a, da);
                }
                Op::MaskedSoftmax { x } => {
                    let x = *x;
                    let y = &self.nodes[id].value;
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let dot: f64 =
                            (0..y.cols).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..y.cols {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    self.add_grad(x, da);
                }
                Op::InstanceNorm { x, eps } => {
                    let (x, eps) = (*x, *eps);
                    let xv = &self.nodes[x].value;
                    let y = &self.nodes[id].value;
                    let r = xv.rows as f64;
                    let mut da = Tensor::zeros(xv.rows, xv.cols);
                    for j in 0..xv.cols {
                        let mean = (0..xv.rows).map(|i| xv.get(i, j)).sum::<f64>() / r;
                        let var =
                            (0..xv.rows).map(|i| (xv.get(i, j) - mean).powi(2)).sum::<f64>() / r;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = (0..xv.rows).map(|i| g.get(i, j)).sum::<f64>() / r;
                        let gy_mean =
                            (0..xv.rows).map(|i| g.get(i, j) * y.get(i, j)).sum::<f64>() / r;
                        for i in 0..xv.rows {
                            let v = inv * (g.get(i, j) - g_mean - y.get(i, j) * gy_mean);
                            da.set(i, j, v);
                        }
                    }
                    self.add_grad(x, da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.nodes[a].value.cols;
                    let cb = self.nodes[b].value.cols;
                    let mut da = Tensor::zeros(g.rows, ca);
                    let mut db = Tensor::zeros(g.rows, cb);
                    for i in 0..g.rows {
                        for j in 0..ca {
                            da.set(i, j, g.get(i, j));
                        }
                        for j in 0..cb {
                            db.set(i, j, g.get(i, ca + j));
                        }
                    }
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let ra = self.nodes[a].value.rows;
                    let rb = self.nodes[b].value.rows;
                    let cols = g.cols;
                    let da = Tensor::from_vec(ra, cols, g.data[..ra * cols].to_vec());
                    let db = Tensor::from_vec(rb, cols, g.data[ra * cols..].to_vec());
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::MeanRows { x, from, to } => {
                    let (x, from, to) = (*x, *from, *to);
                    let xv = &self.nodes[x].value;
                    let k = (to - from) as f64;
                    let mut da = Tensor::zeros(xv.rows, xv.cols);
                    for i in from..to {
                        for j in 0..xv.cols {
                            da.set(i, j, g.data[j] / k);
                        }
                    }
                    self.add_grad(x, da);
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let xv = &self.nodes[a].value;
                    let k = g.item() / (xv.rows * xv.cols) as f64;
                    self.add_grad(a, Tensor::full(xv.rows, xv.cols, k));
                }
                Op::SelectRow { x, row } => {
                    let (x, row) = (*x, *row);
                    let xv = &self.nodes[x].value;
                    let mut da = Tensor::zeros(xv.rows, xv.cols);
                    for j in 0..xv.cols {
                        da.set(row, j, g.data[j]);
                    }
                    self.add_grad(x, da);
                }
                Op::SliceRows { x, from, to } => {
                    let (x, from, to) = (*x, *from, *to);
                    let xv = &self.nodes[x].value;
                    let mut da = Tensor::zeros(xv.rows, xv.cols);
                    for i in from..to {
                        for j in 0..xv.cols {
                            da.set(i, j, g.get(i - from, j));
                        }
                    }
                    self.add_grad(x, da);
                }
                Op::SelectEntry { x, row, col } => {
                    let (x, row, col) = (*x, *row, *col);
                    let xv = &self.nodes[x].value;
                    let mut da = Tensor::zeros(xv.rows, xv.cols);
                    da.set(row, col, g.item());
                    self.add_grad(x, da);
                }
                Op::AddToRow { x, row, b } => {
                    let (x, row, b) = (*x, *row, *b);
                    let mut db = Tensor::zeros(1, g.cols);
                    for j in 0..g.cols {
                        db.data[j] = g.get(row, j);
                    }
                    self.add_grad(x, g.clone());
                    self.add_grad(b, db);
                }
                Op::RelPos { q, table, buckets, cols } => {
                    let (q, table) = (*q, *table);
                    let buckets = buckets.clone();
                    let cols = *cols;
                    let qv = self.nodes[q].value.clone();
                    let tv = self.nodes[table].value.clone();
                    let mut dq = Tensor::zeros(qv.rows, qv.cols);
                    let mut dt = Tensor::zeros(tv.rows, tv.cols);
                    for i in 0..qv.rows {
                        for j in 0..cols {
                            let b = buckets[i * cols + j];
                            let gij = g.get(i, j);
                            for d in 0..qv.cols {
                                dq.data[i * qv.cols + d] += gij * tv.get(b, d);
                                dt.data[b * tv.cols + d] += gij * qv.get(i, d);
                            }
                        }
                    }
                    self.add_grad(q, dq);
                    self.add_grad(table, dt);
                }
            }
            self.grads[id] = Some(g);
        }
    }

    /// Gradient of a specific node after `backward` (zeros if unreached).
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(self.val(v).rows, self.val(v).cols),
        }
    }

    /// Per-parameter gradients after `backward`, keyed by name.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &var) in &self.params {
            out.insert(name.clone(), self.grad(var));
        }
        out
    }
}

/// Central-difference validation of d(loss)/d(param) for every parameter
/// entry, used by the test suites. `build` must evaluate the same scalar
/// loss on whatever store it is handed.
pub fn fd_check(params: &Parameters, tol: f64, build: impl Fn(&Parameters, &mut Graph) -> Var) {
    let mut g = Graph::new();
    let loss = build(params, &mut g);
    g.backward(loss);
    let grads = g.param_grads();
    let h = 1e-4;
    for (name, tensor) in params {
        // Parameters the build closure never leased have no gradient path.
        let Some(analytic) = grads.get(name) else { continue };
        for idx in 0..tensor.data.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data[idx] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data[idx] -= h;
            let mut gp = Graph::new();
            let vp = build(&plus, &mut gp);
            let fp = gp.value(vp).item();
            let mut gm = Graph::new();
            let vm = build(&minus, &mut gm);
            let fm = gm.value(vm).item();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < tol, "{name}[{idx}]: analytic {a} vs numeric {numeric} (rel {rel})");
        }
    }
}
