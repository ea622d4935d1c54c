//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Define-by-run: each op evaluates eagerly and records itself on a tape.
//! `backward` walks the tape in reverse and accumulates gradients. The op set
//! is exactly what the training objectives here need, nothing more.

use crate::tensor::Matrix;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// n x m plus a 1 x m row vector broadcast down the rows.
    AddRowVec(Var, Var),
    /// n x m plus an n x 1 column vector broadcast across the columns.
    AddColVec(Var, Var),
    /// n x m times an n x 1 column vector, row i scaled by v[i].
    MulColVec(Var, Var),
    /// n x m times a 1 x m row vector, column j scaled by v[j].
    MulRowVec(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    SumAll(Var),
    SumCols(Var),
    SumRows(Var),
    GatherRows(Var, Vec<usize>),
    GatherPerRow(Var, Vec<usize>),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    /// Forward value is the stored hard sample; gradients pass to the soft parent.
    StraightThrough(Var),
}

pub struct Graph {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    grads: Vec<Option<Matrix>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { values: Vec::new(), ops: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Insert a leaf. Parameters and constants alike: gradients accumulate on
    /// every leaf, callers read back only the ones they care about.
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// Zero matrix if the node was never reached.
    pub fn grad(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.values[v.0].rows(), self.values[v.0].cols()),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row_vec(&mut self, a: Var, row: Var) -> Var {
        let (m, r) = (&self.values[a.0], &self.values[row.0]);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), m.cols());
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.get(i, j) + r.get(0, j));
            }
        }
        self.push(out, Op::AddRowVec(a, row))
    }

    pub fn add_col_vec(&mut self, a: Var, col: Var) -> Var {
        let (m, c) = (&self.values[a.0], &self.values[col.0]);
        assert_eq!(c.cols(), 1);
        assert_eq!(c.rows(), m.rows());
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.get(i, j) + c.get(i, 0));
            }
        }
        self.push(out, Op::AddColVec(a, col))
    }

    pub fn mul_col_vec(&mut self, a: Var, col: Var) -> Var {
        let (m, c) = (&self.values[a.0], &self.values[col.0]);
        assert_eq!(c.cols(), 1);
        assert_eq!(c.rows(), m.rows());
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.get(i, j) * c.get(i, 0));
            }
        }
        self.push(out, Op::MulColVec(a, col))
    }

    pub fn mul_row_vec(&mut self, a: Var, row: Var) -> Var {
        let (m, r) = (&self.values[a.0], &self.values[row.0]);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), m.cols());
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.get(i, j) * r.get(0, j));
            }
        }
        self.push(out, Op::MulRowVec(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].matmul(&self.values[b.0]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.values[a.0].transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.values[a.0].softmax_rows();
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.values[a.0].data().iter().sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].data().len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = &self.values[a.0];
        let mut out = Matrix::zeros(m.rows(), 1);
        for i in 0..m.rows() {
            out.set(i, 0, m.row(i).iter().sum());
        }
        self.push(out, Op::SumCols(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = &self.values[a.0];
        let mut out = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out.set(0, j, out.get(0, j) + m.get(i, j));
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Mean over the rows of `a`, a 1 x cols result.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.values[a.0].rows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Stack rows `idx` of a table (V x d) into an n x d matrix.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = &self.values[table.0];
        let mut out = Matrix::zeros(idx.len(), t.cols());
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push(out, Op::GatherRows(table, idx.to_vec()))
    }

    /// From an n x V matrix pick element (i, idx[i]) into an n x 1 column.
    pub fn gather_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = &self.values[a.0];
        assert_eq!(idx.len(), m.rows());
        let mut out = Matrix::zeros(m.rows(), 1);
        for (i, &c) in idx.iter().enumerate() {
            out.set(i, 0, m.get(i, c));
        }
        self.push(out, Op::GatherPerRow(a, idx.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(x.rows(), y.rows());
        let mut out = Matrix::zeros(x.rows(), x.cols() + y.cols());
        for i in 0..x.rows() {
            out.row_mut(i)[..x.cols()].copy_from_slice(x.row(i));
            out.row_mut(i)[x.cols()..].copy_from_slice(y.row(i));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.values[parts[0].0].cols();
        let total: usize = parts.iter().map(|p| self.values[p.0].rows()).sum();
        let mut out = Matrix::zeros(total, cols);
        let mut at = 0;
        for p in parts {
            let m = &self.values[p.0];
            assert_eq!(m.cols(), cols);
            for i in 0..m.rows() {
                out.row_mut(at + i).copy_from_slice(m.row(i));
            }
            at += m.rows();
        }
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Straight-through estimator: forward value is `hard`, gradients flow to
    /// `soft` unchanged. Shapes must match.
    pub fn straight_through(&mut self, hard: Matrix, soft: Var) -> Var {
        let s = &self.values[soft.0];
        assert_eq!((hard.rows(), hard.cols()), (s.rows(), s.cols()));
        self.push(hard, Op::StraightThrough(soft))
    }

    fn accumulate(&mut self, v: Var, g: &Matrix) {
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign_scaled(g, 1.0),
            slot => *slot = Some(g.clone()),
        }
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&mut self, target: Var) {
        assert_eq!(self.values[target.0].data().len(), 1, "backward target must be scalar");
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[target.0] = Some(Matrix::scalar(1.0));

        for i in (0..=target.0).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    let neg = g.map(|x| -x);
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.zip_map(&self.values[b.0], |x, y| x * y);
                    let db = g.zip_map(&self.values[a.0], |x, y| x * y);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddRowVec(a, row) => {
                    let (a, row) = (*a, *row);
                    self.accumulate(a, &g);
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dr.set(0, c, dr.get(0, c) + g.get(r, c));
                        }
                    }
                    self.accumulate(row, &dr);
                }
                Op::AddColVec(a, col) => {
                    let (a, col) = (*a, *col);
                    self.accumulate(a, &g);
                    let mut dc = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        dc.set(r, 0, g.row(r).iter().sum());
                    }
                    self.accumulate(col, &dc);
                }
                Op::MulColVec(a, col) => {
                    let (a, col) = (*a, *col);
                    let av = self.values[a.0].clone();
                    let cv = self.values[col.0].clone();
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        let s = cv.get(r, 0);
                        for c in 0..da.cols() {
                            da.set(r, c, da.get(r, c) * s);
                        }
                    }
                    let mut dc = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        let mut s = 0.0;
                        for c in 0..g.cols() {
                            s += g.get(r, c) * av.get(r, c);
                        }
                        dc.set(r, 0, s);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(col, &dc);
                }
                Op::MulRowVec(a, row) => {
                    let (a, row) = (*a, *row);
                    let av = self.values[a.0].clone();
                    let rv = self.values[row.0].clone();
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        for c in 0..da.cols() {
                            da.set(r, c, da.get(r, c) * rv.get(0, c));
                        }
                    }
                    let mut dr = Matrix::zeros(1, g.cols());
                    for c in 0..g.cols() {
                        let mut s = 0.0;
                        for r in 0..g.rows() {
                            s += g.get(r, c) * av.get(r, c);
                        }
                        dr.set(0, c, s);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(row, &dr);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul(&self.values[b.0].transpose());
                    let db = self.values[a.0].transpose().matmul(&g);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let da = g.transpose();
                    self.accumulate(a, &da);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let da = g.map(|x| x * c);
                    self.accumulate(a, &da);
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    self.accumulate(a, &g);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[i], |gi, y| gi * y * (1.0 - y));
                    self.accumulate(a, &da);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[i], |gi, y| gi * (1.0 - y * y));
                    self.accumulate(a, &da);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[i], |gi, y| gi * y);
                    self.accumulate(a, &da);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[a.0], |gi, x| gi / x);
                    self.accumulate(a, &da);
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[i], |gi, y| gi / (2.0 * y));
                    self.accumulate(a, &da);
                }
                Op::Recip(a) => {
                    let a = *a;
                    let da = g.zip_map(&self.values[i], |gi, y| -gi * y * y);
                    self.accumulate(a, &da);
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let da = g.zip_map(&self.values[a.0], |gi, x| {
                        if x > lo && x < hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let y = self.values[i].clone();
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gy: f64 = g.row(r).iter().zip(y.row(r)).map(|(&gi, &yi)| gi * yi).sum();
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - gy));
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let s = g.item();
                    let shape = &self.values[a.0];
                    let da = Matrix::from_vec(
                        shape.rows(),
                        shape.cols(),
                        vec![s; shape.rows() * shape.cols()],
                    );
                    self.accumulate(a, &da);
                }
                Op::SumCols(a) => {
                    let a = *a;
                    let shape = &self.values[a.0];
                    let mut da = Matrix::zeros(shape.rows(), shape.cols());
                    for r in 0..shape.rows() {
                        let s = g.get(r, 0);
                        for c in 0..shape.cols() {
                            da.set(r, c, s);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumRows(a) => {
                    let a = *a;
                    let shape = &self.values[a.0];
                    let mut da = Matrix::zeros(shape.rows(), shape.cols());
                    for r in 0..shape.rows() {
                        for c in 0..shape.cols() {
                            da.set(r, c, g.get(0, c));
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::GatherRows(table, idx) => {
                    let (table, idx) = (*table, idx.clone());
                    let shape = &self.values[table.0];
                    let mut dt = Matrix::zeros(shape.rows(), shape.cols());
                    for (i, &r) in idx.iter().enumerate() {
                        for c in 0..shape.cols() {
                            dt.set(r, c, dt.get(r, c) + g.get(i, c));
                        }
                    }
                    self.accumulate(table, &dt);
                }
                Op::GatherPerRow(a, idx) => {
                    let (a, idx) = (*a, idx.clone());
                    let shape = &self.values[a.0];
                    let mut da = Matrix::zeros(shape.rows(), shape.cols());
                    for (i, &c) in idx.iter().enumerate() {
                        da.set(i, c, g.get(i, 0));
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ac = self.values[a.0].cols();
                    let bc = self.values[b.0].cols();
                    let mut da = Matrix::zeros(g.rows(), ac);
                    let mut db = Matrix::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let rows = self.values[p.0].rows();
                        let mut dp = Matrix::zeros(rows, g.cols());
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(g.row(at + r));
                        }
                        at += rows;
                        self.accumulate(p, &dp);
                    }
                }
                Op::StraightThrough(soft) => {
                    let soft = *soft;
                    self.accumulate(soft, &g);
                }
            }
        }
    }
}
