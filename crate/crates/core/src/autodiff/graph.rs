use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{chol, solve_lower_transpose, solve_lower_triangular, Matrix};

use super::ParamStore;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    TMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    OuterAdd(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    AddDiag(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Trace(Var),
    Diag(Var),
    ColSumSq(Var),
    Cholesky(Var),
    SolveLower(Var, Var),
    SolveUpper(Var, Var),
    LogDetChol(Var),
    PairwiseSqDist(Var),
    TrilExpDiag(Var),
    SelectRows(Var, Vec<usize>),
    VStack(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A reverse-mode computation graph over dense matrices.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Leaf for the named parameter. Repeated requests return the same node, so
    /// gradients from every use accumulate on it.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    /// `a^T * b`.
    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t_matmul(self.value(b));
        self.push(value, Op::TMatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        self.push(value, Op::Mul(a, b))
    }

    /// `a + 1 * row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        let value = broadcast_row(self.value(a), r, |x, y| x + y);
        self.push(value, Op::AddRow(a, row))
    }

    /// Elementwise product with a `1 x m` row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "mul_row expects a row vector");
        let value = broadcast_row(self.value(a), r, |x, y| x * y);
        self.push(value, Op::MulRow(a, row))
    }

    /// `col * 1^T + 1 * row` for an `n x 1` column and a `1 x m` row.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Var {
        let (c, r) = (self.value(col), self.value(row));
        assert_eq!(c.cols(), 1, "outer_add expects a column");
        assert_eq!(r.rows(), 1, "outer_add expects a row");
        let value = Matrix::from_fn(c.rows(), r.cols(), |i, j| c[(i, 0)] + r[(0, j)]);
        self.push(value, Op::OuterAdd(col, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a))
    }

    /// `s * a` for a `1 x 1` node `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Var {
        let sv = self.value(s).item();
        let value = self.value(a).scale(sv);
        self.push(value, Op::ScaleBy(s, a))
    }

    pub fn add_diag(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).add_diag(s);
        self.push(value, Op::AddDiag(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn trace(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).trace());
        self.push(value, Op::Trace(a))
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let value = Matrix::column(&self.value(a).diag());
        self.push(value, Op::Diag(a))
    }

    /// Column sums of squares, as a `1 x m` row.
    pub fn col_sum_sq(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
                *o += v * v;
            }
        }
        self.push(out, Op::ColSumSq(a))
    }

    /// Lower Cholesky factor, using the jitter ladder of [`chol`]. The jitter is
    /// treated as a constant for differentiation.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let f = chol(self.value(a))?;
        Ok(self.push(f.lower().clone(), Op::Cholesky(a)))
    }

    /// `L^-1 B` for lower-triangular `L`.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let value = solve_lower_triangular(self.value(l), self.value(b));
        self.push(value, Op::SolveLower(l, b))
    }

    /// `L^-T B` for lower-triangular `L`.
    pub fn solve_upper(&mut self, l: Var, b: Var) -> Var {
        let value = solve_lower_transpose(self.value(l), self.value(b));
        self.push(value, Op::SolveUpper(l, b))
    }

    /// `ln |L L^T| = 2 sum ln L_ii`.
    pub fn logdet_chol(&mut self, l: Var) -> Var {
        let value = Matrix::scalar(2.0 * self.value(l).diag().iter().map(|d| d.ln()).sum::<f64>());
        self.push(value, Op::LogDetChol(l))
    }

    /// Squared Euclidean distances between all pairs of rows.
    pub fn pairwise_sq_dist(&mut self, u: Var) -> Var {
        let m = self.value(u);
        let n = m.rows();
        let value = Matrix::from_fn(n, n, |i, j| {
            m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
        });
        self.push(value, Op::PairwiseSqDist(u))
    }

    /// Lower-triangular matrix whose strict lower part is copied from `raw` and
    /// whose diagonal is `exp(diag(raw))`.
    pub fn tril_exp_diag(&mut self, raw: Var) -> Var {
        let r = self.value(raw);
        let value = Matrix::from_fn(r.rows(), r.cols(), |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => r[(i, j)],
            std::cmp::Ordering::Equal => r[(i, j)].exp(),
            std::cmp::Ordering::Less => 0.0,
        });
        self.push(value, Op::TrilExpDiag(raw))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        self.push(value, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).vstack(self.value(b));
        self.push(value, Op::VStack(a, b))
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn node_gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Reverse pass. Returns a gradient store with the layout of `store`;
    /// parameters that the loss does not reach get exact zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<ParamStore> {
        let grads = self.node_gradients(loss)?;
        let mut out = store.zeros_like();
        for (name, v) in &self.params {
            if let Some(Some(g)) = grads.get(v.0) {
                out.set(name, g.clone())?;
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b)));
                accumulate(grads, *b, val(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(grads, *a, g.matmul(val(*b)));
                accumulate(grads, *b, g.t_matmul(val(*a)));
            }
            Op::TMatMul(a, b) => {
                accumulate(grads, *a, val(*b).matmul_t(g));
                accumulate(grads, *b, val(*a).matmul(g));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.hadamard(val(*b)));
                accumulate(grads, *b, g.hadamard(val(*a)));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                accumulate(grads, *a, broadcast_row(g, val(*row), |x, y| x * y));
                accumulate(grads, *row, col_sums(&g.hadamard(val(*a))));
            }
            Op::OuterAdd(col, row) => {
                let rs: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                accumulate(grads, *col, Matrix::column(&rs));
                accumulate(grads, *row, col_sums(g));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) | Op::AddDiag(a) => accumulate(grads, *a, g.clone()),
            Op::ScaleBy(s, a) => {
                let sv = val(*s).item();
                accumulate(grads, *s, Matrix::scalar(g.hadamard(val(*a)).sum()));
                accumulate(grads, *a, g.scale(sv));
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |gi, t| gi * (1.0 - t * t))),
            Op::Relu(a) => accumulate(grads, *a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            Op::Exp(a) => accumulate(grads, *a, g.hadamard(out)),
            Op::Log(a) => accumulate(grads, *a, g.zip_map(val(*a), |gi, x| gi / x)),
            Op::Square(a) => accumulate(grads, *a, g.zip_map(val(*a), |gi, x| 2.0 * gi * x)),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Trace(a) => {
                let (r, c) = val(*a).shape();
                let mut m = Matrix::zeros(r, c);
                for i in 0..r.min(c) {
                    m[(i, i)] = g.item();
                }
                accumulate(grads, *a, m);
            }
            Op::Diag(a) => {
                let (r, c) = val(*a).shape();
                let mut m = Matrix::zeros(r, c);
                for i in 0..r.min(c) {
                    m[(i, i)] = g[(i, 0)];
                }
                accumulate(grads, *a, m);
            }
            Op::ColSumSq(a) => {
                let x = val(*a);
                let m = Matrix::from_fn(x.rows(), x.cols(), |i, j| 2.0 * x[(i, j)] * g[(0, j)]);
                accumulate(grads, *a, m);
            }
            Op::Cholesky(a) => accumulate(grads, *a, cholesky_backward(out, g)),
            Op::SolveLower(l, b) => {
                let lv = val(*l);
                let gb = solve_lower_transpose(lv, g);
                let gl = gb.matmul_t(out).tril().scale(-1.0);
                accumulate(grads, *l, gl);
                accumulate(grads, *b, gb);
            }
            Op::SolveUpper(l, b) => {
                let lv = val(*l);
                let gb = solve_lower_triangular(lv, g);
                let gl = out.matmul_t(&gb).tril().scale(-1.0);
                accumulate(grads, *l, gl);
                accumulate(grads, *b, gb);
            }
            Op::LogDetChol(l) => {
                let lv = val(*l);
                let mut m = Matrix::zeros(lv.rows(), lv.cols());
                for i in 0..lv.rows() {
                    m[(i, i)] = 2.0 * g.item() / lv[(i, i)];
                }
                accumulate(grads, *l, m);
            }
            Op::PairwiseSqDist(u) => {
                let uv = val(*u);
                let n = uv.rows();
                let s = g.add(&g.transpose());
                let su = s.matmul(uv);
                let m = Matrix::from_fn(n, uv.cols(), |i, k| {
                    let rs: f64 = s.row(i).iter().sum();
                    2.0 * (rs * uv[(i, k)] - su[(i, k)])
                });
                accumulate(grads, *u, m);
            }
            Op::TrilExpDiag(raw) => {
                let m = Matrix::from_fn(g.rows(), g.cols(), |i, j| match i.cmp(&j) {
                    std::cmp::Ordering::Greater => g[(i, j)],
                    std::cmp::Ordering::Equal => g[(i, j)] * out[(i, j)],
                    std::cmp::Ordering::Less => 0.0,
                });
                accumulate(grads, *raw, m);
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut m = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (dst, src) in m.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dst += src;
                    }
                }
                accumulate(grads, *a, m);
            }
            Op::VStack(a, b) => {
                let ra = val(*a).rows();
                let rb = val(*b).rows();
                if ra > 0 {
                    accumulate(grads, *a, g.slice_rows(0, ra));
                }
                if rb > 0 {
                    accumulate(grads, *b, g.slice_rows(ra, ra + rb));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn broadcast_row(a: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.cols(), row.cols(), "row broadcast shape mismatch");
    Matrix::from_fn(a.rows(), a.cols(), |i, j| f(a[(i, j)], row[(0, j)]))
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Symmetric adjoint of `A = L L^T` given the adjoint of `L`:
/// `S = L^-T Φ(L^T Lbar) L^-1`, result `(S + S^T) / 2`, where `Φ` keeps the
/// lower triangle and halves the diagonal.
fn cholesky_backward(l: &Matrix, gl: &Matrix) -> Matrix {
    let n = l.rows();
    let lbar = gl.tril();
    let mut p = l.t_matmul(&lbar);
    for i in 0..n {
        for j in 0..n {
            if j > i {
                p[(i, j)] = 0.0;
            } else if j == i {
                p[(i, j)] *= 0.5;
            }
        }
    }
    let x = solve_lower_transpose(l, &p);
    let s = solve_lower_transpose(l, &x.transpose()).transpose();
    s.symmetrize()
}
