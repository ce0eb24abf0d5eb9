//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! replays the tape in reverse once, accumulating gradients into the
//! operands of each node. Scalars are represented as `1 × 1` matrices.

use std::ops::Range;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node recorded on a [`ValueGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNorm(Var),
    Softmax(Var, Vec<Range<usize>>),
    LogSoftmax(Var, Vec<Range<usize>>),
    ConcatCols(Var, Var),
    SelectCols(Var, Vec<usize>),
    /// `perm[[i, j]]` is the source row of sorted position `i` in column `j`.
    SortCols(Var, Array2<usize>),
    StopGrad,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation, sufficient to run one backward pass.
#[derive(Debug, Default)]
pub struct ValueGraph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`ValueGraph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled if the node did not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[v.0]),
        }
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn span_softmax(row: &mut ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let total: f64 = row.sum();
    row.mapv_inplace(|v| v / total);
}

fn span_log_softmax(row: &mut ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv_inplace(|v| v - lse);
}

impl ValueGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn check_same(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape(format!("matmul: {ar}x{ac} · {br}x{bc}")));
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::Shape(format!(
                "add_row: row {:?} for width {ac}",
                self.shape(row)
            )));
        }
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Divides each row of `a` by the matching entry of the `B × 1` column `c`.
    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ar, _) = self.shape(a);
        if self.shape(c) != (ar, 1) {
            return Err(Error::Shape(format!(
                "div_col: column {:?} for {ar} rows",
                self.shape(c)
            )));
        }
        let value = self.value(a) / self.value(c);
        let rg = self.rg(a) || self.rg(c);
        Ok(self.push(value, Op::DivCol(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    /// Clamps into `[lo, hi]`; entries outside the interval pass no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_elem((1, 1), m.sum() / m.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Per-row sum as a `B × 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Per-row Euclidean norm as a `B × 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::RowNorm(a), rg)
    }

    fn check_spans(&self, a: Var, spans: &[Range<usize>]) -> Result<()> {
        let (_, ac) = self.shape(a);
        for sp in spans {
            if sp.is_empty() || sp.end > ac {
                return Err(Error::Shape(format!("span {sp:?} outside width {ac}")));
            }
        }
        Ok(())
    }

    /// Softmax within each column span; columns outside every span pass through.
    pub fn softmax_spans(&mut self, a: Var, spans: Vec<Range<usize>>) -> Result<Var> {
        self.check_spans(a, &spans)?;
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            for sp in &spans {
                span_softmax(&mut row.slice_mut(s![sp.clone()]));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a, spans), rg))
    }

    /// Log-softmax within each column span; columns outside every span pass through.
    pub fn log_softmax_spans(&mut self, a: Var, spans: Vec<Range<usize>>) -> Result<Var> {
        self.check_spans(a, &spans)?;
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            for sp in &spans {
                span_log_softmax(&mut row.slice_mut(s![sp.clone()]));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax(a, spans), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Error::Shape(format!("concat_cols: {ar} vs {br} rows")));
        }
        let mut value = Matrix::zeros((ar, ac + bc));
        value.slice_mut(s![.., ..ac]).assign(self.value(a));
        value.slice_mut(s![.., ac..]).assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Gathers columns of `a` in the order given by `cols`.
    pub fn select_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let (_, ac) = self.shape(a);
        if let Some(&bad) = cols.iter().find(|&&c| c >= ac) {
            return Err(Error::Shape(format!("select_cols: column {bad} of {ac}")));
        }
        let value = self.value(a).select(Axis(1), &cols);
        let rg = self.rg(a);
        Ok(self.push(value, Op::SelectCols(a, cols), rg))
    }

    /// Sorts each column ascending. Gradients follow the sorting permutation.
    pub fn sort_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (rows, cols) = shape(src);
        let mut value = Matrix::zeros((rows, cols));
        let mut perm = Array2::<usize>::zeros((rows, cols));
        let mut order: Vec<usize> = Vec::with_capacity(rows);
        for j in 0..cols {
            let col = src.column(j);
            order.clear();
            order.extend(0..rows);
            order.sort_by(|&x, &y| col[x].total_cmp(&col[y]).then(x.cmp(&y)));
            for (i, &k) in order.iter().enumerate() {
                value[[i, j]] = col[k];
                perm[[i, j]] = k;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SortCols(a, perm), rg)
    }

    /// Identity on the forward pass; blocks gradient flow into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad, false)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward: loss must be 1x1, got {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| shape(&n.value)).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*r) {
                    self.accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::DivCol(a, c) => {
                let cv = self.value(*c);
                if self.rg(*a) {
                    self.accumulate(grads, *a, g / cv);
                }
                if self.rg(*c) {
                    // d(a/c)/dc = -a/c^2 = -out/c
                    let dc = (g * &node.value).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, -(dc / cv));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * &node.value),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Matrix::from_elem(self.shape(*a), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let sh = self.shape(*a);
                let d = Matrix::from_elem(sh, g[[0, 0]] / (sh.0 * sh.1).max(1) as f64);
                self.accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let d = g.broadcast((r, c)).expect("row_sum grad broadcast").to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let mut d = self.value(*a).clone();
                for (mut row, (&norm, &gi)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(node.value.iter().zip(g.iter()))
                {
                    if norm > 0.0 {
                        row.mapv_inplace(|x| gi * x / norm);
                    } else {
                        row.fill(0.0);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a, spans) => {
                let mut d = g.clone();
                for (mut drow, prow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    for sp in spans {
                        let p = prow.slice(s![sp.clone()]);
                        let mut ds = drow.slice_mut(s![sp.clone()]);
                        let dot = ds.dot(&p);
                        Zip::from(&mut ds).and(&p).for_each(|d, &p| *d = p * (*d - dot));
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a, spans) => {
                let mut d = g.clone();
                for (mut drow, lrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    for sp in spans {
                        let l = lrow.slice(s![sp.clone()]);
                        let mut ds = drow.slice_mut(s![sp.clone()]);
                        let total = ds.sum();
                        Zip::from(&mut ds)
                            .and(&l)
                            .for_each(|d, &l| *d -= l.exp() * total);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let ac = self.shape(*a).1;
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.slice(s![.., ..ac]).to_owned());
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.slice(s![.., ac..]).to_owned());
                }
            }
            Op::SelectCols(a, cols) => {
                let mut d = Matrix::zeros(self.shape(*a));
                for (k, &c) in cols.iter().enumerate() {
                    let mut dst = d.column_mut(c);
                    dst += &g.column(k);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SortCols(a, perm) => {
                let mut d = Matrix::zeros(self.shape(*a));
                for ((i, j), &src) in perm.indexed_iter() {
                    d[[src, j]] += g[[i, j]];
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_norm_gradient() {
        let mut g = ValueGraph::new();
        let x = g.param(array![[3.0, 4.0]]);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        assert_eq!(g.scalar(loss), 25.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), array![[6.0, 8.0]]);
    }

    #[test]
    fn linear_sum_gradient_replicates_input() {
        // loss = sum(x · W): dL/dW[i, j] = x[i] for every output column j
        let mut g = ValueGraph::new();
        let x = g.constant(array![[1.0, -2.0, 0.5]]);
        let w = g.param(Matrix::from_elem((3, 2), 0.3));
        let y = g.matmul(x, w).unwrap();
        let loss = g.sum(y);
        let dw = g.backward(loss).unwrap().wrt(w);
        assert_eq!(dw, array![[1.0, 1.0], [-2.0, -2.0], [0.5, 0.5]]);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut g = ValueGraph::new();
        let x = g.param(array![[2.0]]);
        let sx = g.stop_gradient(x);
        let prod = g.mul(sx, x).unwrap();
        let loss = g.sum(prod);
        assert_eq!(g.backward(loss).unwrap().wrt(x), array![[2.0]]);

        let mut g = ValueGraph::new();
        let x = g.param(array![[2.0]]);
        let sx = g.stop_gradient(x);
        let sq = g.mul(sx, sx).unwrap();
        let loss = g.sum(sq);
        assert_eq!(g.value(loss)[[0, 0]], 4.0);
        assert_eq!(g.backward(loss).unwrap().wrt(x), array![[0.0]]);
    }

    #[test]
    fn unused_params_get_zero() {
        let mut g = ValueGraph::new();
        let a = g.param(array![[1.0, 2.0]]);
        let unused = g.param(array![[5.0]]);
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), array![[0.0]]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = ValueGraph::new();
        let a = g.param(array![[1.0, 2.0]]);
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn relu_forward() {
        let mut g = ValueGraph::new();
        let a = g.constant(array![[-1.0, 2.0]]);
        let r = g.relu(a);
        assert_eq!(g.value(r), &array![[0.0, 2.0]]);
    }

    #[test]
    fn sort_cols_routes_gradient() {
        let mut g = ValueGraph::new();
        let a = g.param(array![[3.0], [1.0], [2.0]]);
        let sorted = g.sort_cols(a);
        assert_eq!(g.value(sorted), &array![[1.0], [2.0], [3.0]]);
        let w = g.constant(array![[1.0], [10.0], [100.0]]);
        let weighted = g.mul(sorted, w).unwrap();
        let loss = g.sum(weighted);
        // row 0 (value 3) is the largest, so it receives weight 100
        assert_eq!(
            g.backward(loss).unwrap().wrt(a),
            array![[100.0], [1.0], [10.0]]
        );
    }

    #[test]
    fn softmax_spans_leave_other_columns() {
        let mut g = ValueGraph::new();
        let a = g.constant(array![[0.0, 0.0, 7.0]]);
        let p = g.softmax_spans(a, vec![0..2]).unwrap();
        assert_eq!(g.value(p), &array![[0.5, 0.5, 7.0]]);
    }
}
