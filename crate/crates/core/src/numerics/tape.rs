//! Matrix-valued reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so operands always precede their
//! users and a single reverse sweep visits every node once.

use crate::error::{shape_err, Error, Result};

use super::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Matrix plus a column vector broadcast over its columns.
    AddColumn(Var, Var),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Matrix),
    /// `Diag(s) · x` with constant `s`.
    ScaleRows(Var, Vec<f64>),
    Transpose(Var),
    Column(Var, usize),
    Sum(Var),
    SumSquares(Var),
    Sqrt(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
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

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, c), t)
    }

    pub fn add_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let m = self.value(a);
        let c = self.value(col);
        if c.cols() != 1 || c.rows() != m.rows() {
            return Err(shape_err(format!(
                "broadcast column {:?} onto {:?}",
                c.shape(),
                m.shape()
            )));
        }
        let mut value = m.clone();
        let cols = value.cols();
        for (i, &ci) in c.data().iter().enumerate() {
            for v in &mut value.data_mut()[i * cols..(i + 1) * cols] {
                *v += ci;
            }
        }
        let t = self.tracked(a) || self.tracked(col);
        Ok(self.push(value, Op::AddColumn(a, col), t))
    }

    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::MulConst(a, mask), t))
    }

    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Result<Var> {
        let value = self.value(a).scale_rows(&s)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::ScaleRows(a, s), t))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(value, Op::Transpose(a), t)
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let m = self.value(a);
        if j >= m.cols() {
            return Err(shape_err(format!("column {j} of {:?}", m.shape())));
        }
        let value = Matrix::column(&m.col(j));
        let t = self.tracked(a);
        Ok(self.push(value, Op::Column(a, j), t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let t = self.tracked(a);
        self.push(value, Op::Sum(a), t)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let t = self.tracked(a);
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(a), t)
    }

    /// Square root of a non-negative scalar. The derivative at zero is taken
    /// as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.shape() != (1, 1) {
            return Err(shape_err("sqrt of non-scalar"));
        }
        let value = Matrix::filled(1, 1, m[(0, 0)].max(0.0).sqrt());
        let t = self.tracked(a);
        Ok(self.push(value, Op::Sqrt(a), t))
    }

    /// Euclidean / Frobenius norm.
    pub fn norm(&mut self, a: Var) -> Var {
        let s = self.sum_squares(a);
        self.sqrt(s).expect("sum of squares is scalar")
    }

    /// Gradients of the scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.tracked(root) {
            grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, contrib: Matrix| -> Result<()> {
            if !self.tracked(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &contrib)?,
                slot @ None => *slot = Some(contrib),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?)?;
                }
                if self.tracked(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c))?,
            Op::AddColumn(a, col) => {
                acc(*a, g.clone())?;
                let sums: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                acc(*col, Matrix::column(&sums))?;
            }
            Op::MulConst(a, mask) => acc(*a, g.hadamard(mask)?)?,
            Op::ScaleRows(a, s) => acc(*a, g.scale_rows(s)?)?,
            Op::Transpose(a) => acc(*a, g.transpose())?,
            Op::Column(a, j) => {
                let (r, c) = self.value(*a).shape();
                let mut full = Matrix::zeros(r, c);
                full.set_col(*j, g.data());
                acc(*a, full)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g[(0, 0)]))?;
            }
            Op::SumSquares(a) => acc(*a, self.value(*a).scale(2.0 * g[(0, 0)]))?,
            Op::Sqrt(a) => {
                let s = node.value[(0, 0)];
                let d = if s > 0.0 { g[(0, 0)] / (2.0 * s) } else { 0.0 };
                acc(*a, Matrix::filled(1, 1, d))?;
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}
