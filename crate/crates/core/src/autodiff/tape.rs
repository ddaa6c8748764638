use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Lu};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    Abs,
    Softplus,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

/// Local partial derivatives of a custom primitive with respect to one operand.
#[derive(Clone, Debug)]
pub enum Partials {
    /// Row-major `output_len × operand_len`.
    Dense(Vec<f64>),
    /// `(output index, operand index, ∂out/∂in)` triplets.
    Sparse(Vec<(u32, u32, f64)>),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Var, UnaryOp),
    Binary(Var, Var, BinaryOp),
    Scale(Var, f64),
    MatMul(Var, Var),
    AddColumn(Var, Var),
    RowAffine(Var, Arc<[f64]>),
    Sum(Var),
    Gather(Var, Arc<[usize]>),
    Concat(Vec<Var>),
    Dot(Var, Var),
    Cross(Var, Var),
    Solve { a: Var, b: Var, lu: Arc<Lu> },
    Custom(Vec<(Var, Partials)>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Nodes hold dense row-major tensors; scalars are `1 × 1`. Each record only
/// references earlier nodes, so a single reverse sweep accumulates adjoints.
/// A tape is owned by one computation; independent tapes may live on
/// different threads.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` is not on any path to the seeded output.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.adjoints[v.0] {
            Some(a) => a.clone(),
            None => vec![0.0; self.lens[v.0]],
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adjoints[v.0].as_deref()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.adjoints[v.0].as_ref().map_or(0.0, |a| a[0])
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad: true,
        }
    }

    /// A tape that records values only: leaves never require gradients and
    /// callers building custom primitives may skip their partials.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: Vec<f64>,
        rows: usize,
        cols: usize,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad: requires_grad && self.grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- leaves -------------------------------------------------------------

    pub fn var(&mut self, value: f64) -> Var {
        self.push(vec![value], 1, 1, Op::Leaf, true)
    }

    pub fn var_tensor(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "var_tensor shape");
        self.push(value, rows, cols, Op::Leaf, true)
    }

    pub fn vars(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(vec![value], 1, 1, Op::Leaf, false)
    }

    pub fn constant_tensor(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant_tensor shape");
        self.push(value, rows, cols, Op::Leaf, false)
    }

    // ---- inspection ---------------------------------------------------------

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn size(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.req(v)
    }

    // ---- elementwise --------------------------------------------------------

    fn unary(&mut self, x: Var, op: UnaryOp) -> Var {
        let n = &self.nodes[x.0];
        let (rows, cols) = (n.rows, n.cols);
        let value: Vec<f64> = n
            .value
            .iter()
            .map(|&a| match op {
                UnaryOp::Neg => -a,
                UnaryOp::Sin => a.sin(),
                UnaryOp::Cos => a.cos(),
                UnaryOp::Tan => a.tan(),
                UnaryOp::Sqrt => a.sqrt(),
                UnaryOp::Exp => a.exp(),
                UnaryOp::Ln => a.ln(),
                UnaryOp::Tanh => a.tanh(),
                UnaryOp::Abs => a.abs(),
                UnaryOp::Softplus => softplus(a),
                UnaryOp::Square => a * a,
            })
            .collect();
        let r = self.req(x);
        self.push(value, rows, cols, Op::Unary(x, op), r)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Neg)
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Sin)
    }
    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Cos)
    }
    pub fn tan(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Tan)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Exp)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Tanh)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Abs)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Softplus)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).iter().find(|v| **v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                node: x.0,
                value: bad,
            });
        }
        Ok(self.unary(x, UnaryOp::Sqrt))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                op: "ln",
                node: x.0,
                value: bad,
            });
        }
        Ok(self.unary(x, UnaryOp::Ln))
    }

    fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Var {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (rows, cols) = if na.value.len() == 1 {
            (nb.rows, nb.cols)
        } else {
            (na.rows, na.cols)
        };
        assert!(
            na.value.len() == nb.value.len() || na.value.len() == 1 || nb.value.len() == 1,
            "binary {op:?}: incompatible shapes {}x{} and {}x{}",
            na.rows,
            na.cols,
            nb.rows,
            nb.cols
        );
        let len = rows * cols;
        let value: Vec<f64> = (0..len)
            .map(|i| {
                let x = na.value[if na.value.len() == 1 { 0 } else { i }];
                let y = nb.value[if nb.value.len() == 1 { 0 } else { i }];
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => x / y,
                    BinaryOp::Max => x.max(y),
                    BinaryOp::Min => x.min(y),
                }
            })
            .collect();
        let r = self.req(a) || self.req(b);
        self.push(value, rows, cols, Op::Binary(a, b, op), r)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Div)
    }
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Max)
    }
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryOp::Min)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let n = &self.nodes[x.0];
        let (rows, cols) = (n.rows, n.cols);
        let value = n.value.iter().map(|v| v * k).collect();
        let r = self.req(x);
        self.push(value, rows, cols, Op::Scale(x, k), r)
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let value = linalg::matmul(self.value(a), self.value(b), m, k, n);
        let r = self.req(a) || self.req(b);
        self.push(value, m, n, Op::MatMul(a, b), r)
    }

    /// `m + col·1ᵀ`: adds a column vector to every column of `m`.
    pub fn add_column(&mut self, m: Var, col: Var) -> Var {
        let (rows, cols) = self.shape(m);
        assert_eq!(self.size(col), rows, "add_column length");
        let c = self.value(col);
        let value = self
            .value(m)
            .chunks(cols)
            .zip(c)
            .flat_map(|(row, &ci)| row.iter().map(move |v| v + ci))
            .collect();
        let r = self.req(m) || self.req(col);
        self.push(value, rows, cols, Op::AddColumn(m, col), r)
    }

    /// Per-row affine map with constant coefficients: `y[i,j] = x[i,j]·scale[i] + shift[i]`.
    pub fn row_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(scale.len(), rows);
        assert_eq!(shift.len(), rows);
        let value = self
            .value(x)
            .chunks(cols)
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |v| v * scale[i] + shift[i]))
            .collect();
        let r = self.req(x);
        self.push(value, rows, cols, Op::RowAffine(x, scale.into()), r)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let r = self.req(x);
        self.push(vec![s], 1, 1, Op::Sum(x), r)
    }

    /// Selects elements of the flattened `x` into a `rows × cols` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols);
        let src = self.value(x);
        let value = idx.iter().map(|&i| src[i]).collect();
        let r = self.req(x);
        self.push(value, rows, cols, Op::Gather(x, idx.into()), r)
    }

    /// Element `i` of the flattened `x` as a scalar.
    pub fn element(&mut self, x: Var, i: usize) -> Var {
        self.gather(x, &[i], 1, 1)
    }

    /// Contiguous slice `[start, start+len)` of the flattened `x` as a column vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(x, &idx, len, 1)
    }

    /// Flattens and stacks the inputs into one column vector.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let value: Vec<f64> = xs
            .iter()
            .flat_map(|&x| self.value(x).iter().copied())
            .collect();
        let len = value.len();
        let r = xs.iter().any(|&x| self.req(x));
        self.push(value, len, 1, Op::Concat(xs.to_vec()), r)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.size(a), self.size(b), "dot length");
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .sum();
        let r = self.req(a) || self.req(b);
        self.push(vec![s], 1, 1, Op::Dot(a, b), r)
    }

    pub fn cross(&mut self, a: Var, b: Var) -> Var {
        assert!(
            self.size(a) == 3 && self.size(b) == 3,
            "cross needs 3-vectors"
        );
        let (x, y) = (self.value(a), self.value(b));
        let value = cross3([x[0], x[1], x[2]], [y[0], y[1], y[2]]).to_vec();
        let r = self.req(a) || self.req(b);
        self.push(value, 3, 1, Op::Cross(a, b), r)
    }

    /// Solves `A x = b`, factorizing `A` here.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, n2) = self.shape(a);
        if n != n2 {
            return Err(Error::Dimension {
                context: "solve: square matrix",
                expected: n,
                got: n2,
            });
        }
        let lu = Arc::new(Lu::factor(self.value(a), n)?);
        self.solve_factored(a, b, lu)
    }

    /// Solves `A x = b` reusing a factorization of the value of `a`.
    ///
    /// The solution is refined until the relative residual is at most
    /// [`crate::vlm::RESIDUAL_TOL`].
    pub fn solve_factored(&mut self, a: Var, b: Var, lu: Arc<Lu>) -> Result<Var> {
        let n = lu.dim();
        if self.size(b) != n {
            return Err(Error::Dimension {
                context: "solve: right-hand side",
                expected: n,
                got: self.size(b),
            });
        }
        let (x, _) =
            linalg::solve_refined(&lu, self.value(a), self.value(b), crate::vlm::RESIDUAL_TOL)?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(x, n, 1, Op::Solve { a, b, lu }, r))
    }

    /// Records a primitive whose forward value and local partials are supplied
    /// by the caller.
    pub fn custom(
        &mut self,
        value: Vec<f64>,
        rows: usize,
        cols: usize,
        inputs: Vec<(Var, Partials)>,
    ) -> Var {
        assert_eq!(value.len(), rows * cols);
        let r = inputs.iter().any(|(v, _)| self.req(*v));
        let inputs = if self.grad { inputs } else { Vec::new() };
        self.push(value, rows, cols, Op::Custom(inputs), r)
    }

    // ---- reverse sweep ------------------------------------------------------

    /// Gradient of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.size(output) != 1 {
            return Err(Error::Dimension {
                context: "backward: scalar output",
                expected: 1,
                got: self.size(output),
            });
        }
        Ok(self.backward_seeded(output, &[1.0]))
    }

    /// Vector–Jacobian product `seedᵀ · ∂output/∂(every node)`.
    pub fn backward_seeded(&self, output: Var, seed: &[f64]) -> Gradients {
        assert_eq!(seed.len(), self.size(output), "seed length");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.to_vec());
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[i] = Some(g);
        }
        adj.resize(self.nodes.len(), None);
        Gradients {
            adjoints: adj,
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        }
    }

    /// Dense Jacobian `∂output/∂inputs` (row-major, `len(output) × Σ len(inputs)`).
    pub fn jacobian(&self, output: Var, inputs: &[Var]) -> Vec<f64> {
        let m = self.size(output);
        let widths: Vec<usize> = inputs.iter().map(|&v| self.size(v)).collect();
        let total: usize = widths.iter().sum();
        let mut jac = vec![0.0; m * total];
        let mut seed = vec![0.0; m];
        for r in 0..m {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[r] = 1.0;
            let g = self.backward_seeded(output, &seed);
            let mut off = 0;
            for (&v, &w) in inputs.iter().zip(&widths) {
                if let Some(a) = g.get(v) {
                    jac[r * total + off..r * total + off + w].copy_from_slice(a);
                }
                off += w;
            }
        }
        jac
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, op) => {
                if !self.req(*x) {
                    return;
                }
                let xv = &self.nodes[x.0].value;
                let ax = slot(adj, *x, xv.len());
                for i in 0..g.len() {
                    let (a, y) = (xv[i], out[i]);
                    let d = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Sin => a.cos(),
                        UnaryOp::Cos => -a.sin(),
                        UnaryOp::Tan => 1.0 + y * y,
                        UnaryOp::Sqrt => {
                            if y > 0.0 {
                                0.5 / y
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Exp => y,
                        UnaryOp::Ln => 1.0 / a,
                        UnaryOp::Tanh => 1.0 - y * y,
                        UnaryOp::Abs => {
                            if a > 0.0 {
                                1.0
                            } else if a < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Softplus => sigmoid(a),
                        UnaryOp::Square => 2.0 * a,
                    };
                    ax[i] += g[i] * d;
                }
            }
            Op::Binary(a, b, op) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (sa, sb) = (av.len() == 1 && g.len() > 1, bv.len() == 1 && g.len() > 1);
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..g.len() {
                    let ia = if sa { 0 } else { i };
                    let ib = if sb { 0 } else { i };
                    let (x, y) = (av[ia], bv[ib]);
                    let (dx, dy) = match op {
                        BinaryOp::Add => (1.0, 1.0),
                        BinaryOp::Sub => (1.0, -1.0),
                        BinaryOp::Mul => (y, x),
                        BinaryOp::Div => (1.0 / y, -x / (y * y)),
                        BinaryOp::Max => {
                            if x > y {
                                (1.0, 0.0)
                            } else if y > x {
                                (0.0, 1.0)
                            } else {
                                (0.0, 0.0)
                            }
                        }
                        BinaryOp::Min => {
                            if x < y {
                                (1.0, 0.0)
                            } else if y < x {
                                (0.0, 1.0)
                            } else {
                                (0.0, 0.0)
                            }
                        }
                    };
                    ga[ia] += g[i] * dx;
                    gb[ib] += g[i] * dy;
                }
                if self.req(*a) {
                    accumulate(slot(adj, *a, av.len()), &ga);
                }
                if self.req(*b) {
                    accumulate(slot(adj, *b, bv.len()), &gb);
                }
            }
            Op::Scale(x, k) => {
                if self.req(*x) {
                    let ax = slot(adj, *x, g.len());
                    for (p, q) in ax.iter_mut().zip(g) {
                        *p += k * q;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if self.req(*a) {
                    let bv = &self.nodes[b.0].value;
                    let ga = slot(adj, *a, m * k);
                    linalg::gemm(1.0, g, false, bv, true, ga, m, n, k, 1.0);
                }
                if self.req(*b) {
                    let av = &self.nodes[a.0].value;
                    let gb = slot(adj, *b, k * n);
                    linalg::gemm(1.0, av, true, g, false, gb, k, m, n, 1.0);
                }
            }
            Op::AddColumn(m, col) => {
                let cols = node.cols;
                if self.req(*m) {
                    accumulate(slot(adj, *m, g.len()), g);
                }
                if self.req(*col) {
                    let gc = slot(adj, *col, node.rows);
                    for (i, row) in g.chunks(cols).enumerate() {
                        gc[i] += row.iter().sum::<f64>();
                    }
                }
            }
            Op::RowAffine(x, scale) => {
                if self.req(*x) {
                    let cols = node.cols;
                    let ax = slot(adj, *x, g.len());
                    for (i, (arow, grow)) in ax.chunks_mut(cols).zip(g.chunks(cols)).enumerate() {
                        for (p, q) in arow.iter_mut().zip(grow) {
                            *p += q * scale[i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.req(*x) {
                    let len = self.size(*x);
                    slot(adj, *x, len).iter_mut().for_each(|p| *p += g[0]);
                }
            }
            Op::Gather(x, idx) => {
                if self.req(*x) {
                    let len = self.size(*x);
                    let ax = slot(adj, *x, len);
                    for (&i, q) in idx.iter().zip(g) {
                        ax[i] += q;
                    }
                }
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.size(x);
                    if self.req(x) {
                        accumulate(slot(adj, x, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.req(*a) {
                    let ga = slot(adj, *a, av.len());
                    for (p, q) in ga.iter_mut().zip(bv) {
                        *p += g[0] * q;
                    }
                }
                if self.req(*b) {
                    let gb = slot(adj, *b, bv.len());
                    for (p, q) in gb.iter_mut().zip(av) {
                        *p += g[0] * q;
                    }
                }
            }
            Op::Cross(a, b) => {
                let av = v3(&self.nodes[a.0].value);
                let bv = v3(&self.nodes[b.0].value);
                let gv = v3(g);
                if self.req(*a) {
                    accumulate(slot(adj, *a, 3), &cross3(bv, gv));
                }
                if self.req(*b) {
                    accumulate(slot(adj, *b, 3), &cross3(gv, av));
                }
            }
            Op::Solve { a, b, lu } => {
                let adj_b = lu.solve_transpose(g);
                if self.req(*a) {
                    let n = lu.dim();
                    let ga = slot(adj, *a, n * n);
                    for i in 0..n {
                        if adj_b[i] == 0.0 {
                            continue;
                        }
                        let row = &mut ga[i * n..(i + 1) * n];
                        for (p, x) in row.iter_mut().zip(out) {
                            *p -= adj_b[i] * x;
                        }
                    }
                }
                if self.req(*b) {
                    accumulate(slot(adj, *b, adj_b.len()), &adj_b);
                }
            }
            Op::Custom(inputs) => {
                for (x, partials) in inputs {
                    if !self.req(*x) {
                        continue;
                    }
                    let len = self.size(*x);
                    let ax = slot(adj, *x, len);
                    match partials {
                        Partials::Dense(jac) => {
                            for (o, &go) in g.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (p, j) in ax.iter_mut().zip(&jac[o * len..(o + 1) * len]) {
                                    *p += go * j;
                                }
                            }
                        }
                        Partials::Sparse(entries) => {
                            for &(o, i, d) in entries {
                                ax[i as usize] += g[o as usize] * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (p, q) in dst.iter_mut().zip(src) {
        *p += q;
    }
}

fn v3(x: &[f64]) -> [f64; 3] {
    [x[0], x[1], x[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
