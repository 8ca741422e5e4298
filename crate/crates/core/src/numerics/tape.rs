//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation applied to [`Var`]s. Leaves are either
//! parameters (gradients requested) or constants. [`Tape::backward`] walks the
//! recorded nodes in reverse creation order, which is a reverse topological
//! order because a node can only reference earlier nodes.
//!
//! Elementwise binary operations broadcast when one operand has a unit
//! dimension (`r x 1`, `1 x c`, or `1 x 1`).

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::eig::{mat_fn_sym, sym_eig, EigDecomposition, MatFn};
use super::Matrix;
use crate::error::Result;

/// Magnitude cap for `1 / (λ_i - λ_j)` in eigenvector gradients.
pub const EIGVEC_GAP_CLAMP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log,
    Tanh,
    Atanh,
    Sqrt,
    Relu,
    Sin,
    Cos,
    Square,
    Recip,
    Abs,
    /// Zero-gradient sign.
    Sign,
    Softplus,
    Sigmoid,
    /// `acosh(1 + e)`, accurate for small `e`.
    Acosh1p,
    Acos,
    /// `tanh(√s)/√s`, smooth at `s = 0`.
    TanhcSqrt,
    /// `sin(√s)/√s`, smooth at `s = 0`.
    SincSqrt,
    /// `cos(√s)`.
    CosSqrt,
    /// `acosh(1 + e)²`, smooth at `e = 0`.
    Acosh1pSq,
    /// `acosh(1 + e)/√(e(2 + e))`, smooth at `e = 0`.
    Acosh1pRatio,
    /// `acos(u)/√(1 - u²)`, smooth at `u = 1`.
    AcosRatio,
    /// `acos(u)²`, smooth at `u = 1`.
    AcosSq,
}

const SERIES_CUTOFF: f64 = 1e-4;

impl Unary {
    fn value(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Atanh => x.atanh(),
            Unary::Sqrt => x.sqrt(),
            Unary::Relu => x.max(0.0),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Abs => x.abs(),
            Unary::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Acosh1p => acosh1p(x),
            Unary::Acos => x.clamp(-1.0, 1.0).acos(),
            Unary::TanhcSqrt => {
                if x < SERIES_CUTOFF {
                    1.0 - x / 3.0 + 2.0 * x * x / 15.0
                } else {
                    let t = x.sqrt();
                    t.tanh() / t
                }
            }
            Unary::SincSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    1.0 - x / 6.0 + x * x / 120.0
                } else {
                    let t = x.sqrt();
                    t.sin() / t
                }
            }
            Unary::CosSqrt => x.max(0.0).sqrt().cos(),
            Unary::Acosh1pSq => {
                let a = acosh1p(x);
                a * a
            }
            Unary::Acosh1pRatio => acosh1p_ratio(x),
            Unary::AcosRatio => acos_ratio(x),
            Unary::AcosSq => {
                let a = x.clamp(-1.0, 1.0).acos();
                a * a
            }
        }
    }

    /// Derivative at `x`, given the already computed output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Atanh => 1.0 / (1.0 - x * x),
            Unary::Sqrt => 0.5 / y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => 2.0 * x,
            Unary::Recip => -y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Sign => 0.0,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Acosh1p => {
                if x <= 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / (x * (x + 2.0)).sqrt()
                }
            }
            Unary::Acos => {
                if x.abs() >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    -1.0 / (1.0 - x * x).sqrt()
                }
            }
            Unary::TanhcSqrt => {
                if x < SERIES_CUTOFF {
                    -1.0 / 3.0 + 4.0 * x / 15.0
                } else {
                    // d/ds tanh(t)/t with t = √s
                    let t = x.sqrt();
                    let sech2 = 1.0 - t.tanh().powi(2);
                    (sech2 / t - t.tanh() / x) / (2.0 * t)
                }
            }
            Unary::SincSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    -1.0 / 6.0 + x / 60.0
                } else {
                    let t = x.sqrt();
                    (t.cos() / t - t.sin() / x) / (2.0 * t)
                }
            }
            Unary::CosSqrt => {
                // d/ds cos(√s) = -sin(√s) / (2√s) = -sinc(√s)/2
                -0.5 * Unary::SincSqrt.value(x)
            }
            Unary::Acosh1pSq => 2.0 * acosh1p_ratio(x),
            Unary::Acosh1pRatio => {
                if x < SERIES_CUTOFF {
                    -1.0 / 3.0 + 4.0 * x / 15.0
                } else {
                    (1.0 - (1.0 + x) * y) / (x * (x + 2.0))
                }
            }
            Unary::AcosRatio => {
                let e = 1.0 - x;
                if e < SERIES_CUTOFF {
                    // acos(u)/√(1-u²) ≈ 1 + e/3 + 2e²/15 with e = 1 - u
                    -1.0 / 3.0 - 4.0 * e / 15.0
                } else {
                    (x * y - 1.0) / (1.0 - x * x)
                }
            }
            Unary::AcosSq => -2.0 * acos_ratio(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Atanh => "atanh",
            Unary::Sqrt => "sqrt",
            Unary::Relu => "relu",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Square => "square",
            Unary::Recip => "recip",
            Unary::Abs => "abs",
            Unary::Sign => "sign",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Acosh1p => "acosh1p",
            Unary::Acos => "acos",
            Unary::TanhcSqrt => "tanhc_sqrt",
            Unary::SincSqrt => "sinc_sqrt",
            Unary::CosSqrt => "cos_sqrt",
            Unary::Acosh1pSq => "acosh1p_sq",
            Unary::Acosh1pRatio => "acosh1p_ratio",
            Unary::AcosRatio => "acos_ratio",
            Unary::AcosSq => "acos_sq",
        }
    }
}

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

/// `acosh(1 + e)` without the cancellation in `1 + e` for small `e`.
pub fn acosh1p(e: f64) -> f64 {
    let e = e.max(0.0);
    (e + (e * (e + 2.0)).sqrt()).ln_1p()
}

fn acosh1p_ratio(e: f64) -> f64 {
    if e < SERIES_CUTOFF {
        1.0 - e / 3.0 + 2.0 * e * e / 15.0
    } else {
        acosh1p(e) / (e * (e + 2.0)).sqrt()
    }
}

fn acos_ratio(x: f64) -> f64 {
    let e = 1.0 - x;
    if e < SERIES_CUTOFF {
        1.0 + e / 3.0 + 2.0 * e * e / 15.0
    } else {
        x.clamp(-1.0, 1.0).acos() / (1.0 - x * x).sqrt()
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    LogMean(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Unary(usize, Unary),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    Reshape(usize),
    Slice { src: usize, r0: usize, c0: usize },
    GatherRows(usize, Rc<Vec<usize>>),
    ConcatCols(usize, usize),
    Diag(usize),
    DiagPart(usize),
    EigVals(usize, Rc<EigDecomposition>),
    EigVecs(usize, Rc<EigDecomposition>),
    SymFn(usize, MatFn, Rc<EigDecomposition>),
    ClipRowNorm(usize, f64),
    SoftmaxCrossEntropy(usize, Rc<Vec<usize>>, Rc<Matrix>),
    SumRowGroups(usize, usize),
    StackRows(Rc<Vec<usize>>),
}

impl Op {
    fn any_parent(&self, f: impl Fn(usize) -> bool) -> bool {
        use Op::*;
        match self {
            Leaf => false,
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | Div(a, b)
            | LogMean(a, b)
            | MatMul(a, b)
            | ConcatCols(a, b) => f(*a) || f(*b),
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Transpose(a)
            | Unary(a, _)
            | Clamp(a, _, _)
            | SumAll(a)
            | SumRows(a)
            | SumCols(a)
            | Reshape(a)
            | Diag(a)
            | DiagPart(a)
            | ClipRowNorm(a, _)
            | SumRowGroups(a, _) => f(*a),
            Slice { src, .. } => f(*src),
            GatherRows(a, _)
            | EigVals(a, _)
            | EigVecs(a, _)
            | SymFn(a, _, _)
            | SoftmaxCrossEntropy(a, _, _) => f(*a),
            StackRows(ids) => ids.iter().any(|&i| f(i)),
        }
    }
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Recording of matrix operations for reverse-mode differentiation.
///
/// Single-writer: recording goes through a `RefCell`, so a tape is not `Sync`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.any_parent(|p| nodes[p].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf treated as data; no gradient flows into it.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::scalar(value))
    }

    fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a `1 x 1` output. Parameters the output does not
    /// depend on receive zero gradients.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(self, output.tape),
            "output belongs to a different tape"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.id].value.shape(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; output.id + 1];
        grads[output.id] = Some(Matrix::scalar(1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (parent, contribution) in backprop(&nodes, node, &g) {
                if !nodes[parent].needs_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn broadcast_zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape());
    let pick = |m: &Matrix, i: usize, j: usize| {
        m[(
            if m.rows() == 1 { 0 } else { i },
            if m.cols() == 1 { 0 } else { j },
        )]
    };
    Matrix::from_fn(r, c, |i, j| f(pick(a, i, j), pick(b, i, j)))
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let ii = if shape.0 == 1 { 0 } else { i };
            let jj = if shape.1 == 1 { 0 } else { j };
            out[(ii, jj)] += g[(i, j)];
        }
    }
    out
}

fn backprop(nodes: &[Node], node: &Node, g: &Matrix) -> Vec<(usize, Matrix)> {
    let val = |id: usize| -> &Matrix { &nodes[id].value };
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, reduce_to(g.clone(), val(*a).shape())),
            (*b, reduce_to(g.clone(), val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_to(g.clone(), val(*a).shape())),
            (*b, reduce_to(g.scale(-1.0), val(*b).shape())),
        ],
        Op::Mul(a, b) => {
            let ga = broadcast_zip(g, val(*b), |g, b| g * b);
            let gb = broadcast_zip(g, val(*a), |g, a| g * a);
            vec![
                (*a, reduce_to(ga, val(*a).shape())),
                (*b, reduce_to(gb, val(*b).shape())),
            ]
        }
        Op::Div(a, b) => {
            let ga = broadcast_zip(g, val(*b), |g, b| g / b);
            // d(a/b)/db = -y/b
            let gy = g.zip_map(y, |g, y| g * y);
            let gb = broadcast_zip(&gy, val(*b), |gy, b| -gy / b);
            vec![
                (*a, reduce_to(ga, val(*a).shape())),
                (*b, reduce_to(gb, val(*b).shape())),
            ]
        }
        Op::LogMean(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let shape = y.shape();
            let pick = |m: &Matrix, i: usize, j: usize| {
                m[(
                    if m.rows() == 1 { 0 } else { i },
                    if m.cols() == 1 { 0 } else { j },
                )]
            };
            let mut ga = Matrix::zeros(shape.0, shape.1);
            let mut gb = Matrix::zeros(shape.0, shape.1);
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let (x, z, l) = (pick(av, i, j), pick(bv, i, j), y[(i, j)]);
                    let d = x.ln() - z.ln();
                    let (da, db) = if d.abs() < 1e-6 {
                        (0.5 * (z / x).sqrt(), 0.5 * (x / z).sqrt())
                    } else {
                        ((1.0 - l / x) / d, (l / z - 1.0) / d)
                    };
                    ga[(i, j)] = g[(i, j)] * da;
                    gb[(i, j)] = g[(i, j)] * db;
                }
            }
            vec![
                (*a, reduce_to(ga, av.shape())),
                (*b, reduce_to(gb, bv.shape())),
            ]
        }
        Op::Neg(a) => vec![(*a, g.scale(-1.0))],
        Op::Scale(a, s) => vec![(*a, g.scale(*s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MatMul(a, b) => vec![
            (*a, g.matmul(&val(*b).transpose())),
            (*b, val(*a).transpose().matmul(g)),
        ],
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::Unary(a, f) => {
            let x = val(*a);
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for ((o, (&xi, &yi)), &gi) in out
                .data_mut()
                .iter_mut()
                .zip(x.data().iter().zip(y.data()))
                .zip(g.data())
            {
                *o = if gi == 0.0 {
                    0.0
                } else {
                    gi * f.derivative(xi, yi)
                };
            }
            vec![(*a, out)]
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a);
            vec![(
                *a,
                g.zip_map(x, |g, x| if x < *lo || x > *hi { 0.0 } else { g }),
            )]
        }
        Op::SumAll(a) => {
            let (r, c) = val(*a).shape();
            vec![(*a, Matrix::filled(r, c, g.item()))]
        }
        Op::SumRows(a) => {
            let (r, c) = val(*a).shape();
            vec![(*a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]))]
        }
        Op::SumCols(a) => {
            let (r, c) = val(*a).shape();
            vec![(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)]))]
        }
        Op::Reshape(a) => {
            let (r, c) = val(*a).shape();
            vec![(*a, g.reshape(r, c))]
        }
        Op::Slice { src, r0, c0 } => {
            let (r, c) = val(*src).shape();
            let mut out = Matrix::zeros(r, c);
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    out[(r0 + i, c0 + j)] = g[(i, j)];
                }
            }
            vec![(*src, out)]
        }
        Op::GatherRows(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut out = Matrix::zeros(r, c);
            for (k, &i) in idx.iter().enumerate() {
                for (o, &gi) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += gi;
                }
            }
            vec![(*a, out)]
        }
        Op::ConcatCols(a, b) => {
            let ca = val(*a).cols();
            let cb = val(*b).cols();
            let r = g.rows();
            vec![
                (*a, Matrix::from_fn(r, ca, |i, j| g[(i, j)])),
                (*b, Matrix::from_fn(r, cb, |i, j| g[(i, ca + j)])),
            ]
        }
        Op::Diag(a) => {
            let (r, c) = val(*a).shape();
            let d = g.diag();
            vec![(*a, Matrix::new(r, c, d))]
        }
        Op::DiagPart(a) => {
            let d: Vec<f64> = g.data().to_vec();
            vec![(*a, Matrix::from_diag(&d))]
        }
        Op::EigVals(a, eig) => {
            let q = &eig.eigenvectors;
            let gbar = Matrix::from_diag(g.data());
            vec![(*a, q.matmul(&gbar).matmul(&q.transpose()).symmetrize())]
        }
        Op::EigVecs(a, eig) => {
            let q = &eig.eigenvectors;
            let l = &eig.eigenvalues;
            let n = l.len();
            let qtg = q.transpose().matmul(g);
            let inner = Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    return 0.0;
                }
                let gap = l[j] - l[i];
                let f = if gap == 0.0 {
                    0.0
                } else {
                    (1.0 / gap).clamp(-EIGVEC_GAP_CLAMP, EIGVEC_GAP_CLAMP)
                };
                f * qtg[(i, j)]
            });
            vec![(*a, q.matmul(&inner).matmul(&q.transpose()).symmetrize())]
        }
        Op::SymFn(a, f, eig) => {
            let q = &eig.eigenvectors;
            let l = &eig.eigenvalues;
            let n = l.len();
            let inner = q.transpose().matmul(&g.symmetrize()).matmul(q);
            let scaled = Matrix::from_fn(n, n, |i, j| {
                inner[(i, j)] * f.divided_difference(l[i], l[j])
            });
            vec![(*a, q.matmul(&scaled).matmul(&q.transpose()).symmetrize())]
        }
        Op::ClipRowNorm(a, max) => {
            let x = val(*a);
            let mut out = g.clone();
            for i in 0..x.rows() {
                let row = x.row(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *max {
                    let dot: f64 = row.iter().zip(g.row(i)).map(|(x, g)| x * g).sum::<f64>() / norm;
                    let s = max / norm;
                    for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                        *o = s * (g[(i, j)] - row[j] / norm * dot);
                    }
                }
            }
            vec![(*a, out)]
        }
        Op::SoftmaxCrossEntropy(a, labels, probs) => {
            let n = labels.len() as f64;
            let mut out = (**probs).clone();
            for (i, &l) in labels.iter().enumerate() {
                out[(i, l)] -= 1.0;
            }
            vec![(*a, out.scale(g.item() / n))]
        }
        Op::SumRowGroups(a, k) => {
            let (r, c) = val(*a).shape();
            vec![(*a, Matrix::from_fn(r, c, |i, j| g[(i / k, j)]))]
        }
        Op::StackRows(ids) => {
            let mut offset = 0;
            ids.iter()
                .map(|&id| {
                    let (r, c) = val(id).shape();
                    let part = Matrix::from_fn(r, c, |i, j| g[(offset + i, j)]);
                    offset += r;
                    (id, part)
                })
                .collect()
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// The single entry of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        self.same_tape(&other);
        let v = broadcast_zip(&self.value(), &other.value(), f);
        self.tape.push(v, op)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// Logarithmic mean `(a - b)/(ln a - ln b)`, with `L(a, a) = a`.
    pub fn log_mean(self, other: Var<'t>) -> Var<'t> {
        let f = |a: f64, b: f64| {
            let d = a.ln() - b.ln();
            if d.abs() < 1e-6 {
                (a * b).sqrt() * (1.0 + d * d / 24.0)
            } else {
                (a - b) / d
            }
        };
        self.binary(other, f, Op::LogMean(self.id, other.id))
    }

    pub fn neg(self) -> Var<'t> {
        let v = self.value().scale(-1.0);
        self.tape.push(v, Op::Neg(self.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.tape.push(v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x + s);
        self.tape.push(v, Op::AddScalar(self.id))
    }

    /// `s - self`.
    pub fn rsub_scalar(self, s: f64) -> Var<'t> {
        self.neg().add_scalar(s)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let v = self.value().matmul(&other.value());
        self.tape.push(v, Op::MatMul(self.id, other.id))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.value().transpose();
        self.tape.push(v, Op::Transpose(self.id))
    }

    pub fn unary(self, f: Unary) -> Var<'t> {
        let v = self.value().map(|x| f.value(x));
        self.tape.push(v, Op::Unary(self.id, f))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Log)
    }
    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }
    pub fn atanh(self) -> Var<'t> {
        self.unary(Unary::Atanh)
    }
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }
    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }
    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }
    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }
    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square)
    }
    pub fn recip(self) -> Var<'t> {
        self.unary(Unary::Recip)
    }
    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs)
    }
    pub fn sign(self) -> Var<'t> {
        self.unary(Unary::Sign)
    }
    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }
    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.tape.push(v, Op::Clamp(self.id, lo, hi))
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.clamp(lo, f64::INFINITY)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::scalar(self.value().sum());
        self.tape.push(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums each row, giving an `r x 1` column.
    pub fn sum_rows(self) -> Var<'t> {
        let x = self.value();
        let v = Matrix::from_fn(x.rows(), 1, |i, _| x.row(i).iter().sum());
        self.tape.push(v, Op::SumRows(self.id))
    }

    /// Sums each column, giving a `1 x c` row.
    pub fn sum_cols(self) -> Var<'t> {
        let x = self.value();
        let mut v = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, &xi) in v.row_mut(0).iter_mut().zip(x.row(i)) {
                *o += xi;
            }
        }
        self.tape.push(v, Op::SumCols(self.id))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let v = self.value().reshape(rows, cols);
        self.tape.push(v, Op::Reshape(self.id))
    }

    /// Rows `r0..r1`, columns `c0..c1`.
    pub fn slice(self, r0: usize, r1: usize, c0: usize, c1: usize) -> Var<'t> {
        let x = self.value();
        assert!(
            r1 <= x.rows() && c1 <= x.cols() && r0 <= r1 && c0 <= c1,
            "slice out of range"
        );
        let v = Matrix::from_fn(r1 - r0, c1 - c0, |i, j| x[(r0 + i, c0 + j)]);
        self.tape.push(
            v,
            Op::Slice {
                src: self.id,
                r0,
                c0,
            },
        )
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let v = self.value().select_rows(idx);
        self.tape
            .push(v, Op::GatherRows(self.id, Rc::new(idx.to_vec())))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.rows(), b.rows(), "concat_cols row mismatch");
        let ca = a.cols();
        let v = Matrix::from_fn(a.rows(), ca + b.cols(), |i, j| {
            if j < ca {
                a[(i, j)]
            } else {
                b[(i, j - ca)]
            }
        });
        self.tape.push(v, Op::ConcatCols(self.id, other.id))
    }

    /// Diagonal matrix from a row or column vector.
    pub fn diag(self) -> Var<'t> {
        let x = self.value();
        assert!(x.rows() == 1 || x.cols() == 1, "diag needs a vector");
        let v = Matrix::from_diag(x.data());
        self.tape.push(v, Op::Diag(self.id))
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag_part(self) -> Var<'t> {
        let x = self.value();
        assert!(x.is_square(), "diag_part needs a square matrix");
        let v = Matrix::col_vector(&x.diag());
        self.tape.push(v, Op::DiagPart(self.id))
    }

    /// Eigenvalues (`n x 1`, descending) and eigenvectors (`n x n`) of a
    /// symmetric matrix.
    pub fn sym_eig(self) -> Result<(Var<'t>, Var<'t>)> {
        let eig = Rc::new(sym_eig(&self.value())?);
        let vals = Matrix::col_vector(&eig.eigenvalues);
        let vecs = eig.eigenvectors.clone();
        let l = self.tape.push(vals, Op::EigVals(self.id, Rc::clone(&eig)));
        let q = self.tape.push(vecs, Op::EigVecs(self.id, eig));
        Ok((l, q))
    }

    /// `Q f(Λ) Qᵀ` for a symmetric input, differentiated with divided differences.
    pub fn sym_fn(self, f: MatFn) -> Result<Var<'t>> {
        let (v, eig) = mat_fn_sym(&self.value(), f)?;
        Ok(self.tape.push(v, Op::SymFn(self.id, f, Rc::new(eig))))
    }

    /// Rescales any row whose norm exceeds `max` onto the sphere of radius `max`.
    pub fn clip_row_norm(self, max: f64) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for i in 0..v.rows() {
            let norm = v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > max {
                let s = max / norm;
                v.row_mut(i).iter_mut().for_each(|x| *x *= s);
            }
        }
        self.tape.push(v, Op::ClipRowNorm(self.id, max))
    }

    /// Mean over rows of `-log softmax(scores)[label]`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Var<'t> {
        let s = self.value();
        assert_eq!(s.rows(), labels.len(), "one label per row");
        let mut probs = Matrix::zeros(s.rows(), s.cols());
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = s.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for (p, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - m).exp() / z;
            }
            loss += m + z.ln() - row[l];
        }
        let n = labels.len().max(1) as f64;
        self.tape.push(
            Matrix::scalar(loss / n),
            Op::SoftmaxCrossEntropy(self.id, Rc::new(labels.to_vec()), Rc::new(probs)),
        )
    }

    /// Sums consecutive groups of `k` rows: row `i` of the result is the sum of
    /// rows `i*k .. (i+1)*k`.
    pub fn sum_row_groups(self, k: usize) -> Var<'t> {
        let x = self.value();
        assert!(
            k > 0 && x.rows() % k == 0,
            "row count must be a multiple of the group size"
        );
        let mut v = Matrix::zeros(x.rows() / k, x.cols());
        for i in 0..x.rows() {
            for (o, &xi) in v.row_mut(i / k).iter_mut().zip(x.row(i)) {
                *o += xi;
            }
        }
        self.tape.push(v, Op::SumRowGroups(self.id, k))
    }

    /// Vertical concatenation of vars with equal column counts.
    pub fn stack_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "stack_rows needs at least one part");
        let tape = parts[0].tape;
        parts.iter().for_each(|p| parts[0].same_tape(p));
        let values: Vec<Matrix> = parts.iter().map(|p| (*p.value()).clone()).collect();
        let v = Matrix::vstack(&values);
        tape.push(
            v,
            Op::StackRows(Rc::new(parts.iter().map(|p| p.id).collect())),
        )
    }

    /// `(A + Aᵀ)/2`.
    pub fn sym(self) -> Var<'t> {
        self.add(self.t()).scale(0.5)
    }

    /// Squared Euclidean norm of every row (`r x 1`).
    pub fn row_sq_norms(self) -> Var<'t> {
        self.square().sum_rows()
    }

    /// Row-wise dot products (`r x 1`).
    pub fn row_dots(self, other: Var<'t>) -> Var<'t> {
        self.mul(other).sum_rows()
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::$inner(self, rhs)
            }
        }
    };
}

var_binop!(Add, add, add);
var_binop!(Sub, sub, sub);
var_binop!(Mul, mul, mul);
var_binop!(Div, div, div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.add_scalar(rhs)
    }
}

impl<'t> std::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.add_scalar(-rhs)
    }
}
