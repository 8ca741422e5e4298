//! Geometry descriptors: exponential maps, distances, tangent projection and
//! conversion of Euclidean gradients to Riemannian ones.
//!
//! Vector-valued geometries (Euclidean, Poincaré ball, sphere) store a point as
//! a `1 x d` row; the tape variants accept `N x d` batches, one point per row.
//! SPD geometries store an `n x n` matrix and operate on one matrix at a time.
//!
//! Tangent vectors of the log-Euclidean SPD geometry are expressed in log
//! coordinates: `exp_X(V) = expm(logm X + V)` and `‖V‖_X = ‖V‖_F`.

use std::fmt;

use crate::error::{precondition, Error, Result};
use crate::numerics::{acosh1p, sym_eig, MatFn, Matrix, Tape, Var};

/// Points are pulled back to this fraction of the ball radius when they drift out.
pub const BALL_MARGIN: f64 = 1e-5;
/// Tolerance used by [`validate`] and [`validate_tangent`].
pub const VALIDATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Manifold {
    Euclidean {
        n: usize,
    },
    Poincare {
        n: usize,
        curvature: f64,
    },
    /// The unit sphere `Sⁿ` embedded in `ℝⁿ⁺¹`.
    Sphere {
        n: usize,
    },
    SpdAffine {
        n: usize,
    },
    SpdLogEuclidean {
        n: usize,
    },
}

impl Manifold {
    pub fn euclidean(n: usize) -> Self {
        Manifold::Euclidean { n }
    }

    pub fn poincare(n: usize, curvature: f64) -> Result<Self> {
        if !(curvature < 0.0 && curvature.is_finite()) {
            return precondition(format!(
                "Poincaré curvature must be negative, got {curvature}"
            ));
        }
        Ok(Manifold::Poincare { n, curvature })
    }

    pub fn sphere(n: usize) -> Self {
        Manifold::Sphere { n }
    }

    pub fn spd_affine(n: usize) -> Self {
        Manifold::SpdAffine { n }
    }

    pub fn spd_log_euclidean(n: usize) -> Self {
        Manifold::SpdLogEuclidean { n }
    }

    /// Builds a manifold from its configuration name.
    pub fn from_name(name: &str, n: usize, curvature: f64) -> Result<Self> {
        match name {
            "euclidean" => Ok(Self::euclidean(n)),
            "poincare" => Self::poincare(n, curvature),
            "sphere" => Ok(Self::sphere(n)),
            "spd_affine" => Ok(Self::spd_affine(n)),
            "spd_logeuclidean" => Ok(Self::spd_log_euclidean(n)),
            other => Err(Error::Config(format!("unknown manifold '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Manifold::Euclidean { .. } => "euclidean",
            Manifold::Poincare { .. } => "poincare",
            Manifold::Sphere { .. } => "sphere",
            Manifold::SpdAffine { .. } => "spd_affine",
            Manifold::SpdLogEuclidean { .. } => "spd_logeuclidean",
        }
    }

    /// The `n` the manifold was built with.
    pub fn dim_param(&self) -> usize {
        match *self {
            Manifold::Euclidean { n }
            | Manifold::Poincare { n, .. }
            | Manifold::Sphere { n }
            | Manifold::SpdAffine { n }
            | Manifold::SpdLogEuclidean { n } => n,
        }
    }

    pub fn curvature(&self) -> Option<f64> {
        match *self {
            Manifold::Poincare { curvature, .. } => Some(curvature),
            _ => None,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Euclidean { n } | Manifold::Poincare { n, .. } => n,
            Manifold::Sphere { n } => n + 1,
            Manifold::SpdAffine { n } | Manifold::SpdLogEuclidean { n } => n * n,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            Manifold::Euclidean { n } | Manifold::Poincare { n, .. } | Manifold::Sphere { n } => n,
            Manifold::SpdAffine { n } | Manifold::SpdLogEuclidean { n } => n * (n + 1) / 2,
        }
    }

    pub fn is_spd(&self) -> bool {
        matches!(
            self,
            Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. }
        )
    }

    /// Shape of a single point's coordinates.
    pub fn point_shape(&self) -> (usize, usize) {
        match *self {
            Manifold::SpdAffine { n } | Manifold::SpdLogEuclidean { n } => (n, n),
            _ => (1, self.ambient_dim()),
        }
    }

    /// `-K` for the Poincaré ball.
    fn c(&self) -> f64 {
        match *self {
            Manifold::Poincare { curvature, .. } => -curvature,
            _ => unreachable!("curvature requested for {}", self.name()),
        }
    }

    /// Largest admissible norm for Poincaré points.
    pub fn ball_limit(&self) -> f64 {
        (1.0 - BALL_MARGIN) / self.c().sqrt()
    }

    /// Origin (Euclidean, Poincaré), north pole `e₀` (sphere) or identity (SPD).
    pub fn origin(&self) -> Matrix {
        match *self {
            Manifold::Euclidean { n } | Manifold::Poincare { n, .. } => Matrix::zeros(1, n),
            Manifold::Sphere { n } => {
                Matrix::from_fn(1, n + 1, |_, j| if j == 0 { 1.0 } else { 0.0 })
            }
            Manifold::SpdAffine { n } | Manifold::SpdLogEuclidean { n } => Matrix::identity(n),
        }
    }

    /// Conformal factor `λ_x = 2/(1 - c‖x‖²)` of each row, as an `N x 1` column.
    pub fn conformal_factor<'t>(&self, x: Var<'t>) -> Var<'t> {
        let c = self.c();
        x.row_sq_norms()
            .scale(-c)
            .add_scalar(1.0)
            .recip()
            .scale(2.0)
    }

    /// Exponential map on the tape.
    pub fn exp_tape<'t>(&self, x: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
        match *self {
            Manifold::Euclidean { .. } => Ok(x + v),
            Manifold::Poincare { .. } => {
                let c = self.c();
                let lam = self.conformal_factor(x);
                // tanh(√c λ‖v‖/2) / (√c‖v‖) = (λ/2) tanhc(√s), s = c λ² ‖v‖² / 4
                let s = v.row_sq_norms().mul(lam.square()).scale(c / 4.0);
                let coef = lam
                    .scale(0.5)
                    .mul(s.unary(crate::numerics::Unary::TanhcSqrt));
                let w = v.mul(coef);
                Ok(mobius_add_tape(x, w, c).clip_row_norm(self.ball_limit()))
            }
            Manifold::Sphere { .. } => {
                let v2 = v.row_sq_norms();
                let y = x
                    .mul(v2.unary(crate::numerics::Unary::CosSqrt))
                    .add(v.mul(v2.unary(crate::numerics::Unary::SincSqrt)));
                Ok(normalize_rows(y))
            }
            Manifold::SpdAffine { .. } => {
                let xs = x.sym();
                let half = xs.sym_fn(MatFn::Sqrt)?;
                let inv_half = xs.sym_fn(MatFn::InvSqrt)?;
                let inner = inv_half
                    .matmul(v)
                    .matmul(inv_half)
                    .sym()
                    .sym_fn(MatFn::Exp)?;
                Ok(half.matmul(inner).matmul(half).sym())
            }
            Manifold::SpdLogEuclidean { .. } => {
                let log_x = x.sym().sym_fn(MatFn::Log)?;
                log_x.add(v.sym()).sym().sym_fn(MatFn::Exp)
            }
        }
    }

    /// Squared geodesic distance on the tape; `N x 1` for vector geometries,
    /// `1 x 1` for SPD. Smooth at coincident points.
    pub fn sq_dist_tape<'t>(&self, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        use crate::numerics::Unary;
        match *self {
            Manifold::Euclidean { .. } => Ok(x.sub(y).row_sq_norms()),
            Manifold::Poincare { .. } => {
                let c = self.c();
                let e = poincare_acosh_excess(x, y, c);
                Ok(e.unary(Unary::Acosh1pSq).scale(1.0 / c))
            }
            Manifold::Sphere { .. } => Ok(x.row_dots(y).clamp(-1.0, 1.0).unary(Unary::AcosSq)),
            Manifold::SpdAffine { .. } => {
                let inv_half = x.sym().sym_fn(MatFn::InvSqrt)?;
                let m = inv_half
                    .matmul(y)
                    .matmul(inv_half)
                    .sym()
                    .sym_fn(MatFn::Log)?;
                Ok(m.square().sum())
            }
            Manifold::SpdLogEuclidean { .. } => {
                let lx = x.sym().sym_fn(MatFn::Log)?;
                let ly = y.sym().sym_fn(MatFn::Log)?;
                Ok(lx.sub(ly).square().sum())
            }
        }
    }

    /// Geodesic distance on the tape (not differentiable where it vanishes).
    pub fn dist_tape<'t>(&self, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        use crate::numerics::Unary;
        match *self {
            Manifold::Poincare { .. } => {
                let c = self.c();
                Ok(poincare_acosh_excess(x, y, c)
                    .unary(Unary::Acosh1p)
                    .scale(1.0 / c.sqrt()))
            }
            Manifold::Sphere { .. } => Ok(x.row_dots(y).clamp(-1.0, 1.0).unary(Unary::Acos)),
            _ => Ok(self.sq_dist_tape(x, y)?.sqrt()),
        }
    }

    /// Orthogonal projection of ambient vectors onto the tangent space at `x`.
    pub fn proj_tape<'t>(&self, x: Var<'t>, u: Var<'t>) -> Var<'t> {
        match self {
            Manifold::Euclidean { .. } | Manifold::Poincare { .. } => u,
            Manifold::Sphere { .. } => u.sub(x.mul(x.row_dots(u))),
            Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => u.sym(),
        }
    }

    /// Converts the ambient gradient `g` of a scalar function at `x` into the
    /// Riemannian gradient.
    pub fn riem_grad_tape<'t>(&self, x: Var<'t>, g: Var<'t>) -> Result<Var<'t>> {
        match self {
            Manifold::Euclidean { .. } => Ok(g),
            Manifold::Poincare { .. } => {
                let lam = self.conformal_factor(x);
                Ok(g.div(lam.square()))
            }
            Manifold::Sphere { .. } => Ok(self.proj_tape(x, g)),
            Manifold::SpdAffine { .. } => {
                let xs = x.sym();
                Ok(xs.matmul(g.sym()).matmul(xs).sym())
            }
            Manifold::SpdLogEuclidean { .. } => {
                // adjoint of the differential of expm at logm X, in the eigenbasis of X
                let (l, q) = x.sym().sym_eig()?;
                let mean = l.log_mean(l.t());
                let inner = q.t().matmul(g.sym()).matmul(q).mul(mean);
                Ok(q.matmul(inner).matmul(q.t()).sym())
            }
        }
    }

    /// Squared Riemannian norm of tangent vectors at `x` (`N x 1` or `1 x 1`).
    pub fn sq_norm_tape<'t>(&self, x: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
        match self {
            Manifold::Euclidean { .. } | Manifold::Sphere { .. } => Ok(v.row_sq_norms()),
            Manifold::Poincare { .. } => {
                Ok(v.row_sq_norms().mul(self.conformal_factor(x).square()))
            }
            Manifold::SpdAffine { .. } => {
                let inv_half = x.sym().sym_fn(MatFn::InvSqrt)?;
                Ok(inv_half.matmul(v).matmul(inv_half).square().sum())
            }
            Manifold::SpdLogEuclidean { .. } => Ok(v.square().sum()),
        }
    }

    /// Pulls points that drifted off the manifold back onto it.
    pub fn retract_tape<'t>(&self, x: Var<'t>) -> Var<'t> {
        match self {
            Manifold::Poincare { .. } => x.clip_row_norm(self.ball_limit()),
            Manifold::Sphere { .. } => normalize_rows(x),
            Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => x.sym(),
            Manifold::Euclidean { .. } => x,
        }
    }

    /// Plain-value retraction of a batch (rows for vector geometries).
    pub fn retract(&self, x: &Matrix) -> Matrix {
        let tape = Tape::new();
        (*self.retract_tape(tape.constant(x.clone())).value()).clone()
    }

    fn check_shape(&self, m: &Matrix, what: &str) -> Result<()> {
        let expected = self.point_shape();
        if m.shape() != expected {
            return precondition(format!(
                "{what} has shape {:?}, expected {:?} for {}",
                m.shape(),
                expected,
                self.name()
            ));
        }
        Ok(())
    }
}

/// Möbius addition of rows of `x` and `y` on the ball with `c = -K`.
pub fn mobius_add_tape<'t>(x: Var<'t>, y: Var<'t>, c: f64) -> Var<'t> {
    let xy = x.row_dots(y);
    let x2 = x.row_sq_norms();
    let y2 = y.row_sq_norms();
    let a = xy.scale(2.0 * c).add(y2.scale(c)).add_scalar(1.0);
    let b = x2.scale(-c).add_scalar(1.0);
    let den = xy
        .scale(2.0 * c)
        .add(x2.mul(y2).scale(c * c))
        .add_scalar(1.0);
    x.mul(a).add(y.mul(b)).div(den)
}

/// `2c‖x−y‖² / ((1−c‖x‖²)(1−c‖y‖²))`, the argument of `acosh(1 + ·)`.
fn poincare_acosh_excess<'t>(x: Var<'t>, y: Var<'t>, c: f64) -> Var<'t> {
    let num = x.sub(y).row_sq_norms().scale(2.0 * c);
    let dx = x.row_sq_norms().scale(-c).add_scalar(1.0);
    let dy = y.row_sq_norms().scale(-c).add_scalar(1.0);
    num.div(dx.mul(dy))
}

fn normalize_rows(y: Var<'_>) -> Var<'_> {
    y.div(y.row_sq_norms().sqrt())
}

/// A point together with its manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub manifold: Manifold,
    pub coords: Matrix,
}

/// A tangent vector at `base`, in the ambient coordinates of the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub coords: Matrix,
}

impl Point {
    /// Wraps coordinates, checking shape and the manifold constraints.
    pub fn new(manifold: Manifold, coords: Matrix) -> Result<Self> {
        manifold.check_shape(&coords, "point")?;
        let p = Point { manifold, coords };
        if let Err(v) = validate(&p) {
            return Err(Error::Domain(v.to_string()));
        }
        Ok(p)
    }

    /// Wraps coordinates without validating constraints.
    pub fn new_unchecked(manifold: Manifold, coords: Matrix) -> Self {
        Point { manifold, coords }
    }

    pub fn origin(manifold: Manifold) -> Self {
        Point {
            manifold,
            coords: manifold.origin(),
        }
    }

    pub fn tangent(&self, coords: Matrix) -> Result<TangentVector> {
        self.manifold.check_shape(&coords, "tangent vector")?;
        Ok(TangentVector {
            base: self.clone(),
            coords,
        })
    }
}

impl TangentVector {
    /// Riemannian norm `‖v‖_g` at the base point.
    pub fn norm(&self) -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(self.base.coords.clone());
        let v = tape.constant(self.coords.clone());
        Ok(self
            .base
            .manifold
            .sq_norm_tape(x, v)?
            .item()
            .max(0.0)
            .sqrt())
    }
}

/// Möbius addition `x ⊕_K y` of two points of the ball of radius `1/√(-K)`.
pub fn mobius_add(x: &Matrix, y: &Matrix, curvature: f64) -> Result<Matrix> {
    if !(curvature < 0.0) {
        return precondition(format!(
            "Möbius addition needs negative curvature, got {curvature}"
        ));
    }
    let c = -curvature;
    for (name, m) in [("x", x), ("y", y)] {
        for r in 0..m.rows() {
            let n2: f64 = m.row(r).iter().map(|v| v * v).sum();
            if c * n2 >= 1.0 {
                return Err(Error::Domain(format!(
                    "{name} lies on or outside the ball boundary (c‖{name}‖² = {})",
                    c * n2
                )));
            }
        }
    }
    let tape = Tape::new();
    let out = mobius_add_tape(tape.constant(x.clone()), tape.constant(y.clone()), c);
    Ok((*out.value()).clone())
}

fn same_manifold(a: &Point, b: &TangentVector) -> Result<()> {
    if a.manifold != b.base.manifold {
        return precondition("tangent vector belongs to a different manifold");
    }
    if a.coords != b.base.coords {
        return precondition("tangent vector is based at a different point");
    }
    Ok(())
}

/// Exponential map `exp_p(v)`.
pub fn exp_map(p: &Point, v: &TangentVector) -> Result<Point> {
    same_manifold(p, v)?;
    if !v.coords.is_finite() {
        return Err(Error::Numeric(
            "tangent vector has non-finite entries".into(),
        ));
    }
    let tape = Tape::new();
    let out = p.manifold.exp_tape(
        tape.constant(p.coords.clone()),
        tape.constant(v.coords.clone()),
    )?;
    Ok(Point::new_unchecked(p.manifold, (*out.value()).clone()))
}

/// Geodesic distance.
pub fn dist(p: &Point, q: &Point) -> Result<f64> {
    if p.manifold != q.manifold {
        return precondition("points lie on different manifolds");
    }
    let m = p.manifold;
    match m {
        Manifold::Poincare { .. } => {
            let c = m.c();
            let d2: f64 = p.coords.sub(&q.coords).data().iter().map(|v| v * v).sum();
            let px: f64 = p.coords.data().iter().map(|v| v * v).sum();
            let qx: f64 = q.coords.data().iter().map(|v| v * v).sum();
            let e = 2.0 * c * d2 / ((1.0 - c * px) * (1.0 - c * qx));
            Ok(acosh1p(e) / c.sqrt())
        }
        // chord form of arccos⟨p, q⟩: exact zero at p = q, no loss for close points
        Manifold::Sphere { .. } => Ok(2.0
            * (0.5 * p.coords.sub(&q.coords).frobenius_norm())
                .min(1.0)
                .asin()),
        _ => {
            let tape = Tape::new();
            let d2 = m.sq_dist_tape(
                tape.constant(p.coords.clone()),
                tape.constant(q.coords.clone()),
            )?;
            Ok(d2.item().max(0.0).sqrt())
        }
    }
}

/// Orthogonal projection of an ambient array onto `T_p M`.
pub fn proj_tangent(p: &Point, u: &Matrix) -> Result<TangentVector> {
    p.manifold.check_shape(u, "ambient vector")?;
    let tape = Tape::new();
    let out = p
        .manifold
        .proj_tape(tape.constant(p.coords.clone()), tape.constant(u.clone()));
    p.tangent((*out.value()).clone())
}

/// Riemannian gradient from the ambient gradient of a scalar function at `p`.
pub fn riem_grad(p: &Point, euclidean_grad: &Matrix) -> Result<TangentVector> {
    p.manifold.check_shape(euclidean_grad, "gradient")?;
    let tape = Tape::new();
    let out = p.manifold.riem_grad_tape(
        tape.constant(p.coords.clone()),
        tape.constant(euclidean_grad.clone()),
    )?;
    p.tangent((*out.value()).clone())
}

/// Riemannian inner product `⟨u, v⟩_p`.
pub fn inner(p: &Point, u: &Matrix, v: &Matrix) -> Result<f64> {
    let m = p.manifold;
    match m {
        Manifold::Euclidean { .. } | Manifold::Sphere { .. } | Manifold::SpdLogEuclidean { .. } => {
            Ok(u.dot(v))
        }
        Manifold::Poincare { .. } => {
            let x2: f64 = p.coords.data().iter().map(|v| v * v).sum();
            let lam = 2.0 / (1.0 - m.c() * x2);
            Ok(lam * lam * u.dot(v))
        }
        Manifold::SpdAffine { .. } => {
            let inv = crate::numerics::mat_inv_sqrt_spd(&p.coords.symmetrize())?;
            let a = inv.matmul(u).matmul(&inv);
            let b = inv.matmul(v).matmul(&inv);
            Ok(a.dot(&b))
        }
    }
}

/// First constraint a point or tangent vector violates.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.constraint, self.detail)
    }
}

fn violation(constraint: &'static str, detail: String) -> std::result::Result<(), Violation> {
    Err(Violation { constraint, detail })
}

/// Checks the manifold constraints of a point with tolerance 1e-9.
pub fn validate(p: &Point) -> std::result::Result<(), Violation> {
    let m = p.manifold;
    let x = &p.coords;
    if x.shape() != m.point_shape() {
        return violation(
            "shape",
            format!("{:?} instead of {:?}", x.shape(), m.point_shape()),
        );
    }
    if !x.is_finite() {
        return violation("finite", "coordinates contain NaN or infinity".into());
    }
    match m {
        Manifold::Euclidean { .. } => Ok(()),
        Manifold::Poincare { .. } => {
            let n2: f64 = x.data().iter().map(|v| v * v).sum();
            let limit = 1.0 / m.c();
            if n2 >= limit {
                violation("inside ball", format!("‖x‖² = {n2} is not below {limit}"))
            } else {
                Ok(())
            }
        }
        Manifold::Sphere { .. } => {
            let norm = x.frobenius_norm();
            if (norm - 1.0).abs() > VALIDATE_TOLERANCE {
                violation("unit norm", format!("norm ≠ 1 (‖x‖ = {norm})"))
            } else {
                Ok(())
            }
        }
        Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => {
            let asym = x.asymmetry();
            if asym > VALIDATE_TOLERANCE * x.max_abs().max(1.0) {
                return violation("symmetric", format!("max |X - Xᵀ| = {asym:e}"));
            }
            match sym_eig(&x.symmetrize()) {
                Ok(eig) => {
                    let min = eig.min_eigenvalue();
                    if min <= 0.0 {
                        violation("positive definite", format!("eigenvalue {min} ≤ 0"))
                    } else {
                        Ok(())
                    }
                }
                Err(e) => violation("positive definite", e.to_string()),
            }
        }
    }
}

/// Checks the tangent-space constraints of a tangent vector.
pub fn validate_tangent(v: &TangentVector) -> std::result::Result<(), Violation> {
    validate(&v.base)?;
    let m = v.base.manifold;
    if v.coords.shape() != m.point_shape() {
        return violation(
            "shape",
            format!("{:?} instead of {:?}", v.coords.shape(), m.point_shape()),
        );
    }
    match m {
        Manifold::Sphere { .. } => {
            let d = v.base.coords.dot(&v.coords);
            if d.abs() > VALIDATE_TOLERANCE {
                violation("orthogonal to base", format!("⟨x, v⟩ = {d:e}"))
            } else {
                Ok(())
            }
        }
        Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => {
            let asym = v.coords.asymmetry();
            if asym > VALIDATE_TOLERANCE * v.coords.max_abs().max(1.0) {
                violation("symmetric", format!("max |V - Vᵀ| = {asym:e}"))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}
