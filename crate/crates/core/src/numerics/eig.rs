//! Symmetric eigendecomposition (cyclic Jacobi) and the spectral matrix
//! functions built on it.

use super::Matrix;
use crate::error::{precondition, Error, Result};

/// Sweep cap for the cyclic Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative off-diagonal Frobenius norm at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Smallest eigenvalue accepted by the logarithm, square root and inverse square root.
pub const EIG_FLOOR: f64 = 1e-10;
/// Relative asymmetry tolerated before an input is rejected as non-symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// `Q diag(λ) Qᵀ` with eigenvalues sorted in descending order and column `i`
/// of `eigenvectors` paired with `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigDecomposition {
    /// `Q diag(f(λ)) Qᵀ`, symmetrized exactly.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, &fk) in fl.iter().enumerate() {
                    acc += q[(i, k)] * fk * q[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|l| l)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::INFINITY)
    }
}

pub(crate) fn check_symmetric(s: &Matrix, what: &str) -> Result<()> {
    if !s.is_square() {
        return precondition(format!(
            "{what}: matrix is {}x{}, expected square",
            s.rows(),
            s.cols()
        ));
    }
    if !s.is_finite() {
        return precondition(format!("{what}: matrix has non-finite entries"));
    }
    let tol = SYMMETRY_TOLERANCE * s.max_abs().max(1.0);
    let asym = s.asymmetry();
    if asym > tol {
        return precondition(format!(
            "{what}: matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        ));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Only the upper triangle is read after the symmetry check. Eigenvectors are
/// sign-normalized so that their first non-negligible entry is positive.
pub fn sym_eig(s: &Matrix) -> Result<EigDecomposition> {
    check_symmetric(s, "sym_eig")?;
    let n = s.rows();
    let mut a = Matrix::from_fn(n, n, |i, j| if i <= j { s[(i, j)] } else { s[(j, i)] });
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = n <= 1 || scale == 0.0;
    let mut sweep = 0;
    while !converged {
        let off = off_diagonal_norm(&a);
        if off <= JACOBI_TOLERANCE * scale {
            converged = true;
            break;
        }
        if sweep == JACOBI_MAX_SWEEPS {
            break;
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t);
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut q = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        let col = v.col(old);
        let peak = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let sign = col
            .iter()
            .find(|x| x.abs() >= 1e-8 * peak)
            .map_or(1.0, |x| x.signum());
        for (i, x) in col.iter().enumerate() {
            q[(i, new)] = sign * x;
        }
    }
    Ok(EigDecomposition {
        eigenvalues,
        eigenvectors: q,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    acc.sqrt()
}

/// Applies the rotation annihilating `a[p][q]`, accumulating it into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.rows();
    let apq = a[(p, q)];
    let tau = s / (1.0 + c);
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = akp - s * (akq + tau * akp);
        let new_kq = akq + s * (akp - tau * akq);
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp - s * (vkq + tau * vkp);
        v[(k, q)] = vkq + s * (vkp - tau * vkq);
    }
}

/// Scalar functions lifted to symmetric matrices through the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatFn {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
}

impl MatFn {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => x.exp(),
            MatFn::Log => x.ln(),
            MatFn::Sqrt => x.sqrt(),
            MatFn::InvSqrt => 1.0 / x.sqrt(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => x.exp(),
            MatFn::Log => 1.0 / x,
            MatFn::Sqrt => 0.5 / x.sqrt(),
            MatFn::InvSqrt => -0.5 / (x * x.sqrt()),
        }
    }

    /// First divided difference `(f(a) - f(b)) / (a - b)`, equal to `f'(a)`
    /// when `a == b`. Each form avoids cancellation for close arguments.
    pub fn divided_difference(self, a: f64, b: f64) -> f64 {
        if a == b {
            return self.derivative(a);
        }
        match self {
            MatFn::Exp => {
                let (hi, lo) = if a > b { (a, b) } else { (b, a) };
                let d = hi - lo;
                lo.exp() * d.exp_m1() / d
            }
            MatFn::Log => {
                let d = a - b;
                if (d / b).abs() < 0.5 {
                    (d / b).ln_1p() / d
                } else {
                    (a.ln() - b.ln()) / d
                }
            }
            MatFn::Sqrt => 1.0 / (a.sqrt() + b.sqrt()),
            MatFn::InvSqrt => {
                let (ra, rb) = (a.sqrt(), b.sqrt());
                -1.0 / (ra * rb * (ra + rb))
            }
        }
    }

    /// Whether the function needs strictly positive eigenvalues.
    pub fn needs_positive(self) -> bool {
        !matches!(self, MatFn::Exp)
    }
}

/// Applies `f` spectrally, returning the result with the decomposition it used.
pub fn mat_fn_sym(s: &Matrix, f: MatFn) -> Result<(Matrix, EigDecomposition)> {
    let eig = sym_eig(s)?;
    if f.needs_positive() {
        let min = eig.min_eigenvalue();
        if !(min > EIG_FLOOR) {
            return Err(Error::Singularity {
                eigenvalue: min,
                floor: EIG_FLOOR,
            });
        }
    }
    Ok((eig.reconstruct_with(|l| f.apply(l)), eig))
}

/// Matrix exponential of a symmetric matrix.
pub fn mat_exp_sym(v: &Matrix) -> Result<Matrix> {
    mat_fn_sym(v, MatFn::Exp).map(|(m, _)| m)
}

/// Principal logarithm of an SPD matrix. Fails with [`Error::Singularity`]
/// when an eigenvalue is at or below [`EIG_FLOOR`].
pub fn mat_log_spd(x: &Matrix) -> Result<Matrix> {
    mat_fn_sym(x, MatFn::Log).map(|(m, _)| m)
}

pub fn mat_sqrt_spd(x: &Matrix) -> Result<Matrix> {
    mat_fn_sym(x, MatFn::Sqrt).map(|(m, _)| m)
}

pub fn mat_inv_sqrt_spd(x: &Matrix) -> Result<Matrix> {
    mat_fn_sym(x, MatFn::InvSqrt).map(|(m, _)| m)
}

/// Outcome of a Cholesky factorization attempt. Failure is an ordinary
/// outcome: it is how near-singular covariance matrices are filtered.
#[derive(Debug, Clone)]
pub enum Cholesky {
    Factor(Matrix),
    NotPositiveDefinite { pivot_index: usize, pivot: f64 },
}

impl Cholesky {
    pub fn is_factor(&self) -> bool {
        matches!(self, Cholesky::Factor(_))
    }

    pub fn factor(self) -> Option<Matrix> {
        match self {
            Cholesky::Factor(l) => Some(l),
            Cholesky::NotPositiveDefinite { .. } => None,
        }
    }
}

/// Lower-triangular `L` with `L Lᵀ = X`; fails as soon as a pivot is `<= 0`.
pub fn cholesky(x: &Matrix) -> Result<Cholesky> {
    cholesky_with_floor(x, 0.0)
}

/// Like [`cholesky`], but a pivot `<= floor` also counts as failure.
pub fn cholesky_with_floor(x: &Matrix, floor: f64) -> Result<Cholesky> {
    check_symmetric(x, "cholesky")?;
    let n = x.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = x[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) {
            return Ok(Cholesky::NotPositiveDefinite {
                pivot_index: j,
                pivot,
            });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut acc = x[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / d;
        }
    }
    Ok(Cholesky::Factor(l))
}
