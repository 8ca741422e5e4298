//! Dense matrices, symmetric eigendecomposition and reverse-mode differentiation.

mod eig;
mod finite_diff;
mod matrix;
mod tape;

pub use eig::{
    cholesky, cholesky_with_floor, mat_exp_sym, mat_fn_sym, mat_inv_sqrt_spd, mat_log_spd,
    mat_sqrt_spd, sym_eig, Cholesky, EigDecomposition, MatFn, EIG_FLOOR, JACOBI_MAX_SWEEPS,
    JACOBI_TOLERANCE, SYMMETRY_TOLERANCE,
};
pub use finite_diff::{finite_diff_grad, relative_error};
pub use matrix::Matrix;
pub use tape::{acosh1p, sigmoid, softplus, Gradients, Tape, Unary, Var, EIGVEC_GAP_CLAMP};
