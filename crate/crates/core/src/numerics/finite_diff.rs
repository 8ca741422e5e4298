use super::Matrix;
use crate::error::Result;

/// Central-difference gradient of a scalar function of several matrices.
pub fn finite_diff_grad(
    f: impl Fn(&[Matrix]) -> Result<f64>,
    params: &[Matrix],
    step: f64,
) -> Result<Vec<Matrix>> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let (r, c) = params[p].shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + step;
            let up = f(&work)?;
            work[p].data_mut()[k] = orig - step;
            let down = f(&work)?;
            work[p].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)` in the Frobenius norm.
pub fn relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    a.sub(b).frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Matrix::row_vector(&[1.0, -2.0]);
        let g =
            finite_diff_grad(|p| Ok(p[0].data().iter().map(|v| v * v).sum()), &[x], 1e-5).unwrap();
        assert!(g[0].max_abs_diff(&Matrix::row_vector(&[2.0, -4.0])) < 1e-8);
    }
}
