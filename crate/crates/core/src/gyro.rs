//! Gyrovector operations: hyperbolic matrix-vector products, SPD gyro-addition
//! and the gyrovector residual connection.

use crate::error::{precondition, Error, Result};
use crate::manifolds::{mobius_add_tape, Manifold};
use crate::numerics::{mat_sqrt_spd, MatFn, Matrix, Var};

/// `M^⊗(x) = tanh(‖Mx‖/‖x‖ · artanh(√c‖x‖)) Mx / (√c‖Mx‖)` for a row `x`
/// in the ball of curvature `-c`. `x = 0` and `Mx = 0` both map to `0`.
pub fn hyp_matvec(m: &Matrix, x: &[f64], curvature: f64) -> Result<Vec<f64>> {
    if !(curvature < 0.0) {
        return precondition(format!("curvature must be negative, got {curvature}"));
    }
    if !m.is_square() || m.cols() != x.len() {
        return precondition(format!(
            "matrix {:?} does not act on dimension {}",
            m.shape(),
            x.len()
        ));
    }
    let sc = (-curvature).sqrt();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if sc * xn >= 1.0 {
        return Err(Error::Domain(format!("‖x‖ = {xn} is outside the ball")));
    }
    let mx: Vec<f64> = (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    let mn = mx.iter().map(|v| v * v).sum::<f64>().sqrt();
    if xn == 0.0 || mn == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let scale = (mn / xn * (sc * xn).atanh()).tanh() / (sc * mn);
    Ok(mx.iter().map(|v| v * scale).collect())
}

/// `X ⊕ Y = √X Y √X`.
pub fn spd_gyro_add(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.shape() != y.shape() {
        return precondition(format!("shapes {:?} and {:?} differ", x.shape(), y.shape()));
    }
    let half = mat_sqrt_spd(x)?;
    Ok(half.matmul(y).matmul(&half).symmetrize())
}

/// Gyrovector residual step: `x ⊕ v` with the ambient coordinates of `v`
/// used as a ball vector (Poincaré), `x + v` (Euclidean), and
/// `√L X √L` with `L = expm(V)` (SPD).
pub fn gyro_residual_tape<'t>(m: &Manifold, x: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    match *m {
        Manifold::Euclidean { .. } => Ok(x.add(v)),
        Manifold::Poincare { curvature, .. } => {
            let c = -curvature;
            let inside = v.clip_row_norm(m.ball_limit());
            Ok(mobius_add_tape(x, inside, c).clip_row_norm(m.ball_limit()))
        }
        Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => {
            let half = v.sym().scale(0.5).sym_fn(MatFn::Exp)?;
            Ok(half.matmul(x).matmul(half).sym())
        }
        Manifold::Sphere { .. } => Err(Error::Config(
            "the gyrovector residual is not defined on the sphere".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{mobius_add, Point};
    use crate::numerics::{mat_exp_sym, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ball_point(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r = rng.random_range(0.05..0.9);
        v.iter().map(|a| a * r / n).collect()
    }

    #[test]
    fn matvec_examples() {
        let x = [0.3, -0.4];
        let y = hyp_matvec(&Matrix::identity(2), &x, -1.0).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15 && (y[1] + 0.4).abs() < 1e-15);
        let y = hyp_matvec(&Matrix::identity(2).scale(2.0), &[0.5, 0.0], -1.0).unwrap();
        assert!((y[0] - 0.8).abs() < 1e-15 && y[1] == 0.0);
        assert_eq!(
            hyp_matvec(&Matrix::identity(2), &[0.0, 0.0], -1.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            hyp_matvec(&Matrix::zeros(2, 2), &x, -1.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(hyp_matvec(&Matrix::identity(2), &[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn matvec_composition_collapses_to_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = rng.random_range(2..5);
            let m1 = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let m2 = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let x = random_ball_point(d, &mut rng);
            let c = -rng.random_range(0.5..2.0);
            let x: Vec<f64> = x.iter().map(|v| v / (-c as f64).sqrt()).collect();
            let two = hyp_matvec(&m2, &hyp_matvec(&m1, &x, c).unwrap(), c).unwrap();
            let one = hyp_matvec(&m2.matmul(&m1), &x, c).unwrap();
            for (a, b) in two.iter().zip(&one) {
                assert!((a - b).abs() < 1e-10, "{two:?} vs {one:?}");
            }
        }
    }

    #[test]
    fn spd_gyro_add_examples() {
        let y = Matrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        assert!(
            spd_gyro_add(&Matrix::identity(2), &y)
                .unwrap()
                .max_abs_diff(&y)
                < 1e-10
        );
        assert!(
            spd_gyro_add(&y, &Matrix::identity(2))
                .unwrap()
                .max_abs_diff(&y)
                < 1e-10
        );
        let x = Matrix::from_diag(&[4.0, 1.0]);
        assert!(
            spd_gyro_add(&x, &Matrix::identity(2))
                .unwrap()
                .max_abs_diff(&x)
                < 1e-12
        );
        let z = spd_gyro_add(
            &Matrix::from_diag(&[4.0, 9.0]),
            &Matrix::from_diag(&[2.0, 3.0]),
        )
        .unwrap();
        assert!(z.max_abs_diff(&Matrix::from_diag(&[8.0, 27.0])) < 1e-12);
        assert!(spd_gyro_add(&Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]), &y).is_err());
    }

    #[test]
    fn gyro_residuals_match_plain_operations() {
        let tape = Tape::new();
        let m = Manifold::poincare(2, -1.0).unwrap();
        let x = Matrix::row_vector(&[0.2, -0.1]);
        let v = Matrix::row_vector(&[0.3, 0.4]);
        let out =
            gyro_residual_tape(&m, tape.constant(x.clone()), tape.constant(v.clone())).unwrap();
        assert!(out.value().max_abs_diff(&mobius_add(&x, &v, -1.0).unwrap()) < 1e-15);

        let s = Manifold::spd_affine(2);
        let x = Matrix::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let v = Matrix::from_rows(&[&[0.1, -0.2], &[-0.2, 0.4]]);
        let out =
            gyro_residual_tape(&s, tape.constant(x.clone()), tape.constant(v.clone())).unwrap();
        let expected = spd_gyro_add(&mat_exp_sym(&v).unwrap(), &x).unwrap();
        assert!(out.value().max_abs_diff(&expected) < 1e-12);
        Point::new(s, (*out.value()).clone()).unwrap();
        assert!(gyro_residual_tape(
            &Manifold::sphere(2),
            tape.constant(x.clone()),
            tape.constant(v)
        )
        .is_err());
    }
}
