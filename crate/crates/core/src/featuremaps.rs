//! Scalar geometric feature maps `g: M → ℝ` and banks of `k` of them.
//!
//! A bank evaluates all of its maps on a batch of points and keeps the
//! intermediate quantities needed for the Euclidean gradients `∂g_j/∂x`,
//! which the feature-induced vector fields combine into tangent vectors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{precondition, Error, Result};
use crate::manifolds::{Manifold, Point, TangentVector};
use crate::numerics::{sym_eig, Matrix, Tape, Unary, Var};
use crate::optim::{Bound, Constraint, ParamId, ParamStore};

/// Guard `ε` for horosphere evaluation: `‖x̃‖ ≤ 1 - ε` and `‖x̃ - ω‖ ≥ ε`.
pub const HORO_EPS: f64 = 1e-6;
/// Iteration cap of the pseudo-hyperplane solver.
pub const PSEUDO_MAX_ITERS: usize = 200;
/// Distance improvement below which the pseudo-hyperplane solver stops.
pub const PSEUDO_TOLERANCE: f64 = 1e-12;
/// Initial step, as a fraction of the disk radius.
pub const PSEUDO_STEP_FRACTION: f64 = 0.1;
/// Upper bound on a Barzilai–Borwein step, relative to `max(r, 1)`.
pub const PSEUDO_MAX_STEP: f64 = 10.0;
/// Distances below this are treated as zero when dividing by them.
const DIST_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Signed affine features `wᵀx + b` (Euclidean only).
    Linear,
    /// Distance to a hyperplane `|wᵀx + b|/‖w‖` (Euclidean only).
    Hyperplane,
    /// Horosphere projection (Poincaré ball only).
    Horosphere,
    /// The `k` largest eigenvalues (SPD only).
    SpdEig,
    /// Distance to a geodesic disk `exp_p(B_r ∩ v⊥)` (Euclidean, Poincaré, sphere).
    PseudoHyperplane,
}

impl FeatureKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(FeatureKind::Linear),
            "hyperplane" => Ok(FeatureKind::Hyperplane),
            "horosphere" => Ok(FeatureKind::Horosphere),
            "spd_eig" => Ok(FeatureKind::SpdEig),
            "pseudo_hyperplane" => Ok(FeatureKind::PseudoHyperplane),
            other => Err(Error::Config(format!("unknown feature map '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Linear => "linear",
            FeatureKind::Hyperplane => "hyperplane",
            FeatureKind::Horosphere => "horosphere",
            FeatureKind::SpdEig => "spd_eig",
            FeatureKind::PseudoHyperplane => "pseudo_hyperplane",
        }
    }

    pub fn supports(&self, m: &Manifold) -> bool {
        match self {
            FeatureKind::Linear | FeatureKind::Hyperplane => {
                matches!(m, Manifold::Euclidean { .. })
            }
            FeatureKind::Horosphere => matches!(m, Manifold::Poincare { .. }),
            FeatureKind::SpdEig => m.is_spd(),
            FeatureKind::PseudoHyperplane => !m.is_spd(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BankParams {
    Affine { w: ParamId, b: ParamId },
    Horosphere { omega: ParamId, b: ParamId },
    SpdEig,
    Pseudo { p: ParamId, v: ParamId, radius: f64 },
}

/// `k` feature maps of one kind on one manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub kind: FeatureKind,
    pub manifold: Manifold,
    k: usize,
    params: BankParams,
}

impl FeatureBank {
    /// Creates a bank, registering its parameters in `store`.
    ///
    /// Horospheres start with `ω` uniform on the sphere and `b ~ N(0, 1)`.
    /// The eigenvalue bank uses the `min(k, n)` largest eigenvalues.
    pub fn new(
        kind: FeatureKind,
        manifold: Manifold,
        k: usize,
        radius: f64,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config(
                "a feature bank needs at least one map".into(),
            ));
        }
        if !kind.supports(&manifold) {
            return Err(Error::Config(format!(
                "feature map '{}' is not available on '{}'",
                kind.name(),
                manifold.name()
            )));
        }
        let d = manifold.ambient_dim();
        let bound = 1.0 / (d as f64).sqrt();
        let params = match kind {
            FeatureKind::Linear | FeatureKind::Hyperplane => {
                let w = store.add(
                    format!("{prefix}.w"),
                    Matrix::from_fn(k, d, |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                let b = store.add(
                    format!("{prefix}.b"),
                    Matrix::from_fn(1, k, |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                BankParams::Affine { w, b }
            }
            FeatureKind::Horosphere => {
                let omega = store.add(
                    format!("{prefix}.omega"),
                    random_unit_rows(k, d, rng),
                    Constraint::UnitRows,
                );
                let b = store.add(
                    format!("{prefix}.b"),
                    Matrix::from_fn(1, k, |_, _| StandardNormal.sample(rng)),
                    Constraint::Free,
                );
                BankParams::Horosphere { omega, b }
            }
            FeatureKind::SpdEig => BankParams::SpdEig,
            FeatureKind::PseudoHyperplane => {
                if !(radius > 0.0) {
                    return Err(Error::Config(format!(
                        "pseudo-hyperplane radius must be positive, got {radius}"
                    )));
                }
                let (p0, constraint) = match manifold {
                    Manifold::Sphere { .. } => (random_unit_rows(k, d, rng), Constraint::UnitRows),
                    Manifold::Poincare { .. } => {
                        let lim = manifold.ball_limit();
                        let p = Matrix::from_fn(k, d, |_, _| {
                            rng.random_range(-0.3..0.3) * lim / (d as f64).sqrt()
                        });
                        (p, Constraint::BallRows { limit: lim })
                    }
                    _ => (
                        Matrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0)),
                        Constraint::Free,
                    ),
                };
                let p = store.add(format!("{prefix}.p"), p0, constraint);
                let v = store.add(
                    format!("{prefix}.v"),
                    random_unit_rows(k, d, rng),
                    Constraint::Free,
                );
                BankParams::Pseudo { p, v, radius }
            }
        };
        let k = if kind == FeatureKind::SpdEig {
            k.min(manifold.dim_param())
        } else {
            k
        };
        Ok(FeatureBank {
            kind,
            manifold,
            k,
            params,
        })
    }

    /// Number of maps.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Ids of the learnable parameters of the bank.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self.params {
            BankParams::Affine { w, b } => vec![w, b],
            BankParams::Horosphere { omega, b } => vec![omega, b],
            BankParams::SpdEig => vec![],
            BankParams::Pseudo { p, v, .. } => vec![p, v],
        }
    }

    /// Pseudo-hyperplane disk radius, if any.
    pub fn radius(&self) -> Option<f64> {
        match self.params {
            BankParams::Pseudo { radius, .. } => Some(radius),
            _ => None,
        }
    }

    /// Evaluates all maps on a batch (`N x d` rows, or one `n x n` SPD matrix).
    pub fn eval<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<FeatureEval<'t>> {
        match &self.params {
            BankParams::Affine { w, b } => {
                let (w, b) = (params[*w], params[*b]);
                let z = x.matmul(w.t()).add(b);
                if self.kind == FeatureKind::Linear {
                    return Ok(FeatureEval {
                        values: z,
                        grad: GradForm::Affine {
                            dirs: w,
                            weights: None,
                        },
                    });
                }
                let norms = w.row_sq_norms().sqrt().t();
                let values = z.abs().div(norms);
                let weights = z.sign().div(norms);
                Ok(FeatureEval {
                    values,
                    grad: GradForm::Affine {
                        dirs: w,
                        weights: Some(weights),
                    },
                })
            }
            BankParams::Horosphere { omega, b } => {
                let c = -self
                    .manifold
                    .curvature()
                    .expect("horosphere on Poincaré ball");
                let sqrt_c = c.sqrt();
                let omega = params[*omega];
                let xt = x.scale(sqrt_c);
                let s = xt.row_sq_norms().clamp(0.0, (1.0 - HORO_EPS).powi(2));
                let one_minus_s = s.rsub_scalar(1.0);
                let w2 = omega.row_sq_norms().t();
                let dist2 = s
                    .add(w2)
                    .sub(xt.matmul(omega.t()).scale(2.0))
                    .clamp_min(HORO_EPS * HORO_EPS);
                let values = one_minus_s.ln().neg().add(dist2.ln()).add(params[*b]);
                Ok(FeatureEval {
                    values,
                    grad: GradForm::Horosphere {
                        xt,
                        one_minus_s,
                        dist2,
                        omega,
                        sqrt_c,
                    },
                })
            }
            BankParams::SpdEig => {
                let n = self.manifold.dim_param();
                let (l, q) = x.sym().sym_eig()?;
                let lk = l.slice(0, self.k, 0, 1).t();
                let qk = q.slice(0, n, 0, self.k);
                let weight = match self.manifold {
                    Manifold::SpdAffine { .. } => lk.square(),
                    _ => lk,
                };
                Ok(FeatureEval {
                    values: lk,
                    grad: GradForm::SpdEig { q: qk, weight },
                })
            }
            BankParams::Pseudo { p, v, radius } => {
                let (p, v) = (params[*p], params[*v]);
                // off the sphere `I - ppᵀ` is no projection, so use the nearest sphere point
                let p = match self.manifold {
                    Manifold::Sphere { .. } => p.div(p.row_sq_norms().sqrt()),
                    _ => p,
                };
                let xs = (*x.value()).clone();
                let sol = solve_pseudo(&self.manifold, &xs, &p.value(), &v.value(), *radius)?;
                if !sol.converged {
                    log::warn!(
                        "pseudo-hyperplane solver hit its iteration cap (best {:.3e})",
                        sol.best
                    );
                }
                let n = xs.rows();
                let k = self.k;
                let rep: Vec<usize> = (0..n * k).map(|i| i / k).collect();
                let tile: Vec<usize> = (0..n * k).map(|i| i % k).collect();
                let xr = x.gather_rows(&rep);
                let pr = p.gather_rows(&tile);
                let vr = v.gather_rows(&tile);
                let (xv, pv, vv) = (xr.value(), pr.value(), vr.value());
                let mut active = sol.active;
                let w_star =
                    polish_minimizer(&self.manifold, &xv, &pv, &vv, sol.w, *radius, &mut active)?;
                let jac =
                    minimizer_jacobians(&self.manifold, &xv, &pv, &vv, &w_star, *radius, &active)?;
                let w_star = tracked_minimizer(w_star, [xr, pr, vr], &jac);
                let w = project_disk_at(&self.manifold, pr, vr, w_star, *radius, &active);
                let y = self.manifold.exp_tape(pr, w)?;
                let dist = self
                    .manifold
                    .sq_dist_tape(xr, y)?
                    .clamp_min(DIST_FLOOR * DIST_FLOOR)
                    .sqrt();
                let dsq_grad = sq_dist_grad_x(&self.manifold, xr, y);
                let pair_grads = dsq_grad.div(dist.scale(2.0));
                Ok(FeatureEval {
                    values: dist.reshape(n, k),
                    grad: GradForm::Pair {
                        pair_grads,
                        x,
                        manifold: self.manifold,
                        k,
                    },
                })
            }
        }
    }

    /// Plain-value evaluation; rows of the result are points, columns maps.
    pub fn values(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        let e = self.eval(&b, tape.constant(x.clone()))?;
        Ok((*e.values.value()).clone())
    }
}

fn random_unit_rows(k: usize, d: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::from_fn(k, d, |_, _| StandardNormal.sample(rng));
    for i in 0..k {
        let norm = m
            .row(i)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-300);
        m.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    m
}

enum GradForm<'t> {
    /// `∂g_j/∂x = weight_j · dir_j` (weight 1 when absent).
    Affine {
        dirs: Var<'t>,
        weights: Option<Var<'t>>,
    },
    Horosphere {
        xt: Var<'t>,
        one_minus_s: Var<'t>,
        dist2: Var<'t>,
        omega: Var<'t>,
        sqrt_c: f64,
    },
    /// Riemannian gradient of `λ_j` is `weight_j q_j q_jᵀ`.
    SpdEig { q: Var<'t>, weight: Var<'t> },
    /// Euclidean gradients per (point, map) pair, rows ordered point-major.
    Pair {
        pair_grads: Var<'t>,
        x: Var<'t>,
        manifold: Manifold,
        k: usize,
    },
}

/// Feature values together with what is needed for their gradients.
pub struct FeatureEval<'t> {
    /// `N x k` (or `1 x k` for one SPD matrix).
    pub values: Var<'t>,
    grad: GradForm<'t>,
}

impl<'t> FeatureEval<'t> {
    /// `Σ_j c_j · riem_grad(x, ∂g_j/∂x)` for coefficients `c` shaped like the values.
    pub fn field(&self, c: Var<'t>) -> Result<Var<'t>> {
        match &self.grad {
            GradForm::Affine { dirs, weights } => {
                let cw = match weights {
                    Some(w) => c.mul(*w),
                    None => c,
                };
                Ok(cw.matmul(*dirs))
            }
            GradForm::Horosphere {
                xt,
                one_minus_s,
                dist2,
                omega,
                sqrt_c,
            } => {
                // ∂g_j/∂x = √c [2x̃/(1-s) + 2(x̃ - ω_j)/D_j], then divided by λ² = 4/(1-s)²
                let c_over_d = c.div(*dist2);
                let radial = c.sum_rows().div(*one_minus_s).add(c_over_d.sum_rows());
                let euclid = xt
                    .mul(radial)
                    .sub(c_over_d.matmul(*omega))
                    .scale(2.0 * sqrt_c);
                Ok(euclid.mul(one_minus_s.square()).scale(0.25))
            }
            GradForm::SpdEig { q, weight } => {
                let scaled = q.mul(c.mul(*weight));
                Ok(scaled.matmul(q.t()))
            }
            GradForm::Pair {
                pair_grads,
                x,
                manifold,
                k,
            } => {
                let n = x.rows();
                let flat = c.reshape(n * k, 1);
                let g = pair_grads.mul(flat).sum_row_groups(*k);
                manifold.riem_grad_tape(*x, g)
            }
        }
    }
}

/// Euclidean gradient with respect to `x` of `d²(x, y)`, row by row.
fn sq_dist_grad_x<'t>(m: &Manifold, x: Var<'t>, y: Var<'t>) -> Var<'t> {
    match *m {
        Manifold::Euclidean { .. } => x.sub(y).scale(2.0),
        Manifold::Sphere { .. } => {
            let u = x.row_dots(y).clamp(-1.0, 1.0);
            y.mul(u.unary(Unary::AcosRatio)).scale(-2.0)
        }
        Manifold::Poincare { curvature, .. } => {
            let c = -curvature;
            let alpha = x.row_sq_norms().scale(-c).add_scalar(1.0);
            let beta = y.row_sq_norms().scale(-c).add_scalar(1.0);
            let diff = x.sub(y);
            let e = diff.row_sq_norms().scale(2.0 * c).div(alpha.mul(beta));
            let de = diff
                .scale(4.0 * c)
                .div(alpha.mul(beta))
                .add(x.mul(e.div(alpha)).scale(2.0 * c));
            de.mul(e.unary(Unary::Acosh1pRatio)).scale(2.0 / c)
        }
        _ => unreachable!("pseudo-hyperplanes are not defined on SPD manifolds"),
    }
}

fn project_plane<'t>(m: &Manifold, p: Var<'t>, v: Var<'t>, w: Var<'t>) -> Var<'t> {
    let (w, v) = match m {
        Manifold::Sphere { .. } => (m.proj_tape(p, w), m.proj_tape(p, v)),
        _ => (w, v),
    };
    w.sub(v.mul(w.row_dots(v).div(v.row_sq_norms())))
}

/// Riemannian norm scale: `λ_p` on the ball, 1 elsewhere.
fn metric_scale<'t>(m: &Manifold, p: Var<'t>) -> Option<Var<'t>> {
    match m {
        Manifold::Poincare { .. } => Some(m.conformal_factor(p)),
        _ => None,
    }
}

/// Projects tangent vectors `w` at `p` onto the disk `{w ⊥ v, ‖w‖_p ≤ r}`.
fn project_disk<'t>(m: &Manifold, p: Var<'t>, v: Var<'t>, w: Var<'t>, r: f64) -> Var<'t> {
    let w = project_plane(m, p, v, w);
    match metric_scale(m, p) {
        Some(lam) => w.mul(lam).clip_row_norm(r).div(lam),
        None => w.clip_row_norm(r),
    }
}

/// Like [`project_disk`], but rows whose minimizer sits on the rim are
/// rescaled onto it, so the radius constraint stays active under
/// perturbations of `p` and `v`.
fn project_disk_at<'t>(
    m: &Manifold,
    p: Var<'t>,
    v: Var<'t>,
    w: Var<'t>,
    r: f64,
    active: &[bool],
) -> Var<'t> {
    let w = project_plane(m, p, v, w);
    let scaled_norm = match metric_scale(m, p) {
        Some(lam) => w.row_sq_norms().sqrt().mul(lam),
        None => w.row_sq_norms().sqrt(),
    };
    let mask = p.tape().constant(Matrix::from_fn(active.len(), 1, |i, _| {
        if active[i] {
            1.0
        } else {
            0.0
        }
    }));
    let keep = mask.rsub_scalar(1.0);
    // inactive rows divide by 1 instead of a possibly vanishing norm
    let denom = scaled_norm.mul(mask).add(keep);
    let factor = mask.scale(r).div(denom).add(keep);
    w.mul(factor)
}

/// Minimizers of the pseudo-hyperplane problem for every (point, map) pair.
struct PseudoSolution {
    /// `(N·k) x d`, point-major.
    w: Matrix,
    /// Rows whose minimizer lies on the rim of the disk.
    active: Vec<bool>,
    converged: bool,
    best: f64,
}

fn pseudo_objective(
    m: &Manifold,
    x: &Matrix,
    p: &Matrix,
    v: &Matrix,
    w: &Matrix,
    r: f64,
) -> Result<Matrix> {
    let t = Tape::new();
    let (xv, pv, vv) = (
        t.constant(x.clone()),
        t.constant(p.clone()),
        t.constant(v.clone()),
    );
    let wp = project_disk(m, pv, vv, t.constant(w.clone()), r);
    let y = m.exp_tape(pv, wp)?;
    Ok((*m.sq_dist_tape(xv, y)?.value()).clone())
}

/// Batched projected gradient descent with per-row backtracking.
fn solve_pseudo(
    m: &Manifold,
    x: &Matrix,
    p: &Matrix,
    v: &Matrix,
    r: f64,
) -> Result<PseudoSolution> {
    let (n, k, d) = (x.rows(), p.rows(), p.cols());
    if v.row_norms().iter().any(|&nv| nv == 0.0) {
        return precondition("pseudo-hyperplane normal v must be nonzero");
    }
    let rows = n * k;
    let rep: Vec<usize> = (0..rows).map(|i| i / k).collect();
    let tile: Vec<usize> = (0..rows).map(|i| i % k).collect();
    let xr = x.select_rows(&rep);
    let pr = p.select_rows(&tile);
    let vr = v.select_rows(&tile);
    let scale2: Vec<f64> = match m {
        Manifold::Poincare { curvature, .. } => (0..rows)
            .map(|i| {
                let p2: f64 = pr.row(i).iter().map(|a| a * a).sum();
                let lam = 2.0 / (1.0 + curvature * p2);
                lam * lam
            })
            .collect(),
        _ => vec![1.0; rows],
    };
    let mut w = Matrix::zeros(rows, d);
    let mut obj = pseudo_objective(m, &xr, &pr, &vr, &w, r)?;
    let mut step = vec![PSEUDO_STEP_FRACTION * r; rows];
    let mut done = vec![false; rows];
    let mut prev: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; rows];
    for _ in 0..PSEUDO_MAX_ITERS {
        if done.iter().all(|&f| f) {
            break;
        }
        let t = Tape::new();
        let wv = t.param(w.clone());
        let (xv, pv, vv) = (
            t.constant(xr.clone()),
            t.constant(pr.clone()),
            t.constant(vr.clone()),
        );
        let y = m.exp_tape(pv, project_disk(m, pv, vv, wv, r))?;
        let total = m.sq_dist_tape(xv, y)?.sum();
        let g = t.backward(total).wrt(wv);
        // Barzilai–Borwein step from the last accepted move
        for i in 0..rows {
            if let Some((wp, gp)) = prev[i].take() {
                let (mut ss, mut sy) = (0.0, 0.0);
                for j in 0..d {
                    let sj = w[(i, j)] - wp[j];
                    ss += sj * sj;
                    sy += sj * (g[(i, j)] - gp[j]);
                }
                if sy > 0.0 && ss > 0.0 {
                    step[i] = (scale2[i] * ss / sy).min(PSEUDO_MAX_STEP * r.max(1.0));
                }
            }
        }
        let mut trial = w.clone();
        for i in 0..rows {
            if done[i] {
                continue;
            }
            for (tj, gj) in trial.row_mut(i).iter_mut().zip(g.row(i)) {
                *tj -= step[i] * gj / scale2[i];
            }
        }
        let trial_obj = pseudo_objective(m, &xr, &pr, &vr, &trial, r)?;
        // keep iterates feasible so the next gradient is taken on the disk
        let projected = {
            let t = Tape::new();
            let out = project_disk(
                m,
                t.constant(pr.clone()),
                t.constant(vr.clone()),
                t.constant(trial.clone()),
                r,
            );
            (*out.value()).clone()
        };
        for i in 0..rows {
            if done[i] {
                continue;
            }
            let (old, new) = (obj[(i, 0)], trial_obj[(i, 0)]);
            if new < old {
                prev[i] = Some((w.row(i).to_vec(), g.row(i).to_vec()));
                w.row_mut(i).copy_from_slice(projected.row(i));
                obj[(i, 0)] = new;
                step[i] *= 2.0;
                if old.max(0.0).sqrt() - new.max(0.0).sqrt() < PSEUDO_TOLERANCE {
                    done[i] = true;
                }
            } else {
                step[i] *= 0.5;
                if step[i] < 1e-14 * r.max(1.0) {
                    done[i] = true;
                }
            }
        }
    }
    let best = obj.data().iter().cloned().fold(0.0, f64::max).sqrt();
    let converged = done.iter().all(|&f| f);
    // return feasible minimizers
    let t = Tape::new();
    let pv = t.constant(pr);
    let wp = project_disk(m, pv, t.constant(vr), t.constant(w), r);
    let norms = match metric_scale(m, pv) {
        Some(lam) => wp.row_sq_norms().sqrt().mul(lam),
        None => wp.row_sq_norms().sqrt(),
    };
    let active = norms
        .value()
        .data()
        .iter()
        .map(|&n| n >= r * (1.0 - 1e-9))
        .collect();
    Ok(PseudoSolution {
        w: (*wp.value()).clone(),
        active,
        converged,
        best,
    })
}

/// Per-row objective `d²(x, exp_p(w))` and its gradient in `w`, with `w`
/// mapped onto the disk as in [`project_disk_at`].
fn pseudo_grad_w(
    m: &Manifold,
    x: &Matrix,
    p: &Matrix,
    v: &Matrix,
    w: &Matrix,
    r: f64,
    active: &[bool],
) -> Result<(Matrix, Matrix)> {
    let t = Tape::new();
    let wv = t.param(w.clone());
    let (pv, vv) = (t.constant(p.clone()), t.constant(v.clone()));
    let y = m.exp_tape(pv, project_disk_at(m, pv, vv, wv, r, active))?;
    let obj = m.sq_dist_tape(t.constant(x.clone()), y)?;
    let g = t.backward(obj.sum()).wrt(wv);
    Ok(((*obj.value()).clone(), g))
}

/// Step of the central differences of the exact gradient in `w`.
const JACOBIAN_STEP: f64 = 1e-5;
/// Newton steps polishing the first-order solution.
const NEWTON_STEPS: usize = 3;

/// Central differences of the `w`-gradient along column `l` of argument
/// `which` (0 = x, 1 = p, 2 = v, 3 = w), for all rows at once.
fn grad_derivs(
    m: &Manifold,
    args: [&Matrix; 4],
    which: usize,
    r: f64,
    active: &[bool],
) -> Result<Vec<Matrix>> {
    let h = JACOBIAN_STEP;
    (0..args[which].cols())
        .map(|l| {
            let shifted = |sign: f64| -> Result<Matrix> {
                let mut a: [Matrix; 4] = std::array::from_fn(|k| args[k].clone());
                for i in 0..a[which].rows() {
                    a[which][(i, l)] += sign * h;
                }
                Ok(pseudo_grad_w(m, &a[0], &a[1], &a[2], &a[3], r, active)?.1)
            };
            Ok(shifted(1.0)?.sub(&shifted(-1.0)?).scale(0.5 / h))
        })
        .collect()
}

/// Row `i` of the per-column derivatives as a `d x d` matrix.
fn row_block(cols: &[Matrix], i: usize) -> Matrix {
    Matrix::from_fn(cols.len(), cols.len(), |a, l| cols[l][(i, a)])
}

/// Minimum-norm inverse of a symmetric matrix. The objective is flat along
/// directions the disk map ignores (the normal `v`, the radial direction on
/// the rim), so its Hessian is singular there; on a one-dimensional disk's
/// rim it vanishes entirely and only difference noise remains.
fn pinv_sym(h: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(&h.add(&h.transpose()).scale(0.5))?;
    let top = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.abs()));
    let d = h.rows();
    Ok(Matrix::from_fn(d, d, |a, b| {
        eig.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, e)| e.abs() > 1e-7 * top.max(1.0))
            .map(|(k, e)| eig.eigenvectors[(a, k)] * eig.eigenvectors[(b, k)] / e)
            .sum()
    }))
}

/// Riemannian norms at `p` of `w` projected onto the plane `⊥ v`.
fn plane_norms(m: &Manifold, p: &Matrix, v: &Matrix, w: &Matrix) -> Vec<f64> {
    let t = Tape::new();
    let pv = t.constant(p.clone());
    let norms = project_plane(m, pv, t.constant(v.clone()), t.constant(w.clone()))
        .row_sq_norms()
        .sqrt();
    let norms = match metric_scale(m, pv) {
        Some(lam) => norms.mul(lam),
        None => norms,
    };
    norms.value().data().to_vec()
}

/// Newton steps from the first-order minimizers, accepted per row unless
/// they increase the objective beyond rounding. Rows move onto the rim when a step leaves
/// the disk, and off it when the objective decreases inward.
fn polish_minimizer(
    m: &Manifold,
    x: &Matrix,
    p: &Matrix,
    v: &Matrix,
    w: Matrix,
    r: f64,
    active: &mut [bool],
) -> Result<Matrix> {
    let mut w = w;
    let rows = w.rows();
    let (_, free) = pseudo_grad_w(m, x, p, v, &w, r, &vec![false; rows])?;
    for (i, on_rim) in active.iter_mut().enumerate() {
        let outward: f64 = free.row(i).iter().zip(w.row(i)).map(|(g, a)| g * a).sum();
        if outward > 0.0 {
            *on_rim = false;
        }
    }
    for _ in 0..NEWTON_STEPS {
        let (obj, g) = pseudo_grad_w(m, x, p, v, &w, r, active)?;
        let hess = grad_derivs(m, [x, p, v, &w], 3, r, active)?;
        let mut trial = w.clone();
        for i in 0..rows {
            let step = pinv_sym(&row_block(&hess, i))?.matmul(&Matrix::col_vector(g.row(i)));
            for (t, s) in trial.row_mut(i).iter_mut().zip(step.data()) {
                *t -= s;
            }
        }
        let mut trial_active = active.to_vec();
        for (i, n) in plane_norms(m, p, v, &trial).into_iter().enumerate() {
            if n > r {
                trial_active[i] = true;
            }
        }
        let (trial_obj, _) = pseudo_grad_w(m, x, p, v, &trial, r, &trial_active)?;
        for i in 0..rows {
            // near the optimum the objective change is below rounding
            let slack = 1e-12 * (1.0 + obj[(i, 0)].abs());
            if trial_obj[(i, 0)] <= obj[(i, 0)] + slack
                && trial.row(i).iter().all(|t| t.is_finite())
            {
                w.row_mut(i).copy_from_slice(trial.row(i));
                active[i] = trial_active[i];
            }
        }
    }
    let t = Tape::new();
    let (pv, vv) = (t.constant(p.clone()), t.constant(v.clone()));
    let out = project_disk_at(m, pv, vv, t.constant(w), r, active);
    Ok((*out.value()).clone())
}

/// Sensitivities `dw*/dx`, `dw*/dp`, `dw*/dv` of the per-row minimizers.
///
/// Stationarity `g(w*(θ), θ) = 0` gives `H·J = -∂g/∂θ` with `H = ∂g/∂w`,
/// solved with the minimum-norm inverse. Block `b` entry `j` holds
/// `J_b[i][j, ·]` in row `i`.
fn minimizer_jacobians(
    m: &Manifold,
    x: &Matrix,
    p: &Matrix,
    v: &Matrix,
    w: &Matrix,
    r: f64,
    active: &[bool],
) -> Result<[Vec<Matrix>; 3]> {
    let (rows, d) = (w.rows(), w.cols());
    let args = [x, p, v, w];
    let hess = grad_derivs(m, args, 3, r, active)?;
    let mixed = [
        grad_derivs(m, args, 0, r, active)?,
        grad_derivs(m, args, 1, r, active)?,
        grad_derivs(m, args, 2, r, active)?,
    ];
    let mut blocks: [Vec<Matrix>; 3] = std::array::from_fn(|_| vec![Matrix::zeros(rows, d); d]);
    for i in 0..rows {
        let pinv = pinv_sym(&row_block(&hess, i))?;
        for (block, cols) in blocks.iter_mut().zip(&mixed) {
            let ji = pinv.matmul(&row_block(cols, i)).scale(-1.0);
            if ji.data().iter().all(|e| e.is_finite()) {
                for (j, bj) in block.iter_mut().enumerate() {
                    bj.row_mut(i).copy_from_slice(ji.row(j));
                }
            } else {
                log::warn!(
                    "pseudo-hyperplane minimizer sensitivity is not finite; treating it as zero"
                );
            }
        }
    }
    Ok(blocks)
}

/// `w* + Σ_b J_b·(θ_b - θ_b(now))` row by row: equal to `w*` in value, with
/// the derivative of the minimizer.
fn tracked_minimizer<'t>(w: Matrix, thetas: [Var<'t>; 3], blocks: &[Vec<Matrix>; 3]) -> Var<'t> {
    let tape = thetas[0].tape();
    let mut out = tape.constant(w);
    for (theta, block) in thetas.into_iter().zip(blocks) {
        let delta = theta.sub(tape.constant((*theta.value()).clone()));
        let step = block
            .iter()
            .map(|j| delta.row_dots(tape.constant(j.clone())))
            .reduce(|acc, col| acc.concat_cols(col))
            .expect("nonempty dimension");
        out = out.add(step);
    }
    out
}

/// Distance from `x` to the hyperplane `wᵀx + b = 0`.
pub fn hyperplane_project(x: &[f64], w: &[f64], b: f64) -> Result<f64> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return precondition("hyperplane normal w must be nonzero");
    }
    if x.len() != w.len() {
        return precondition(format!(
            "point has dimension {}, normal has {}",
            x.len(),
            w.len()
        ));
    }
    let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok(z.abs() / norm)
}

/// Horosphere projection `-log((1 - ‖x̃‖²)/‖x̃ - ω‖²) + b` with `x̃ = √c·x`.
/// Guard violations are errors here; banks clamp instead.
pub fn horosphere_project(x: &Point, omega: &[f64], b: f64) -> Result<f64> {
    let c = match x.manifold {
        Manifold::Poincare { curvature, .. } => -curvature,
        _ => return precondition("horosphere projection needs a point on the Poincaré ball"),
    };
    if x.coords.len() != omega.len() {
        return precondition("ω has the wrong dimension");
    }
    let w_norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (w_norm - 1.0).abs() > 1e-9 {
        return precondition(format!("ω must have unit norm, got {w_norm}"));
    }
    let xt: Vec<f64> = x.coords.data().iter().map(|v| v * c.sqrt()).collect();
    let s: f64 = xt.iter().map(|v| v * v).sum();
    if s.sqrt() > 1.0 - HORO_EPS {
        return Err(Error::Domain(format!(
            "boundary guard: ‖x‖ = {} exceeds 1 - {HORO_EPS:e}",
            s.sqrt()
        )));
    }
    let d2: f64 = xt.iter().zip(omega).map(|(a, w)| (a - w) * (a - w)).sum();
    if d2.sqrt() < HORO_EPS {
        return Err(Error::Domain(format!(
            "ideal-point guard: ‖x - ω‖ = {} is below {HORO_EPS:e}",
            d2.sqrt()
        )));
    }
    Ok(-((1.0 - s) / d2).ln() + b)
}

/// The `k`-th largest eigenvalue (1-based).
pub fn spd_eig_feature(x: &Matrix, k: usize) -> Result<f64> {
    if k == 0 || k > x.rows() {
        return precondition(format!("eigenvalue index {k} is outside 1..={}", x.rows()));
    }
    Ok(sym_eig(x)?.eigenvalues[k - 1])
}

/// Distance from `x` to the geodesic disk `exp_p({w ⊥ v : ‖w‖_p ≤ r})`.
pub fn pseudo_hyperplane_project(x: &Point, p: &Point, v: &TangentVector, r: f64) -> Result<f64> {
    let m = x.manifold;
    if m.is_spd() {
        return precondition(
            "pseudo-hyperplanes are supported on Euclidean, Poincaré and sphere geometries",
        );
    }
    if p.manifold != m || v.base.manifold != m {
        return precondition("x, p and v must share one manifold");
    }
    if !(r > 0.0) {
        return precondition(format!("radius must be positive, got {r}"));
    }
    let sol = solve_pseudo(&m, &x.coords, &p.coords, &v.coords, r)?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            message: format!("pseudo-hyperplane projection after {PSEUDO_MAX_ITERS} iterations"),
            best: sol.best,
        });
    }
    Ok(sol.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{proj_tangent, riem_grad};
    use crate::numerics::{finite_diff_grad, mat_exp_sym, relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball() -> Manifold {
        Manifold::poincare(2, -1.0).unwrap()
    }

    #[test]
    fn hyperplane_examples() {
        assert_eq!(
            hyperplane_project(&[2.0, 5.0], &[1.0, 0.0], 0.0).unwrap(),
            2.0
        );
        assert!(
            (hyperplane_project(&[1.0, 1.0], &[1.0, 1.0], -1.0).unwrap() - 0.5f64.sqrt()).abs()
                < 1e-15
        );
        assert_eq!(
            hyperplane_project(&[1.0, 0.0], &[1.0, 1.0], -1.0).unwrap(),
            0.0
        );
        assert!(hyperplane_project(&[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn horosphere_examples() {
        let o = Point::origin(ball());
        assert_eq!(horosphere_project(&o, &[0.0, 1.0], 2.0).unwrap(), 2.0);
        assert_eq!(horosphere_project(&o, &[1.0, 0.0], -0.7).unwrap(), -0.7);
        let x = Point::new(ball(), Matrix::row_vector(&[0.5, 0.0])).unwrap();
        let g = horosphere_project(&x, &[1.0, 0.0], 0.0).unwrap();
        assert!((g + 3f64.ln()).abs() < 1e-15);
        let edge = Point::new_unchecked(ball(), Matrix::row_vector(&[1.0 - 1e-7, 0.0]));
        assert!(matches!(
            horosphere_project(&edge, &[0.0, 1.0], 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn spd_eig_examples() {
        assert_eq!(spd_eig_feature(&Matrix::identity(3), 2).unwrap(), 1.0);
        assert_eq!(
            spd_eig_feature(&Matrix::from_diag(&[3.0, 1.0]), 1).unwrap(),
            3.0
        );
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!((spd_eig_feature(&m, 2).unwrap() - 1.0).abs() < 1e-14);
        assert!(spd_eig_feature(&m, 3).is_err());
    }

    #[test]
    fn pseudo_hyperplane_zero_at_center() {
        let m = ball();
        let p = Point::new(m, Matrix::row_vector(&[0.2, -0.1])).unwrap();
        let v = p.tangent(Matrix::row_vector(&[1.0, 1.0])).unwrap();
        assert_eq!(pseudo_hyperplane_project(&p, &p, &v, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_hyperplane_reduces_to_hyperplane_in_flat_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Manifold::euclidean(3);
        for _ in 0..20 {
            let pc = Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
            let vc = Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
            let xc = Matrix::from_fn(1, 3, |_, _| rng.random_range(-3.0..3.0));
            let p = Point::new(m, pc.clone()).unwrap();
            let v = p.tangent(vc.clone()).unwrap();
            let x = Point::new(m, xc.clone()).unwrap();
            let b = -vc.dot(&pc);
            let expected = hyperplane_project(xc.data(), vc.data(), b).unwrap();
            let got = pseudo_hyperplane_project(&x, &p, &v, 100.0).unwrap();
            assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        }
    }

    #[test]
    fn pseudo_hyperplane_matches_grid_search_on_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ball();
        for _ in 0..10 {
            let pc = Matrix::from_fn(1, 2, |_, _| rng.random_range(-0.4..0.4));
            let vc = Matrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
            let xc = Matrix::from_fn(1, 2, |_, _| rng.random_range(-0.6..0.6));
            let r = rng.random_range(0.2..1.5);
            let p = Point::new(m, pc.clone()).unwrap();
            let v = p.tangent(vc.clone()).unwrap();
            let x = Point::new(m, xc).unwrap();
            let got = pseudo_hyperplane_project(&x, &p, &v, r).unwrap();
            // the disk is one-dimensional: w = t·u with u ⊥ v and λ_p|t| ≤ r
            let u = Matrix::row_vector(&[-vc[(0, 1)], vc[(0, 0)]]);
            let u = u.scale(1.0 / u.frobenius_norm());
            let lam = 2.0 / (1.0 - pc.dot(&pc));
            let steps = 20000;
            let mut best = f64::INFINITY;
            for s in 0..=steps {
                let t = (-1.0 + 2.0 * s as f64 / steps as f64) * r / lam;
                let y = crate::manifolds::exp_map(&p, &p.tangent(u.scale(t)).unwrap()).unwrap();
                best = best.min(crate::manifolds::dist(&x, &y).unwrap());
            }
            assert!((got - best).abs() < 1e-3, "{got} vs {best}");
            assert!(got <= best + 1e-7, "{got} vs {best}");
        }
    }

    fn bank(kind: FeatureKind, m: Manifold, k: usize, seed: u64) -> (FeatureBank, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = FeatureBank::new(kind, m, k, 0.8, "bank", &mut store, &mut rng).unwrap();
        (b, store)
    }

    fn sample_points(m: Manifold, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let d = m.ambient_dim();
        match m {
            Manifold::Poincare { .. } => Matrix::from_fn(n, d, |_, _| rng.random_range(-0.5..0.5)),
            Manifold::Sphere { .. } => random_unit_rows(n, d, rng),
            _ => Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0)),
        }
    }

    /// The field of a bank must equal the Riemannian gradient of `Σ c_j g_j`.
    fn check_field(kind: FeatureKind, m: Manifold) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (bank, store) = bank(kind, m, 4, 5);
        let x = if m.is_spd() {
            mat_exp_sym(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).symmetrize())
                .unwrap()
        } else {
            sample_points(m, 3, &mut rng)
        };
        let k = bank.len();
        let rows = if m.is_spd() { 1 } else { x.rows() };
        let c = Matrix::from_fn(rows, k, |_, _| rng.random_range(-1.0..1.0));
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        let field = (*bank
            .eval(&b, tape.constant(x.clone()))
            .unwrap()
            .field(tape.constant(c.clone()))
            .unwrap()
            .value())
        .clone();
        let fd = finite_diff_grad(
            |ps| Ok(bank.values(&store, &ps[0])?.hadamard(&c).sum()),
            &[x.clone()],
            1e-6,
        )
        .unwrap();
        let expected = if m.is_spd() {
            riem_grad(&Point::new_unchecked(m, x.clone()), &fd[0])
                .unwrap()
                .coords
        } else {
            let mut rows = Vec::new();
            for i in 0..x.rows() {
                let p = Point::new_unchecked(m, x.select_rows(&[i]));
                rows.push(riem_grad(&p, &fd[0].select_rows(&[i])).unwrap().coords);
            }
            Matrix::vstack(&rows)
        };
        let err = relative_error(&field, &expected, 1e-6);
        assert!(err < 1e-5, "{:?} on {}: {err}", kind, m.name());
    }

    #[test]
    fn fields_are_riemannian_gradients_of_features() {
        check_field(FeatureKind::Linear, Manifold::euclidean(3));
        check_field(FeatureKind::Hyperplane, Manifold::euclidean(3));
        check_field(FeatureKind::Horosphere, ball());
        check_field(
            FeatureKind::Horosphere,
            Manifold::poincare(3, -0.5).unwrap(),
        );
        check_field(FeatureKind::SpdEig, Manifold::spd_affine(3));
        check_field(FeatureKind::SpdEig, Manifold::spd_log_euclidean(3));
        check_field(FeatureKind::PseudoHyperplane, Manifold::euclidean(3));
        check_field(FeatureKind::PseudoHyperplane, ball());
        check_field(FeatureKind::PseudoHyperplane, Manifold::sphere(2));
    }

    /// Gradients of a scalar built from values and field, with respect to
    /// every bank parameter and the input, against finite differences.
    fn check_param_gradients(kind: FeatureKind, m: Manifold) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (bank, store) = bank(kind, m, 3, 6);
        let x = if m.is_spd() {
            mat_exp_sym(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).symmetrize())
                .unwrap()
        } else {
            sample_points(m, 4, &mut rng)
        };
        let weights = Matrix::from_fn(x.rows(), x.cols(), |_, _| rng.random_range(-1.0..1.0));
        let build = |t: &Tape, b: &Bound<'_>, xv: Var<'_>| -> Result<f64> {
            let _ = t;
            let e = bank.eval(b, xv)?;
            let c = e.values.tanh();
            let f = e.field(c)?;
            Ok(e.values.square().sum().item() + f.mul(t.constant(weights.clone())).sum().item())
        };
        let tape = Tape::new();
        let b = store.bind(&tape);
        let xv = tape.param(x.clone());
        let e = bank.eval(&b, xv).unwrap();
        let f = e.field(e.values.tanh()).unwrap();
        let out = e.values.square().sum() + f.mul(tape.constant(weights.clone())).sum();
        let grads = tape.backward(out);
        let mut all: Vec<Matrix> = store.iter().map(|(_, p)| p.value.clone()).collect();
        all.push(x.clone());
        let fd = finite_diff_grad(
            |ps| {
                let t = Tape::new();
                let mut s = store.clone();
                s.replace_values(ps[..ps.len() - 1].to_vec())?;
                let b = s.bind_constant(&t);
                let xv = t.constant(ps[ps.len() - 1].clone());
                build(&t, &b, xv)
            },
            &all,
            1e-6,
        )
        .unwrap();
        let mut analytic: Vec<Matrix> = b.vars().iter().map(|v| grads.wrt(*v)).collect();
        analytic.push(grads.wrt(xv));
        for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let (a, f) = if m.is_spd() && i == analytic.len() - 1 {
                (a.symmetrize(), f.symmetrize())
            } else {
                (a.clone(), f.clone())
            };
            let err = relative_error(&a, &f, 1e-6);
            assert!(err < 1e-4, "{:?} on {} param {i}: {err}", kind, m.name());
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        check_param_gradients(FeatureKind::Linear, Manifold::euclidean(3));
        check_param_gradients(FeatureKind::Hyperplane, Manifold::euclidean(3));
        check_param_gradients(FeatureKind::Horosphere, ball());
        check_param_gradients(FeatureKind::SpdEig, Manifold::spd_affine(3));
        check_param_gradients(FeatureKind::SpdEig, Manifold::spd_log_euclidean(3));
    }

    #[test]
    fn pseudo_hyperplane_gradients_use_envelope_theorem() {
        // value-only objective: the envelope gradient is exact to first order
        for m in [Manifold::euclidean(2), ball(), Manifold::sphere(2)] {
            let mut rng = ChaCha8Rng::seed_from_u64(41);
            let (bank, store) = bank(FeatureKind::PseudoHyperplane, m, 2, 7);
            let x = sample_points(m, 3, &mut rng);
            let tape = Tape::new();
            let b = store.bind(&tape);
            let xv = tape.param(x.clone());
            let out = bank.eval(&b, xv).unwrap().values.sum();
            let grads = tape.backward(out);
            let mut all: Vec<Matrix> = store.iter().map(|(_, p)| p.value.clone()).collect();
            all.push(x.clone());
            let fd = finite_diff_grad(
                |ps| {
                    let mut s = store.clone();
                    s.replace_values(ps[..ps.len() - 1].to_vec())?;
                    Ok(bank.values(&s, &ps[ps.len() - 1])?.sum())
                },
                &all,
                1e-6,
            )
            .unwrap();
            let mut analytic: Vec<Matrix> = b.vars().iter().map(|v| grads.wrt(*v)).collect();
            analytic.push(grads.wrt(xv));
            for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
                let err = relative_error(a, f, 1e-6);
                assert!(err < 1e-4, "{} param {i}: {err}\n{a:?}\n{f:?}", m.name());
            }
        }
    }

    #[test]
    fn ideal_points_stay_unit_after_construction() {
        let (_, store) = bank(
            FeatureKind::Horosphere,
            Manifold::poincare(5, -1.0).unwrap(),
            50,
            9,
        );
        assert!(store.constraint_violation() < 1e-12);
    }

    #[test]
    fn bank_rejects_unsupported_manifold() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(FeatureBank::new(
            FeatureKind::Horosphere,
            Manifold::euclidean(2),
            3,
            1.0,
            "b",
            &mut store,
            &mut rng
        )
        .is_err());
        assert!(FeatureBank::new(
            FeatureKind::PseudoHyperplane,
            Manifold::spd_affine(2),
            3,
            1.0,
            "b",
            &mut store,
            &mut rng
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn horosphere_is_invariant_under_rotations_fixing_omega(
            seed in any::<u64>(), angle in -3.0f64..3.0, b in -2.0f64..2.0
        ) {
            // ω = e₀ in 3-D; rotate the (e₁, e₂) plane
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Manifold::poincare(3, -1.0).unwrap();
            let xc = Matrix::from_fn(1, 3, |_, _| rng.random_range(-0.5..0.5));
            let (c, s) = (angle.cos(), angle.sin());
            let rot = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, c, -s], &[0.0, s, c]]);
            let rx = xc.matmul(&rot.transpose());
            let omega = [1.0, 0.0, 0.0];
            let g1 = horosphere_project(&Point::new(m, xc).unwrap(), &omega, b).unwrap();
            let g2 = horosphere_project(&Point::new(m, rx).unwrap(), &omega, b).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-9);
        }

        #[test]
        fn eigenvalue_features_are_conjugation_invariant(seed in any::<u64>(), k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = mat_exp_sym(&Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)).symmetrize()).unwrap();
            let q = crate::optim::qr_retract(&Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let y = q.matmul(&x).matmul(&q.transpose()).symmetrize();
            prop_assert!((spd_eig_feature(&x, k).unwrap() - spd_eig_feature(&y, k).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn pseudo_hyperplane_is_nonnegative_and_zero_on_the_disk(seed in any::<u64>(), t in -0.9f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Manifold::sphere(2);
            let p = Point::new(m, random_unit_rows(1, 3, &mut rng)).unwrap();
            let v = proj_tangent(&p, &Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            // a point of the disk: exp_p(w) with w ⊥ v, ‖w‖ = |t|·r
            let u = proj_tangent(&p, &Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap().coords;
            let u = u.sub(&v.coords.scale(u.dot(&v.coords) / v.coords.dot(&v.coords)));
            let r = 0.7;
            let w = u.scale(t * r / u.frobenius_norm());
            let on = crate::manifolds::exp_map(&p, &p.tangent(w).unwrap()).unwrap();
            prop_assert!(pseudo_hyperplane_project(&on, &p, &v, r).unwrap() < 1e-6);
            let off = Point::new(m, random_unit_rows(1, 3, &mut rng)).unwrap();
            prop_assert!(pseudo_hyperplane_project(&off, &p, &v, r).unwrap() >= 0.0);
        }
    }
}
