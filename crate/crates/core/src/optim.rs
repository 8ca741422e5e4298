//! Parameter storage and the Adam optimizer with manifold constraints.

use std::ops::Index;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Constraint restored after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    Free,
    /// Every row has unit Euclidean norm.
    UnitRows,
    /// Orthonormal columns (`WᵀW = I`), restored by QR retraction.
    Stiefel,
    /// Every row has norm at most `limit`.
    BallRows {
        limit: f64,
    },
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::Free => "free",
            Constraint::UnitRows => "unit_rows",
            Constraint::Stiefel => "stiefel",
            Constraint::BallRows { .. } => "ball_rows",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Matrix,
        constraint: Constraint,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            constraint,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        assert_eq!(
            self.params[id.0].value.shape(),
            value.shape(),
            "shape of {}",
            self.params[id.0].name
        );
        self.params[id.0].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        }
    }

    /// Records every parameter as a constant (evaluation only).
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Restores all constraints.
    pub fn apply_constraints(&mut self) -> Result<()> {
        for p in &mut self.params {
            p.value = project(&p.value, p.constraint)
                .map_err(|e| Error::Numeric(format!("constraint on '{}': {e}", p.name)))?;
        }
        Ok(())
    }

    /// Largest violation of any constraint.
    pub fn constraint_violation(&self) -> f64 {
        self.params
            .iter()
            .map(|p| violation(&p.value, p.constraint))
            .fold(0.0, f64::max)
    }

    /// Frobenius norms by parameter name, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.frobenius_norm()))
            .collect()
    }

    pub fn replace_values(&mut self, values: Vec<Matrix>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Schema(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }
}

/// Parameters recorded on a tape, indexed by [`ParamId`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;
    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

fn project(m: &Matrix, c: Constraint) -> Result<Matrix> {
    match c {
        Constraint::Free => Ok(m.clone()),
        Constraint::UnitRows => {
            let mut out = m.clone();
            for i in 0..out.rows() {
                let norm = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::Numeric(format!("row {i} has norm {norm}")));
                }
                out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
            Ok(out)
        }
        Constraint::Stiefel => qr_retract(m),
        Constraint::BallRows { limit } => {
            let mut out = m.clone();
            for i in 0..out.rows() {
                let norm = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > limit {
                    out.row_mut(i).iter_mut().for_each(|v| *v *= limit / norm);
                }
            }
            Ok(out)
        }
    }
}

fn violation(m: &Matrix, c: Constraint) -> f64 {
    match c {
        Constraint::Free => 0.0,
        Constraint::UnitRows => m
            .row_norms()
            .iter()
            .map(|n| (n - 1.0).abs())
            .fold(0.0, f64::max),
        Constraint::Stiefel => m
            .transpose()
            .matmul(m)
            .sub(&Matrix::identity(m.cols()))
            .frobenius_norm(),
        Constraint::BallRows { limit } => m
            .row_norms()
            .iter()
            .map(|n| (n - limit).max(0.0))
            .fold(0.0, f64::max),
    }
}

/// Q factor of a thin QR decomposition (modified Gram–Schmidt, run twice),
/// with the sign of each column chosen so that `diag(R) > 0`.
pub fn qr_retract(m: &Matrix) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::Precondition(format!(
            "cannot orthonormalize {cols} columns in dimension {rows}"
        )));
    }
    let mut q: Vec<Vec<f64>> = (0..cols).map(|j| m.col(j)).collect();
    for j in 0..cols {
        let original = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let qi = q[i].clone();
                q[j].iter_mut().zip(&qi).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * original.max(1e-300)) {
            return Err(Error::Numeric(format!(
                "column {j} is linearly dependent on the previous ones"
            )));
        }
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| q[j][i]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam over all parameters of a store. Weight decay is added to the
/// gradient of unconstrained parameters only.
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |p: &Param| Matrix::zeros(p.value.rows(), p.value.cols());
        Adam {
            config,
            m: store.params.iter().map(zeros).collect(),
            v: store.params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    /// One update followed by constraint restoration.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (k, p) in store.params.iter_mut().enumerate() {
            let mut g = grads[k].clone();
            if c.weight_decay > 0.0 && p.constraint == Constraint::Free {
                g.add_assign(&p.value.scale(c.weight_decay));
            }
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for (((w, gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *w -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        store.apply_constraints()
    }
}
