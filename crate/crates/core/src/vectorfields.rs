//! Learned vector fields `ℓ: M → TM`.
//!
//! Vector geometries evaluate a batch of `N x d` points; SPD geometries one
//! `n x n` matrix. Every field returns tangent vectors in the same layout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::featuremaps::{FeatureBank, FeatureKind};
use crate::manifolds::Manifold;
use crate::numerics::{Matrix, Tape, Var};
use crate::optim::{Bound, Constraint, ParamId, ParamStore};

/// Largest tolerated `‖QᵀQ - I‖_F` for the spectral field's rotation.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;
const EXPM_TAYLOR_TERMS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`; a layer computes `XW + b`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Fully connected network acting on rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, h₁, …, out]`; `activations[i]` follows layer `i`.
    /// A single size gives the identity network with no parameters.
    pub fn new(
        sizes: &[usize],
        activations: &[Activation],
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if activations.len() + 1 != sizes.len() {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                sizes.len() - 1,
                sizes.len() - 1,
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = store.add(
                    format!("{prefix}.{i}.weight"),
                    Matrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                let bias = store.add(
                    format!("{prefix}.{i}.bias"),
                    Matrix::from_fn(1, w[1], |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                Dense {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// `input → hidden… → output` with `hidden_act` after hidden layers and
    /// a linear output layer.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(&sizes, &acts, prefix, store, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.layers.iter().fold(x, |h, l| {
            l.activation
                .apply(h.matmul(params[l.weight]).add(params[l.bias]))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Embedded,
    Feature,
    SpdEmbedded,
    SpdStructured,
    SpdParsimonious,
    SpdSpectral,
}

impl FieldKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "embedded" => Ok(FieldKind::Embedded),
            "feature" => Ok(FieldKind::Feature),
            "spd_embedded" => Ok(FieldKind::SpdEmbedded),
            "spd_structured" => Ok(FieldKind::SpdStructured),
            "spd_parsimonious" => Ok(FieldKind::SpdParsimonious),
            "spd_spectral" => Ok(FieldKind::SpdSpectral),
            other => Err(Error::Config(format!("unknown vector field '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::Embedded => "embedded",
            FieldKind::Feature => "feature",
            FieldKind::SpdEmbedded => "spd_embedded",
            FieldKind::SpdStructured => "spd_structured",
            FieldKind::SpdParsimonious => "spd_parsimonious",
            FieldKind::SpdSpectral => "spd_spectral",
        }
    }
}

/// Construction options for a [`VectorField`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub kind: FieldKind,
    pub hidden: Vec<usize>,
    /// Activation after hidden layers; `false` makes the network linear.
    pub nonlinearity: bool,
    pub activation: Activation,
    pub feature_map: FeatureKind,
    pub num_features: usize,
    pub radius: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            kind: FieldKind::Embedded,
            hidden: vec![16],
            nonlinearity: true,
            activation: Activation::Relu,
            feature_map: FeatureKind::Horosphere,
            num_features: 16,
            radius: 1.0,
        }
    }
}

impl FieldConfig {
    fn hidden_activation(&self) -> Activation {
        if self.nonlinearity {
            self.activation
        } else {
            Activation::Identity
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldBody {
    Embedded {
        net: Mlp,
    },
    Feature {
        bank: FeatureBank,
        net: Mlp,
    },
    SpdEmbedded {
        net: Mlp,
    },
    SpdStructured {
        net: Mlp,
    },
    SpdParsimonious {
        v: ParamId,
    },
    /// `Q = expm(A - Aᵀ)`.
    SpdSpectral {
        a: ParamId,
        net: Mlp,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub manifold: Manifold,
    pub body: FieldBody,
}

impl VectorField {
    pub fn new(
        config: &FieldConfig,
        manifold: Manifold,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let act = config.hidden_activation();
        let n = manifold.dim_param();
        let sym_dim = n * (n + 1) / 2;
        let need_spd = |kind: FieldKind| {
            if manifold.is_spd() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "vector field '{}' needs an SPD manifold",
                    kind.name()
                )))
            }
        };
        let body = match config.kind {
            FieldKind::Embedded if manifold.is_spd() => {
                let d = manifold.ambient_dim();
                FieldBody::SpdEmbedded {
                    net: Mlp::with_hidden(d, &config.hidden, d, act, prefix, store, rng)?,
                }
            }
            FieldKind::Embedded => {
                let d = manifold.ambient_dim();
                FieldBody::Embedded {
                    net: Mlp::with_hidden(d, &config.hidden, d, act, prefix, store, rng)?,
                }
            }
            FieldKind::Feature => {
                let bank = FeatureBank::new(
                    config.feature_map,
                    manifold,
                    config.num_features,
                    config.radius,
                    &format!("{prefix}.features"),
                    store,
                    rng,
                )?;
                let k = bank.len();
                let net = Mlp::with_hidden(
                    k,
                    &config.hidden,
                    k,
                    act,
                    &format!("{prefix}.net"),
                    store,
                    rng,
                )?;
                FieldBody::Feature { bank, net }
            }
            FieldKind::SpdEmbedded => {
                need_spd(config.kind)?;
                let d = n * n;
                FieldBody::SpdEmbedded {
                    net: Mlp::with_hidden(d, &config.hidden, d, act, prefix, store, rng)?,
                }
            }
            FieldKind::SpdStructured => {
                need_spd(config.kind)?;
                let net =
                    Mlp::with_hidden(sym_dim, &config.hidden, sym_dim, act, prefix, store, rng)?;
                FieldBody::SpdStructured { net }
            }
            FieldKind::SpdParsimonious => {
                need_spd(config.kind)?;
                let bound = 1.0 / (sym_dim as f64).sqrt();
                let v = store.add(
                    format!("{prefix}.v"),
                    Matrix::from_fn(1, sym_dim, |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                FieldBody::SpdParsimonious { v }
            }
            FieldKind::SpdSpectral => {
                need_spd(config.kind)?;
                let bound = 1.0 / (n as f64).sqrt();
                let a = store.add(
                    format!("{prefix}.rotation"),
                    Matrix::from_fn(n, n, |_, _| rng.random_range(-bound..bound)),
                    Constraint::Free,
                );
                let net = Mlp::with_hidden(
                    n,
                    &config.hidden,
                    n,
                    act,
                    &format!("{prefix}.net"),
                    store,
                    rng,
                )?;
                FieldBody::SpdSpectral { a, net }
            }
        };
        Ok(VectorField { manifold, body })
    }

    pub fn kind(&self) -> FieldKind {
        match self.body {
            FieldBody::Embedded { .. } => FieldKind::Embedded,
            FieldBody::Feature { .. } => FieldKind::Feature,
            FieldBody::SpdEmbedded { .. } => FieldKind::SpdEmbedded,
            FieldBody::SpdStructured { .. } => FieldKind::SpdStructured,
            FieldBody::SpdParsimonious { .. } => FieldKind::SpdParsimonious,
            FieldBody::SpdSpectral { .. } => FieldKind::SpdSpectral,
        }
    }

    /// Number of scalar parameters owned by this field.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        let n = self.manifold.dim_param();
        match &self.body {
            FieldBody::Embedded { net }
            | FieldBody::SpdEmbedded { net }
            | FieldBody::SpdStructured { net } => net.param_count(),
            FieldBody::Feature { bank, net } => {
                net.param_count()
                    + bank
                        .param_ids()
                        .iter()
                        .map(|&id| store.get(id).len())
                        .sum::<usize>()
            }
            FieldBody::SpdParsimonious { .. } => n * (n + 1) / 2,
            FieldBody::SpdSpectral { net, .. } => n * n + net.param_count(),
        }
    }

    /// Evaluates the field at `x`.
    ///
    /// `graph`, when given, is an `N x N` operator applied to the feature
    /// values before the network (feature-induced fields only).
    pub fn eval<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        graph: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let m = &self.manifold;
        let expect = |got: (usize, usize)| -> Result<()> {
            let (r, c) = m.point_shape();
            let ok = if m.is_spd() {
                got == (r, c)
            } else {
                got.1 == c
            };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "input of shape {got:?} does not match {}",
                    m.name()
                )))
            }
        };
        expect(x.shape())?;
        match &self.body {
            FieldBody::Embedded { net } => {
                let u = net.forward(params, x);
                Ok(m.proj_tape(x, u))
            }
            FieldBody::Feature { bank, net } => {
                let eval = bank.eval(params, x)?;
                let f = match graph {
                    Some(a) => {
                        if a.shape() != (eval.values.rows(), eval.values.rows()) {
                            return Err(Error::Config(format!(
                                "graph operator of shape {:?} does not match {} points",
                                a.shape(),
                                eval.values.rows()
                            )));
                        }
                        a.matmul(eval.values)
                    }
                    None => eval.values,
                };
                let c = net.forward(params, f);
                eval.field(c)
            }
            FieldBody::SpdEmbedded { net } => {
                let n = m.dim_param();
                let u = net.forward(params, x.reshape(1, n * n)).reshape(n, n);
                Ok(m.proj_tape(x, u))
            }
            FieldBody::SpdStructured { net } => {
                let n = m.dim_param();
                Ok(iota(net.forward(params, iota_inv(x)), n))
            }
            FieldBody::SpdParsimonious { v } => Ok(iota(params[*v], m.dim_param())),
            FieldBody::SpdSpectral { a, net } => {
                let q = rotation(params[*a])?;
                let (l, _) = x.sym().sym_eig()?;
                let out = net.forward(params, l.t());
                Ok(q.mul(out).matmul(q.t()))
            }
        }
    }

    /// Plain-value evaluation.
    pub fn eval_values(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        Ok((*self.eval(&b, tape.constant(x.clone()), None)?.value()).clone())
    }

    /// The rotation `Q` of a spectral field.
    pub fn spectral_rotation(&self, store: &ParamStore) -> Option<Result<Matrix>> {
        match &self.body {
            FieldBody::SpdSpectral { a, .. } => {
                let tape = Tape::new();
                Some(rotation(tape.constant(store.get(*a).clone())).map(|q| (*q.value()).clone()))
            }
            _ => None,
        }
    }
}

/// Row-major positions `(i, j)`, `i ≤ j`, of the upper triangle.
pub fn upper_indices(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// `ι`: a `1 x n(n+1)/2` row into the symmetric matrix with that upper triangle.
pub fn iota<'t>(v: Var<'t>, n: usize) -> Var<'t> {
    let m = n * (n + 1) / 2;
    let mut index = vec![0; n * n];
    for (k, (i, j)) in upper_indices(n).into_iter().enumerate() {
        index[i * n + j] = k;
        index[j * n + i] = k;
    }
    v.reshape(m, 1).gather_rows(&index).reshape(n, n)
}

/// `ι⁻¹`: the upper triangle of an `n x n` matrix as a row.
pub fn iota_inv(x: Var<'_>) -> Var<'_> {
    let n = x.rows();
    let index: Vec<usize> = upper_indices(n)
        .into_iter()
        .map(|(i, j)| i * n + j)
        .collect();
    x.reshape(n * n, 1)
        .gather_rows(&index)
        .reshape(1, index.len())
}

/// Matrix exponential of the skew part `A - Aᵀ`, by scaling and squaring
/// with a truncated Taylor series.
pub fn expm_skew<'t>(a: Var<'t>) -> Var<'t> {
    let s = a.sub(a.t());
    let n = s.rows();
    let norm = s.value().frobenius_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let s = s.scale(0.5f64.powi(squarings));
    let tape = a.tape();
    let eye = tape.constant(Matrix::identity(n));
    // Horner form of Σ sᵏ/k!
    let mut acc = eye;
    for k in (1..=EXPM_TAYLOR_TERMS).rev() {
        acc = eye.add(s.matmul(acc).scale(1.0 / k as f64));
    }
    (0..squarings).fold(acc, |q, _| q.matmul(q))
}

fn rotation<'t>(a: Var<'t>) -> Result<Var<'t>> {
    let q = expm_skew(a);
    let qv = q.value();
    let drift = qv
        .transpose()
        .matmul(&qv)
        .sub(&Matrix::identity(qv.rows()))
        .frobenius_norm();
    if !(drift <= ORTHOGONALITY_TOLERANCE) {
        return Err(Error::Numeric(format!(
            "spectral rotation lost orthogonality: ‖QᵀQ - I‖ = {drift:e}"
        )));
    }
    Ok(q)
}
