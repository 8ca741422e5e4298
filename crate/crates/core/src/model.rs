//! Riemannian residual networks.
//!
//! Layer `i` maps its input onto manifold `M⁽ⁱ⁾` with a base-point map `h_i`
//! and then steps along the learned field:
//! `x⁽ⁱ⁾ = exp_{h_i(x⁽ⁱ⁻¹⁾)}(ℓ_i(h_i(x⁽ⁱ⁻¹⁾)))`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::featuremaps::FeatureKind;
use crate::gyro::gyro_residual_tape;
use crate::manifolds::{validate, Manifold, Point};
use crate::numerics::{sym_eig, MatFn, Matrix, Tape, Var, EIG_FLOOR};
use crate::optim::{qr_retract, Bound, Constraint, ParamId, ParamStore};
use crate::tasks::{FERMI_DIRAC_R_INIT, FERMI_DIRAC_T_INIT};
use crate::vectorfields::{iota, Activation, FieldConfig, FieldKind, VectorField};

/// Tangent inputs to the Poincaré embedding are clipped to this fraction of
/// the ball radius before the exponential map.
pub const EMBED_CLIP: f64 = 0.9;
/// Tolerance on `‖WᵀW - I‖_F` for BiMap weights.
pub const STIEFEL_TOLERANCE: f64 = 1e-6;
const CHECKPOINT_FORMAT: &str = "rresnet-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSpec {
    /// `euclidean`, `poincare`, `sphere`, `spd_affine` or `spd_logeuclidean`.
    pub name: String,
    pub dim: usize,
    pub curvature: f64,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        ManifoldSpec {
            name: "poincare".into(),
            dim: 16,
            curvature: -1.0,
        }
    }
}

impl ManifoldSpec {
    pub fn build(&self, dim: usize) -> Result<Manifold> {
        Manifold::from_name(&self.name, dim, self.curvature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub depth: usize,
    pub vector_field: String,
    pub hidden: Vec<usize>,
    pub nonlinearity: bool,
    pub activation: String,
    pub feature_map: String,
    pub num_features: usize,
    pub radius: f64,
    /// `exp_map` or `gyrovector`.
    pub residual: String,
    /// `tangent_linear` or `inclusion` for vector inputs; SPD inputs use BiMaps.
    pub embedding: String,
    /// SPD only: output size of the BiMap in front of each layer.
    pub bimap_dims: Vec<usize>,
    /// Raw inputs are multiplied by this before embedding.
    pub input_scale: f64,
    /// Power of the adjacency applied to feature values; 0 disables it.
    pub graph_power: usize,
    pub graph_normalize: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            depth: 2,
            vector_field: "feature".into(),
            hidden: vec![16],
            nonlinearity: true,
            activation: "relu".into(),
            feature_map: "horosphere".into(),
            num_features: 16,
            radius: 1.0,
            residual: "exp_map".into(),
            embedding: "tangent_linear".into(),
            bimap_dims: vec![],
            input_scale: 1.0,
            graph_power: 0,
            graph_normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear scores on ambient coordinates (node classification).
    Linear,
    /// Link probabilities from squared distances.
    FermiDirac,
    /// `logm`, flatten, linear (SPD classification).
    SpdLogEig,
}

/// Everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub manifold: ManifoldSpec,
    pub model: ModelSpec,
    /// Raw feature dimension, or the size of input SPD matrices.
    pub input_dim: usize,
    pub num_classes: usize,
    pub head: HeadKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    ExpMap,
    Gyrovector,
}

impl ResidualKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "exp_map" => Ok(ResidualKind::ExpMap),
            "gyrovector" => Ok(ResidualKind::Gyrovector),
            other => Err(Error::Config(format!("unknown residual '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasePointMap {
    Inclusion,
    /// `X ↦ WᵀXW` with `W` of size `d_in x d_out`, `WᵀW = I`.
    StiefelBiMap {
        w: ParamId,
    },
    /// `u ↦ exp_o(uW)` at the origin `o` of the target.
    TangentLinear {
        weight: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub map: BasePointMap,
    pub target: Manifold,
    pub field: VectorField,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear {
        weight: ParamId,
        bias: ParamId,
    },
    /// `t = softplus(t_raw)` stays positive.
    FermiDirac {
        r: ParamId,
        t_raw: ParamId,
    },
    SpdLogEig {
        weight: ParamId,
        bias: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
    pub residual: ResidualKind,
    pub head: Head,
    /// Validate every intermediate point.
    pub debug: bool,
}

impl Model {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let spec = &config.model;
        if spec.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if config.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let residual = ResidualKind::from_name(&spec.residual)?;
        let field = FieldConfig {
            kind: FieldKind::from_name(&spec.vector_field)?,
            hidden: spec.hidden.clone(),
            nonlinearity: spec.nonlinearity,
            activation: Activation::from_name(&spec.activation)?,
            feature_map: FeatureKind::from_name(&spec.feature_map)?,
            num_features: spec.num_features,
            radius: spec.radius,
        };
        let probe = config.manifold.build(config.manifold.dim.max(1))?;
        let mut layers = Vec::with_capacity(spec.depth);
        if probe.is_spd() {
            let dims = if spec.bimap_dims.is_empty() {
                let first = if config.manifold.dim == 0 {
                    config.input_dim
                } else {
                    config.manifold.dim
                };
                vec![first; spec.depth]
            } else if spec.bimap_dims.len() == spec.depth {
                spec.bimap_dims.clone()
            } else {
                return Err(Error::Config(format!(
                    "bimap_dims has {} entries for depth {}",
                    spec.bimap_dims.len(),
                    spec.depth
                )));
            };
            let mut prev = config.input_dim;
            for (i, &d) in dims.iter().enumerate() {
                if d == 0 || d > prev {
                    return Err(Error::Config(format!(
                        "BiMap cannot map SPD({prev}) to SPD({d})"
                    )));
                }
                let map = if d == prev {
                    BasePointMap::Inclusion
                } else {
                    let raw = Matrix::from_fn(prev, d, |_, _| rng.random_range(-1.0..1.0));
                    let w = store.add(
                        format!("layer{i}.bimap"),
                        qr_retract(&raw)?,
                        Constraint::Stiefel,
                    );
                    BasePointMap::StiefelBiMap { w }
                };
                let target = config.manifold.build(d)?;
                let field =
                    VectorField::new(&field, target, &format!("layer{i}.field"), store, rng)?;
                layers.push(Layer { map, target, field });
                prev = d;
            }
        } else {
            let target = config.manifold.build(config.manifold.dim)?;
            for i in 0..spec.depth {
                let map = if i > 0 {
                    BasePointMap::Inclusion
                } else {
                    match spec.embedding.as_str() {
                        "inclusion" => {
                            if config.input_dim != target.ambient_dim() {
                                return Err(Error::Config(format!(
                                    "inclusion needs inputs of dimension {}, got {}",
                                    target.ambient_dim(),
                                    config.input_dim
                                )));
                            }
                            BasePointMap::Inclusion
                        }
                        "tangent_linear" => {
                            let out = target.intrinsic_dim();
                            let bound = 1.0 / (config.input_dim as f64).sqrt();
                            let weight = store.add(
                                "embed.weight",
                                Matrix::from_fn(config.input_dim, out, |_, _| {
                                    rng.random_range(-bound..bound)
                                }),
                                Constraint::Free,
                            );
                            BasePointMap::TangentLinear { weight }
                        }
                        other => return Err(Error::Config(format!("unknown embedding '{other}'"))),
                    }
                };
                let field =
                    VectorField::new(&field, target, &format!("layer{i}.field"), store, rng)?;
                layers.push(Layer { map, target, field });
            }
        }
        let last = layers.last().unwrap().target;
        let head = match config.head {
            HeadKind::Linear | HeadKind::SpdLogEig => {
                if config.num_classes < 2 {
                    return Err(Error::Config(
                        "classification needs at least two classes".into(),
                    ));
                }
                if (config.head == HeadKind::SpdLogEig) != last.is_spd() {
                    return Err(Error::Config(format!(
                        "head {:?} does not fit {}",
                        config.head,
                        last.name()
                    )));
                }
                let d = last.ambient_dim();
                let bound = 1.0 / (d as f64).sqrt();
                let weight = store.add(
                    "head.weight",
                    Matrix::from_fn(d, config.num_classes, |_, _| {
                        rng.random_range(-bound..bound)
                    }),
                    Constraint::Free,
                );
                let bias = store.add(
                    "head.bias",
                    Matrix::zeros(1, config.num_classes),
                    Constraint::Free,
                );
                if config.head == HeadKind::Linear {
                    Head::Linear { weight, bias }
                } else {
                    Head::SpdLogEig { weight, bias }
                }
            }
            HeadKind::FermiDirac => {
                let r = store.add(
                    "head.r",
                    Matrix::scalar(FERMI_DIRAC_R_INIT),
                    Constraint::Free,
                );
                let t_raw = store.add(
                    "head.t_raw",
                    Matrix::scalar(inverse_softplus(FERMI_DIRAC_T_INIT)),
                    Constraint::Free,
                );
                Head::FermiDirac { r, t_raw }
            }
        };
        if residual == ResidualKind::Gyrovector && matches!(last, Manifold::Sphere { .. }) {
            return Err(Error::Config(
                "the gyrovector residual is not defined on the sphere".into(),
            ));
        }
        Ok(Model {
            config: config.clone(),
            layers,
            residual,
            head,
            debug: false,
        })
    }

    pub fn is_spd(&self) -> bool {
        self.layers[0].target.is_spd()
    }

    /// `M⁽¹⁾ … M⁽ᵐ⁾`.
    pub fn manifolds(&self) -> Vec<Manifold> {
        self.layers.iter().map(|l| l.target).collect()
    }

    pub fn output_manifold(&self) -> Manifold {
        self.layers.last().unwrap().target
    }

    /// Applies layer `i` to `x`.
    pub fn layer_forward<'t>(
        &self,
        params: &Bound<'t>,
        i: usize,
        x: Var<'t>,
        graph: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        layer_forward(params, &self.layers[i], self.residual, x, graph)
    }

    /// Raw inputs (`N x input_dim`, or one SPD matrix) to final points.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        graph: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let expected_cols = self.config.input_dim;
        if x.cols() != expected_cols || (self.is_spd() && x.rows() != expected_cols) {
            return Err(Error::Config(format!(
                "model expects inputs with {expected_cols} columns, got {:?}",
                x.shape()
            )));
        }
        let scale = self.config.model.input_scale;
        let mut h = if scale == 1.0 { x } else { x.scale(scale) };
        for i in 0..self.layers.len() {
            h = self.layer_forward(params, i, h, graph)?;
            if self.debug {
                check_points(&self.layers[i].target, &h.value())
                    .map_err(|e| Error::Numeric(format!("layer {i}: {e}")))?;
            }
        }
        Ok(h)
    }

    /// Class scores (`N x C`, or `1 x C` for one SPD matrix).
    pub fn scores<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        graph: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let z = self.forward(params, x, graph)?;
        self.head_scores(params, z)
    }

    /// Applies a classification head to final points.
    pub fn head_scores<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        match &self.head {
            Head::Linear { weight, bias } => Ok(z.matmul(params[*weight]).add(params[*bias])),
            Head::SpdLogEig { weight, bias } => {
                let n = z.rows();
                let flat = z.sym().sym_fn(MatFn::Log)?.reshape(1, n * n);
                Ok(flat.matmul(params[*weight]).add(params[*bias]))
            }
            Head::FermiDirac { .. } => {
                precondition("the Fermi–Dirac head scores pairs; use link_logits")
            }
        }
    }

    /// Logits `(r - d²)/t` of the Fermi–Dirac decoder for node pairs of the
    /// final embedding `z`; the link probability is their sigmoid.
    pub fn link_logits<'t>(
        &self,
        params: &Bound<'t>,
        z: Var<'t>,
        pairs: &[(usize, usize)],
    ) -> Result<Var<'t>> {
        let Head::FermiDirac { r, t_raw } = &self.head else {
            return precondition("link prediction needs the Fermi–Dirac head");
        };
        let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let d2 = self
            .output_manifold()
            .sq_dist_tape(z.gather_rows(&us), z.gather_rows(&vs))?;
        let t = params[*t_raw].softplus();
        Ok(params[*r].sub(d2).div(t))
    }

    /// Final points as plain values, with every intermediate validated.
    pub fn embed(&self, store: &ParamStore, x: &Matrix, graph: Option<&Matrix>) -> Result<Matrix> {
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        let g = graph.map(|g| tape.constant(g.clone()));
        Ok((*self.forward(&b, tape.constant(x.clone()), g)?.value()).clone())
    }

    /// Configuration and parameter values in serializable form.
    pub fn checkpoint(&self, store: &ParamStore) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            params: store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    value: p.value.to_text(),
                })
                .collect(),
        }
    }

    /// Rebuilds a model and its parameters from [`Model::checkpoint`] output.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<(Model, ParamStore)> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported checkpoint format '{}'",
                ckpt.format
            )));
        }
        let mut store = ParamStore::new();
        let model = Model::new(&ckpt.config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
        if store.len() != ckpt.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                store.len()
            )));
        }
        let mut values = Vec::with_capacity(store.len());
        for ((_, p), saved) in store.iter().zip(&ckpt.params) {
            if p.name != saved.name {
                return Err(Error::Schema(format!(
                    "expected parameter '{}', found '{}'",
                    p.name, saved.name
                )));
            }
            values.push(Matrix::from_text(&saved.value)?);
        }
        store.replace_values(values)?;
        Ok((model, store))
    }

    /// Writes the configuration and all parameters.
    pub fn save(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let text = toml::to_string(&self.checkpoint(store))
            .map_err(|e| Error::Schema(format!("cannot encode checkpoint: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Model, ParamStore)> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: ModelCheckpoint = toml::from_str(&text)
            .map_err(|e| Error::Schema(format!("invalid checkpoint {}: {e}", path.display())))?;
        Model::from_checkpoint(&ckpt)
    }
}

/// Serializable model: configuration plus named parameters in the
/// plain-text matrix format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub config: ModelConfig,
    pub params: Vec<SavedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub value: String,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn check_points(m: &Manifold, x: &Matrix) -> std::result::Result<(), String> {
    if m.is_spd() {
        return validate(&Point::new_unchecked(*m, x.clone())).map_err(|v| v.to_string());
    }
    for i in 0..x.rows() {
        validate(&Point::new_unchecked(*m, Matrix::row_vector(x.row(i))))
            .map_err(|v| format!("row {i}: {v}"))?;
    }
    Ok(())
}

/// `exp_{h(x)}(ℓ(h(x)))`, or the gyrovector step in place of `exp`.
pub fn layer_forward<'t>(
    params: &Bound<'t>,
    layer: &Layer,
    residual: ResidualKind,
    x: Var<'t>,
    graph: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let base = apply_map(params, &layer.map, &layer.target, x)?;
    let v = layer.field.eval(params, base, graph)?;
    match residual {
        ResidualKind::ExpMap => layer.target.exp_tape(base, v),
        ResidualKind::Gyrovector => gyro_residual_tape(&layer.target, base, v),
    }
}

fn apply_map<'t>(
    params: &Bound<'t>,
    map: &BasePointMap,
    target: &Manifold,
    x: Var<'t>,
) -> Result<Var<'t>> {
    match map {
        BasePointMap::Inclusion => Ok(x),
        BasePointMap::StiefelBiMap { w } => {
            let w = params[*w];
            Ok(w.t().matmul(x).matmul(w).sym())
        }
        BasePointMap::TangentLinear { weight } => embed_tangent(target, x.matmul(params[*weight])),
    }
}

/// `exp` at the origin of `target` of the tangent vector with coordinates `v`
/// (rows of length `intrinsic_dim`).
fn embed_tangent<'t>(target: &Manifold, v: Var<'t>) -> Result<Var<'t>> {
    let tape = v.tape();
    match *target {
        Manifold::Euclidean { .. } => Ok(v),
        Manifold::Poincare { curvature, .. } => {
            let v = v.clip_row_norm(EMBED_CLIP / (-curvature).sqrt());
            let origin = tape.constant(Matrix::zeros(v.rows(), v.cols()));
            target.exp_tape(origin, v)
        }
        Manifold::Sphere { n } => {
            let lifted = tape.constant(Matrix::zeros(v.rows(), 1)).concat_cols(v);
            let origin = tape.constant(Matrix::from_fn(v.rows(), n + 1, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    0.0
                }
            }));
            target.exp_tape(origin, lifted)
        }
        Manifold::SpdAffine { n } | Manifold::SpdLogEuclidean { n } => {
            if v.rows() != 1 {
                return precondition("an SPD embedding maps one feature vector at a time");
            }
            iota(v, n).sym_fn(MatFn::Exp)
        }
    }
}

/// `WᵀXW` for `X` SPD and `W` with orthonormal columns.
pub fn stiefel_bimap(x: &Point, w: &Matrix) -> Result<Point> {
    if !x.manifold.is_spd() {
        return precondition("BiMap needs an SPD point");
    }
    let (d_in, d_out) = w.shape();
    if x.coords.rows() != d_in {
        return precondition(format!(
            "W has {d_in} rows, X is {}x{}",
            x.coords.rows(),
            x.coords.cols()
        ));
    }
    let drift = w
        .transpose()
        .matmul(w)
        .sub(&Matrix::identity(d_out))
        .frobenius_norm();
    if !(drift < STIEFEL_TOLERANCE) {
        return precondition(format!(
            "W is not column-orthonormal: ‖WᵀW - I‖ = {drift:e}"
        ));
    }
    let y = w.transpose().matmul(&x.coords).matmul(w).symmetrize();
    let min = sym_eig(&y)?.min_eigenvalue();
    if min <= EIG_FLOOR {
        return Err(Error::Singularity {
            eigenvalue: min,
            floor: EIG_FLOOR,
        });
    }
    let manifold = match x.manifold {
        Manifold::SpdAffine { .. } => Manifold::spd_affine(d_out),
        _ => Manifold::spd_log_euclidean(d_out),
    };
    Ok(Point::new_unchecked(manifold, y))
}

/// `exp_o(uW)` at the origin of `target`. Poincaré inputs are clipped to
/// norm `0.9/√c` first; sphere inputs are lifted to `(0, uW)` at the north
/// pole; SPD inputs go through the upper-triangle injection.
pub fn tangent_linear_embed(u: &[f64], weight: &Matrix, target: Manifold) -> Result<Point> {
    if weight.rows() != u.len() || weight.cols() != target.intrinsic_dim() {
        return precondition(format!(
            "weight {:?} does not map {} inputs to {} tangent coordinates",
            weight.shape(),
            u.len(),
            target.intrinsic_dim()
        ));
    }
    let tape = Tape::new();
    let v = tape
        .constant(Matrix::row_vector(u))
        .matmul(tape.constant(weight.clone()));
    let p = embed_tangent(&target, v)?;
    Ok(Point::new_unchecked(target, (*p.value()).clone()))
}
