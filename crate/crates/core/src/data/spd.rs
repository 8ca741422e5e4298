use super::{class_count, read_labels, write_labels, DatasetKind, Meta};
use crate::error::{precondition, Error, Result};
use crate::numerics::{cholesky_with_floor, Matrix};
use crate::optim::qr_retract;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// A covariance matrix is dropped when a Cholesky pivot falls to or below
/// this fraction of its largest diagonal entry.
pub const PIVOT_RELATIVE_FLOOR: f64 = 1e-10;

/// SPD matrices with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdDataset {
    pub name: String,
    pub matrices: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl SpdDataset {
    pub fn new(name: impl Into<String>, matrices: Vec<Matrix>, labels: Vec<usize>) -> Result<Self> {
        if matrices.len() != labels.len() {
            return Err(Error::Schema(format!(
                "{} matrices but {} labels",
                matrices.len(),
                labels.len()
            )));
        }
        let Some(first) = matrices.first() else {
            return Err(Error::Schema(
                "an SPD dataset needs at least one matrix".into(),
            ));
        };
        let n = first.rows();
        for (i, m) in matrices.iter().enumerate() {
            if m.shape() != (n, n) {
                return Err(Error::Schema(format!(
                    "matrix {i} has shape {:?}, expected {n}x{n}",
                    m.shape()
                )));
            }
            if !m.is_symmetric(1e-10 * m.max_abs().max(1.0)) {
                return Err(Error::Schema(format!("matrix {i} is not symmetric")));
            }
            if !passes_filter(m)? {
                return Err(Error::Schema(format!(
                    "matrix {i} is not positive definite"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes: class_count(&labels),
            matrices,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Side length of the matrices.
    pub fn dim(&self) -> usize {
        self.matrices[0].rows()
    }
}

fn passes_filter(m: &Matrix) -> Result<bool> {
    let scale = m.diag().into_iter().fold(0.0, f64::max);
    Ok(cholesky_with_floor(m, PIVOT_RELATIVE_FLOOR * scale)?.is_factor())
}

/// Sample covariance `1/(T-1) Σ (x_t - μ)(x_t - μ)ᵀ` of the rows of `frames`.
pub fn covariance(frames: &Matrix) -> Result<Matrix> {
    let (t, n) = frames.shape();
    if t < 2 {
        return precondition(format!("covariance needs at least 2 frames, got {t}"));
    }
    let mean: Vec<f64> = (0..n)
        .map(|j| frames.col(j).iter().sum::<f64>() / t as f64)
        .collect();
    let centered = Matrix::from_fn(t, n, |i, j| frames[(i, j)] - mean[j]);
    Ok(centered
        .transpose()
        .matmul(&centered)
        .scale(1.0 / (t - 1) as f64)
        .symmetrize())
}

/// Builds one covariance (or correlation) matrix per sequence and drops
/// those failing the Cholesky filter. Returns the dataset and the indices of
/// the dropped sequences.
pub fn build_covariance_dataset(
    sequences: &[Matrix],
    labels: &[usize],
    use_correlation: bool,
) -> Result<(SpdDataset, Vec<usize>)> {
    if sequences.len() != labels.len() {
        return precondition(format!(
            "{} sequences but {} labels",
            sequences.len(),
            labels.len()
        ));
    }
    let mut kept = Vec::new();
    let mut kept_labels = Vec::new();
    let mut dropped = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        let (t, n) = seq.shape();
        if t <= n {
            return precondition(format!(
                "sequence {i} has {t} frames of dimension {n}; need more frames than channels"
            ));
        }
        let mut c = covariance(seq)?;
        if use_correlation {
            let sd: Vec<f64> = c.diag().iter().map(|v| v.sqrt()).collect();
            if sd.iter().any(|&s| !(s > 0.0)) {
                dropped.push(i);
                continue;
            }
            c = Matrix::from_fn(n, n, |a, b| {
                if a == b {
                    1.0
                } else {
                    c[(a, b)] / (sd[a] * sd[b])
                }
            });
        }
        if c.is_finite() && passes_filter(&c)? {
            kept.push(c);
            kept_labels.push(labels[i]);
        } else {
            dropped.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::Schema(format!(
            "all {} covariance matrices failed the Cholesky filter",
            sequences.len()
        )));
    }
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} of {} covariance matrices that failed Cholesky",
            dropped.len(),
            sequences.len()
        );
    }
    Ok((SpdDataset::new("covariance", kept, kept_labels)?, dropped))
}

/// Parameters of the synthetic covariance-sequence generator.
///
/// Sample `i` of class `c` has population covariance `Q diag(exp(a)) Qᵀ`
/// with a shared random rotation `Q` and log-spectrum
/// `a_k = -decay·k/(dim-1) + separation·u_c,k + noise·ε_k + scale_spread·g`.
/// `ε` and `g` are standard normal, so the global log-scale `g` carries no
/// class information. The class directions `u_c` are trace-free unit vectors
/// supported on the lower half of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpdConfig {
    pub dim: usize,
    pub samples: usize,
    pub classes: usize,
    pub frames: usize,
    pub separation: f64,
    pub noise: f64,
    pub scale_spread: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for SyntheticSpdConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            samples: 200,
            classes: 2,
            frames: 60,
            separation: 1.0,
            noise: 0.5,
            scale_spread: 0.5,
            decay: 4.0,
            seed: 0,
        }
    }
}

/// Frame sequences (`frames × dim` each) and balanced labels.
pub fn synthetic_sequences(cfg: &SyntheticSpdConfig) -> Result<(Vec<Matrix>, Vec<usize>)> {
    if cfg.dim < 4 || cfg.classes < 2 || cfg.samples < cfg.classes {
        return precondition(
            "synthetic SPD data needs dim ≥ 4, classes ≥ 2 and a sample per class",
        );
    }
    if cfg.frames <= cfg.dim {
        return precondition(format!(
            "{} frames cannot give full-rank {}x{} covariances",
            cfg.frames, cfg.dim, cfg.dim
        ));
    }
    let n = cfg.dim;
    let tail = n / 2..n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let q = qr_retract(&Matrix::from_fn(n, n, |_, _| normal()))?;
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for c in 0..cfg.classes {
        if cfg.classes == 2 && c == 1 {
            directions.push(directions[0].iter().map(|v| -v).collect());
            continue;
        }
        let raw: Vec<f64> = tail.clone().map(|_| normal()).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let norm = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        let mut u = vec![0.0; n];
        for (k, r) in tail.clone().zip(&raw) {
            u[k] = (r - mean) / norm;
        }
        directions.push(u);
    }
    let base: Vec<f64> = (0..n)
        .map(|k| -cfg.decay * k as f64 / (n - 1) as f64)
        .collect();
    let mut sequences = Vec::with_capacity(cfg.samples);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let c = i % cfg.classes;
        let g = normal() * cfg.scale_spread;
        let half: Vec<f64> = (0..n)
            .map(|k| {
                (0.5 * (base[k] + cfg.separation * directions[c][k] + cfg.noise * normal() + g))
                    .exp()
            })
            .collect();
        // rows of Z (Q diag(e^{a/2}))ᵀ have covariance Q diag(e^a) Qᵀ
        let factor = Matrix::from_fn(n, n, |r, k| q[(r, k)] * half[k]);
        let z = Matrix::from_fn(cfg.frames, n, |_, _| normal());
        sequences.push(z.matmul(&factor.transpose()));
        labels.push(c);
    }
    Ok((sequences, labels))
}

/// Writes `matrices/NNNNN.txt` (plain-text matrix format), `labels.csv`
/// and `meta.toml`.
pub fn save_spd_dir(ds: &SpdDataset, dir: &Path) -> Result<()> {
    let mdir = dir.join("matrices");
    std::fs::create_dir_all(&mdir)?;
    for (i, m) in ds.matrices.iter().enumerate() {
        std::fs::write(mdir.join(format!("{i:05}.txt")), m.to_text())?;
    }
    write_labels(&dir.join("labels.csv"), &ds.labels)?;
    Meta {
        name: ds.name.clone(),
        n: ds.len(),
        d: ds.dim(),
        kind: DatasetKind::Spd,
    }
    .write(dir)
}

pub fn load_spd_dir(dir: &Path) -> Result<SpdDataset> {
    let meta = Meta::read(dir)?;
    if meta.kind != DatasetKind::Spd {
        return Err(Error::Schema(format!(
            "{} does not hold an SPD dataset",
            dir.display()
        )));
    }
    let labels = read_labels(&dir.join("labels.csv"))?;
    if labels.len() != meta.n {
        return Err(Error::Schema(format!(
            "meta.toml declares {} matrices but labels.csv has {}",
            meta.n,
            labels.len()
        )));
    }
    let mut matrices = Vec::with_capacity(meta.n);
    for i in 0..meta.n {
        let path = dir.join("matrices").join(format!("{i:05}.txt"));
        let m = Matrix::from_text(&std::fs::read_to_string(&path)?).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        if m.shape() != (meta.d, meta.d) {
            return Err(Error::Schema(format!(
                "{} has shape {:?}, expected {}x{}",
                path.display(),
                m.shape(),
                meta.d,
                meta.d
            )));
        }
        matrices.push(m);
    }
    SpdDataset::new(meta.name, matrices, labels)
}
