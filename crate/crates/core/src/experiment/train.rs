use super::config::{DatasetSource, ExperimentConfig, Task};
use super::problem::{Dataset, Problem, Split};
use crate::data::{
    build_covariance_dataset, generate_blobs, generate_sir_tree, load_graph_dir, load_spd_dir,
    synthetic_sequences, SyntheticSpdConfig,
};
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model, ModelCheckpoint, ModelConfig};
use crate::numerics::{Matrix, Tape};
use crate::optim::{Adam, AdamConfig, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

const RUN_CHECKPOINT_FORMAT: &str = "rresnet-run-v1";

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Epoch whose parameters scored best on validation and were kept.
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    pub final_loss: f64,
    pub metrics_csv: PathBuf,
    pub checkpoint: PathBuf,
}

/// Summary of a training run over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub task: Task,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub seeds: Vec<SeedResult>,
    pub wall_clock_seconds: f64,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

/// Trained parameters plus what is needed to rebuild the evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format: String,
    pub task: Task,
    pub seed: u64,
    pub split: [f64; 3],
    pub model: ModelCheckpoint,
}

/// Result of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metric: &'static str,
    pub value: f64,
}

/// Loads or generates the dataset described by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let path = || {
        d.path
            .clone()
            .ok_or_else(|| Error::Config("directory datasets need `path`".into()))
    };
    Ok(match d.source {
        DatasetSource::Sir => Dataset::Graph(generate_sir_tree(
            d.nodes,
            d.branching,
            d.infection_prob,
            d.seed,
        )?),
        DatasetSource::Blobs => Dataset::Graph(generate_blobs(
            d.samples,
            d.dim,
            d.classes,
            d.separation,
            d.seed,
        )?),
        DatasetSource::GraphDir => Dataset::Graph(load_graph_dir(&path()?)?),
        DatasetSource::SpdDir => Dataset::Spd(load_spd_dir(&path()?)?),
        DatasetSource::SpdSynthetic => {
            let (seqs, labels) = synthetic_sequences(&synthetic_config(cfg))?;
            Dataset::Spd(build_covariance_dataset(&seqs, &labels, d.use_correlation)?.0)
        }
    })
}

/// Synthetic SPD generator settings taken from the dataset section.
pub fn synthetic_config(cfg: &ExperimentConfig) -> SyntheticSpdConfig {
    let d = &cfg.dataset;
    SyntheticSpdConfig {
        dim: d.dim,
        samples: d.samples,
        classes: d.classes,
        frames: d.frames,
        separation: d.separation,
        noise: d.noise,
        scale_spread: d.scale_spread,
        decay: d.decay,
        seed: d.seed,
    }
}

/// Trains one model per seed, writing `metrics_seed<S>.csv`,
/// `checkpoint_seed<S>.toml` and `report.json` into the output directory.
pub fn train(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dataset = load_dataset(cfg)?;
    train_on(cfg, &dataset, start)
}

/// [`train`] on an already loaded dataset.
pub fn train_on(cfg: &ExperimentConfig, dataset: &Dataset, start: Instant) -> Result<RunReport> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let result = train_seed(cfg, dataset, seed)?;
        log::info!(
            "{} seed {seed}: test {} = {:.4}",
            cfg.name,
            cfg.task.metric(),
            result.test_metric
        );
        seeds.push(result);
    }
    let values: Vec<f64> = seeds.iter().map(|s| s.test_metric).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let report = RunReport {
        name: cfg.name.clone(),
        task: cfg.task,
        metric: cfg.task.metric().into(),
        mean,
        std,
        seeds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config_hash: cfg.content_hash()?,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(cfg.output_dir.join("report.json"), json + "\n")?;
    Ok(report)
}

fn base_model_config(cfg: &ExperimentConfig) -> ModelConfig {
    ModelConfig {
        manifold: cfg.manifold.clone(),
        model: cfg.model.clone(),
        input_dim: 0,
        num_classes: 2,
        head: HeadKind::Linear,
    }
}

fn is_spd_manifold(name: &str) -> bool {
    name.starts_with("spd")
}

fn train_seed(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<SeedResult> {
    let problem = Problem::new(
        dataset,
        cfg.task,
        cfg.dataset.split,
        seed,
        is_spd_manifold(&cfg.manifold.name),
        cfg.model.graph_power,
        cfg.model.graph_normalize,
    )?;
    let model_cfg = problem.model_config(&base_model_config(cfg));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut model = Model::new(&model_cfg, &mut store, &mut rng)?;
    model.debug = cfg.debug;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate(),
            weight_decay: cfg.optimizer.weight_decay,
            ..Default::default()
        },
        &store,
    );
    let metric = cfg.task.metric();
    let has_val = problem.has_split(Split::Val);
    let has_test = problem.has_split(Split::Test);
    let mut csv = String::from("epoch,split,metric,value\n");
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut final_loss = f64::NAN;
    let epochs = cfg.optimizer.epochs;
    for epoch in 1..=epochs {
        let tape = Tape::new();
        let params = store.bind(&tape);
        let loss = match problem.loss(&model, &tape, &params, &mut rng) {
            Ok(loss) => loss,
            Err(
                e @ (Error::Numeric(_)
                | Error::Singularity { .. }
                | Error::Domain(_)
                | Error::Precondition(_)),
            ) => {
                return Err(divergence(&problem, &model, &store, epoch, &e.to_string()));
            }
            Err(e) => return Err(e),
        };
        final_loss = loss.item();
        let grads = tape.backward(loss);
        let grads: Vec<Matrix> = params.vars().iter().map(|v| grads.wrt(*v)).collect();
        if !final_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(divergence(
                &problem,
                &model,
                &store,
                epoch,
                &format!("loss {final_loss}"),
            ));
        }
        csv.push_str(&format!("{epoch},train,loss,{final_loss:?}\n"));
        adam.step(&mut store, &grads)?;
        if epoch % cfg.optimizer.eval_every == 0 || epoch == epochs {
            let val = if has_val {
                Some(problem.metric(&model, &store, Split::Val)?)
            } else {
                None
            };
            if let Some(v) = val {
                csv.push_str(&format!("{epoch},val,{metric},{v:?}\n"));
            }
            if has_test {
                let t = problem.metric(&model, &store, Split::Test)?;
                csv.push_str(&format!("{epoch},test,{metric},{t:?}\n"));
            }
            // without a validation split the latest parameters are kept
            let score = val.unwrap_or(f64::INFINITY);
            if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
                best = Some((score, epoch, store.clone()));
            }
        }
    }
    let (val_metric, best_epoch, best_store) = best.expect("the last epoch is always evaluated");
    let test_metric = if has_test {
        problem.metric(&model, &best_store, Split::Test)?
    } else {
        f64::NAN
    };
    let metrics_csv = cfg.output_dir.join(format!("metrics_seed{seed}.csv"));
    std::fs::write(&metrics_csv, csv)?;
    let checkpoint = cfg.output_dir.join(format!("checkpoint_seed{seed}.toml"));
    let run = RunCheckpoint {
        format: RUN_CHECKPOINT_FORMAT.into(),
        task: cfg.task,
        seed,
        split: cfg.dataset.split,
        model: model.checkpoint(&best_store),
    };
    std::fs::write(
        &checkpoint,
        toml::to_string(&run).map_err(|e| Error::Schema(e.to_string()))?,
    )?;
    Ok(SeedResult {
        seed,
        best_epoch,
        val_metric: if has_val { val_metric } else { f64::NAN },
        test_metric,
        final_loss,
        metrics_csv,
        checkpoint,
    })
}

fn divergence(
    problem: &Problem,
    model: &Model,
    store: &ParamStore,
    step: usize,
    cause: &str,
) -> Error {
    let layer = match problem.failing_layer(model, store) {
        Some(i) => format!("layer {i}"),
        None => "the head".into(),
    };
    let norms: Vec<String> = store
        .norms()
        .iter()
        .map(|(name, n)| format!("{name}={n:.3e}"))
        .collect();
    Error::Diverged {
        step,
        detail: format!(
            "{cause}; first failing output at {layer}; parameter norms: {}",
            norms.join(", ")
        ),
    }
}

pub fn load_run_checkpoint(path: &Path) -> Result<RunCheckpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: RunCheckpoint = toml::from_str(&text)
        .map_err(|e| Error::Schema(format!("invalid checkpoint {}: {e}", path.display())))?;
    if ckpt.format != RUN_CHECKPOINT_FORMAT {
        return Err(Error::Schema(format!(
            "unsupported checkpoint format '{}'",
            ckpt.format
        )));
    }
    Ok(ckpt)
}

/// Test-split metric of a saved run on a dataset directory.
pub fn evaluate(checkpoint: &Path, data_dir: &Path) -> Result<Evaluation> {
    let ckpt = load_run_checkpoint(checkpoint)?;
    let dataset = if ckpt.task == Task::SpdClassify {
        Dataset::Spd(load_spd_dir(data_dir)?)
    } else {
        Dataset::Graph(load_graph_dir(data_dir)?)
    };
    evaluate_on(&ckpt, &dataset)
}

/// Test-split metric of a saved run on a loaded dataset.
pub fn evaluate_on(ckpt: &RunCheckpoint, dataset: &Dataset) -> Result<Evaluation> {
    let (model, store) = Model::from_checkpoint(&ckpt.model)?;
    let spec = &ckpt.model.config;
    let problem = Problem::new(
        dataset,
        ckpt.task,
        ckpt.split,
        ckpt.seed,
        is_spd_manifold(&spec.manifold.name),
        spec.model.graph_power,
        spec.model.graph_normalize,
    )?;
    let expected = problem.model_config(spec);
    if expected.input_dim != spec.input_dim || expected.num_classes != spec.num_classes {
        return Err(Error::Config(format!(
            "checkpoint expects inputs of dimension {} with {} classes, dataset gives {} and {}",
            spec.input_dim, spec.num_classes, expected.input_dim, expected.num_classes
        )));
    }
    Ok(Evaluation {
        metric: ckpt.task.metric(),
        value: problem.metric(&model, &store, Split::Test)?,
    })
}
