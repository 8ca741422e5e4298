use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rresnet::data::{
    build_covariance_dataset, generate_sir_tree, gromov_delta, load_graph_dir, save_graph_dir,
    save_spd_dir, synthetic_sequences, SyntheticSpdConfig, DELTA_NODE_CAP,
};
use rresnet::experiment::{evaluate, train, ExperimentConfig};

/// Riemannian residual networks: training, evaluation and data tools.
#[derive(Parser)]
#[command(name = "rresnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write metrics, checkpoints and a report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on the test split of a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic dataset directory.
    GenData {
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SIR: number of tree nodes.
        #[arg(long, default_value_t = 300)]
        nodes: usize,
        /// SIR: children per node.
        #[arg(long, default_value_t = 2)]
        branching: usize,
        /// SIR: base transmission probability.
        #[arg(long, default_value_t = 0.8)]
        infection_prob: f64,
        /// SPD: number of matrices.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// SPD: matrix side.
        #[arg(long, default_value_t = 10)]
        dim: usize,
        /// SPD: number of classes.
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// SPD: frames per sequence.
        #[arg(long, default_value_t = 60)]
        frames: usize,
        /// SPD: class offset in the log-spectrum.
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        /// SPD: per-eigenvalue log-spectrum noise.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// SPD: standard deviation of the global log-scale.
        #[arg(long, default_value_t = 0.5)]
        scale_spread: f64,
        /// SPD: log-eigenvalue drop from the largest to the smallest direction.
        #[arg(long, default_value_t = 4.0)]
        decay: f64,
        /// SPD: normalize covariances to correlations.
        #[arg(long)]
        correlation: bool,
    },
    /// Dataset diagnostics.
    Diagnose {
        what: Diagnostic,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Sir,
    Spd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Diagnostic {
    /// Gromov δ-hyperbolicity of the hop-count metric.
    Delta,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let report = train(&cfg)?;
            for s in &report.seeds {
                println!(
                    "seed {}: test {} = {:.4} (epoch {})",
                    s.seed, report.metric, s.test_metric, s.best_epoch
                );
            }
            println!(
                "{}: {} = {:.4} ± {:.4}",
                report.name, report.metric, report.mean, report.std
            );
            println!(
                "report written to {}",
                cfg.output_dir.join("report.json").display()
            );
        }
        Command::Evaluate { checkpoint, data } => {
            let e = evaluate(&checkpoint, &data)?;
            println!("{} = {:?}", e.metric, e.value);
        }
        Command::GenData {
            kind,
            out,
            seed,
            nodes,
            branching,
            infection_prob,
            samples,
            dim,
            classes,
            frames,
            separation,
            noise,
            scale_spread,
            decay,
            correlation,
        } => match kind {
            DataKind::Sir => {
                let ds = generate_sir_tree(nodes, branching, infection_prob, seed)?;
                save_graph_dir(&ds, &out)?;
                let infected = ds.labels.iter().sum::<usize>();
                println!(
                    "wrote SIR tree with {nodes} nodes ({infected} infected) to {}",
                    out.display()
                );
            }
            DataKind::Spd => {
                let cfg = SyntheticSpdConfig {
                    dim,
                    samples,
                    classes,
                    frames,
                    separation,
                    noise,
                    scale_spread,
                    decay,
                    seed,
                };
                let (seqs, labels) = synthetic_sequences(&cfg)?;
                let (ds, dropped) = build_covariance_dataset(&seqs, &labels, correlation)?;
                save_spd_dir(&ds, &out)?;
                println!(
                    "wrote {} SPD matrices ({} dropped) to {}",
                    ds.len(),
                    dropped.len(),
                    out.display()
                );
            }
        },
        Command::Diagnose {
            what: Diagnostic::Delta,
            data,
        } => {
            let ds = load_graph_dir(&data)?;
            if ds.num_nodes() > DELTA_NODE_CAP {
                bail!(
                    "{} nodes exceed the brute-force cap of {DELTA_NODE_CAP}",
                    ds.num_nodes()
                );
            }
            let delta = gromov_delta(ds.num_nodes(), &ds.edges, DELTA_NODE_CAP)?;
            println!("delta = {delta}");
        }
    }
    Ok(())
}
