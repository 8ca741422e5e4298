//! Datasets: graph and SPD containers, file formats, synthetic generators,
//! splits and the Gromov δ diagnostic.

mod blobs;
mod delta;
mod graph;
mod sir;
mod spd;
mod split;

pub use blobs::generate_blobs;
pub use delta::{gromov_delta, hop_distances, DELTA_NODE_CAP};
pub use graph::{load_graph, load_graph_dir, random_tree_edges, save_graph_dir, GraphDataset};
pub use sir::generate_sir_tree;
pub use spd::{
    build_covariance_dataset, covariance, load_spd_dir, save_spd_dir, synthetic_sequences,
    SpdDataset, SyntheticSpdConfig, PIVOT_RELATIVE_FLOOR,
};
pub use split::{sample_negative_edges, split_edges, split_indices, EdgeSplits, Splits};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Contents of `meta.toml` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    /// Nodes for graphs, matrices for SPD datasets.
    pub n: usize,
    /// Feature width for graphs, matrix side for SPD datasets.
    pub d: usize,
    #[serde(default)]
    pub kind: DatasetKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Graph,
    Spd,
}

impl Meta {
    pub fn read(dir: &Path) -> Result<Meta> {
        let path = dir.join("meta.toml");
        let text = std::fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(dir.join("meta.toml"), text)?;
        Ok(())
    }
}

/// Reads a one-column CSV of class labels with a header line.
fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected one label, got {} fields", record.len()),
            });
        }
        let label = record[0].parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad label `{}`: {e}", &record[0]),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}
