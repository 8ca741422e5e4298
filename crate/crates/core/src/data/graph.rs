use super::{class_count, csv_error, read_labels, write_labels, DatasetKind, Meta, Splits};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::path::Path;

/// Node features, class labels and an undirected edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Undirected edges stored once as `(u, v)` with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub splits: Option<Splits>,
}

impl GraphDataset {
    /// Validates and normalizes the parts. Duplicate and reversed edges are
    /// merged with a warning; self-loops and out-of-range endpoints are
    /// schema errors.
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Schema(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Schema("features contain non-finite values".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Schema(format!(
                    "edge ({u}, {v}) has an endpoint outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Schema(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        if set.len() < edges.len() {
            log::warn!("dropped {} duplicate edges", edges.len() - set.len());
        }
        Ok(Self {
            name: name.into(),
            num_classes: class_count(&labels),
            features,
            labels,
            edges: set.into_iter().collect(),
            splits: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Dense symmetric 0/1 adjacency.
    pub fn adjacency(&self) -> Matrix {
        let n = self.num_nodes();
        let mut a = Matrix::zeros(n, n);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// Loads `edges` ("u v" per line), `features` (CSV with header) and
/// `labels` (one-column CSV with header).
pub fn load_graph(edges: &Path, features: &Path, labels: &Path) -> Result<GraphDataset> {
    let feats = read_features(features)?;
    let labels = read_labels(labels)?;
    let edge_list = read_edges(&std::fs::read_to_string(edges)?)?;
    let name = edges
        .parent()
        .and_then(|p| p.file_name())
        .map_or("graph".into(), |s| s.to_string_lossy().into_owned());
    GraphDataset::new(name, feats, labels, &edge_list)
}

/// Loads a dataset directory holding `edges.txt`, `features.csv`,
/// `labels.csv` and `meta.toml`.
pub fn load_graph_dir(dir: &Path) -> Result<GraphDataset> {
    let meta = Meta::read(dir)?;
    if meta.kind != DatasetKind::Graph {
        return Err(Error::Schema(format!(
            "{} does not hold a graph dataset",
            dir.display()
        )));
    }
    let mut ds = load_graph(
        &dir.join("edges.txt"),
        &dir.join("features.csv"),
        &dir.join("labels.csv"),
    )?;
    if ds.num_nodes() != meta.n || ds.feature_dim() != meta.d {
        return Err(Error::Schema(format!(
            "meta.toml declares n={}, d={} but files hold n={}, d={}",
            meta.n,
            meta.d,
            ds.num_nodes(),
            ds.feature_dim()
        )));
    }
    ds.name = meta.name;
    Ok(ds)
}

pub fn save_graph_dir(ds: &GraphDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for (u, v) in &ds.edges {
        edges.push_str(&format!("{u} {v}\n"));
    }
    std::fs::write(dir.join("edges.txt"), edges)?;
    let header: Vec<String> = (0..ds.feature_dim()).map(|j| format!("f{j}")).collect();
    let mut feats = header.join(",") + "\n";
    for i in 0..ds.num_nodes() {
        let row: Vec<String> = ds
            .features
            .row(i)
            .iter()
            .map(|x| format!("{x:?}"))
            .collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    std::fs::write(dir.join("features.csv"), feats)?;
    write_labels(&dir.join("labels.csv"), &ds.labels)?;
    Meta {
        name: ds.name.clone(),
        n: ds.num_nodes(),
        d: ds.feature_dim(),
        kind: DatasetKind::Graph,
    }
    .write(dir)
}

fn read_edges(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad node id `{s}`: {e}"),
            })
        };
        match parts.as_slice() {
            [u, v] => edges.push((parse(u)?, parse(v)?)),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `u v`, got `{line}`"),
                })
            }
        }
    }
    Ok(edges)
}

fn read_features(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let width = reader.headers().map_err(csv_error)?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad value `{field}`: {e}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Matrix::new(rows, width, data))
}

/// Edges of a random recursive tree on `n` nodes: node `i > 0` attaches to a
/// uniformly chosen earlier node.
pub fn random_tree_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..n).map(|i| (rng.random_range(0..i), i)).collect()
}
