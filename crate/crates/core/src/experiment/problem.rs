//! Task-specific losses and metrics over a fixed dataset and split.

use super::config::Task;
use crate::data::{
    sample_negative_edges, split_edges, split_indices, GraphDataset, SpdDataset, Splits,
};
use crate::error::{precondition, Error, Result};
use crate::model::{HeadKind, Model, ModelConfig};
use crate::numerics::{Matrix, Tape, Var};
use crate::optim::{Bound, ParamStore};
use crate::tasks::{adjacency_power, argmax_rows, f1_micro, roc_auc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Loaded data of either kind.
#[derive(Debug, Clone)]
pub enum Dataset {
    Graph(GraphDataset),
    Spd(SpdDataset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A dataset bound to a task, split and model input layout.
pub enum Problem {
    Nodes {
        x: Matrix,
        labels: Vec<usize>,
        graph: Option<Matrix>,
        splits: Splits,
        classes: usize,
    },
    Links {
        x: Matrix,
        graph: Option<Matrix>,
        n: usize,
        all: HashSet<(usize, usize)>,
        train: Vec<(usize, usize)>,
        val: Pairs,
        test: Pairs,
    },
    /// SPD matrices fed one at a time to an SPD model.
    Matrices {
        xs: Vec<Matrix>,
        labels: Vec<usize>,
        splits: Splits,
        classes: usize,
    },
}

/// Node pairs with link labels.
pub struct Pairs {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<bool>,
}

const EVAL_NEGATIVE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl Problem {
    /// Splits are drawn from `seed`. `graph_power > 0` builds the
    /// propagation matrix from the edges visible during training.
    pub fn new(
        dataset: &Dataset,
        task: Task,
        fractions: [f64; 3],
        seed: u64,
        spd_model: bool,
        graph_power: usize,
        graph_normalize: bool,
    ) -> Result<Self> {
        match (task, dataset) {
            (Task::Nc, Dataset::Graph(g)) => {
                let graph = propagation(g.num_nodes(), &g.edges, graph_power, graph_normalize)?;
                Ok(Problem::Nodes {
                    x: g.features.clone(),
                    labels: g.labels.clone(),
                    graph,
                    splits: split_indices(&g.labels, fractions, seed)?,
                    classes: g.num_classes.max(2),
                })
            }
            (Task::Lp, Dataset::Graph(g)) => {
                let parts = split_edges(&g.edges, fractions, seed)?;
                let all: HashSet<_> = g.edges.iter().copied().collect();
                let n = g.num_nodes();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_NEGATIVE_SALT);
                let mut labelled = |pos: Vec<(usize, usize)>| -> Result<Pairs> {
                    let neg = sample_negative_edges(n, &all, pos.len(), &mut rng)?;
                    let labels = pos
                        .iter()
                        .map(|_| true)
                        .chain(neg.iter().map(|_| false))
                        .collect();
                    Ok(Pairs {
                        pairs: pos.into_iter().chain(neg).collect(),
                        labels,
                    })
                };
                let val = labelled(parts.val)?;
                let test = labelled(parts.test)?;
                if parts.train.is_empty() {
                    return precondition("link prediction needs training edges");
                }
                let graph = propagation(n, &parts.train, graph_power, graph_normalize)?;
                Ok(Problem::Links {
                    x: g.features.clone(),
                    graph,
                    n,
                    all,
                    train: parts.train,
                    val,
                    test,
                })
            }
            (Task::SpdClassify, Dataset::Spd(s)) => {
                let splits = split_indices(&s.labels, fractions, seed)?;
                let classes = s.num_classes.max(2);
                if spd_model {
                    Ok(Problem::Matrices {
                        xs: s.matrices.clone(),
                        labels: s.labels.clone(),
                        splits,
                        classes,
                    })
                } else {
                    let n = s.dim();
                    let rows: Vec<Matrix> =
                        s.matrices.iter().map(|m| m.reshape(1, n * n)).collect();
                    Ok(Problem::Nodes {
                        x: Matrix::vstack(&rows),
                        labels: s.labels.clone(),
                        graph: None,
                        splits,
                        classes,
                    })
                }
            }
            (task, _) => Err(Error::Config(format!(
                "task {task:?} does not fit the dataset"
            ))),
        }
    }

    /// Model configuration matching the input layout of this problem.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        match self {
            Problem::Nodes { x, classes, .. } => {
                cfg.input_dim = x.cols();
                cfg.num_classes = *classes;
                cfg.head = HeadKind::Linear;
            }
            Problem::Links { x, .. } => {
                cfg.input_dim = x.cols();
                cfg.num_classes = 2;
                cfg.head = HeadKind::FermiDirac;
            }
            Problem::Matrices { xs, classes, .. } => {
                cfg.input_dim = xs[0].rows();
                cfg.num_classes = *classes;
                cfg.head = HeadKind::SpdLogEig;
            }
        }
        cfg
    }

    /// Training loss on the tape. Link prediction draws one fresh negative
    /// per positive edge from `rng`.
    pub fn loss<'t>(
        &self,
        model: &Model,
        tape: &'t Tape,
        params: &Bound<'t>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<'t>> {
        match self {
            Problem::Nodes {
                x,
                labels,
                graph,
                splits,
                ..
            } => {
                let g = graph.as_ref().map(|g| tape.constant(g.clone()));
                let scores = model.scores(params, tape.constant(x.clone()), g)?;
                let train_labels: Vec<usize> = splits.train.iter().map(|&i| labels[i]).collect();
                Ok(scores
                    .gather_rows(&splits.train)
                    .softmax_cross_entropy(&train_labels))
            }
            Problem::Links {
                x,
                graph,
                n,
                all,
                train,
                ..
            } => {
                let g = graph.as_ref().map(|g| tape.constant(g.clone()));
                let z = model.forward(params, tape.constant(x.clone()), g)?;
                let neg = sample_negative_edges(*n, all, train.len(), rng)?;
                let pos_logits = model.link_logits(params, z, train)?;
                let neg_logits = model.link_logits(params, z, &neg)?;
                // binary cross-entropy with logits
                Ok(pos_logits
                    .neg()
                    .softplus()
                    .mean()
                    .add(neg_logits.softplus().mean()))
            }
            Problem::Matrices {
                xs, labels, splits, ..
            } => {
                let mut rows = Vec::with_capacity(splits.train.len());
                for &i in &splits.train {
                    rows.push(model.scores(params, tape.constant(xs[i].clone()), None)?);
                }
                let train_labels: Vec<usize> = splits.train.iter().map(|&i| labels[i]).collect();
                Ok(Var::stack_rows(&rows).softmax_cross_entropy(&train_labels))
            }
        }
    }

    /// F1 (classification) or ROC AUC (links) on a split.
    pub fn metric(&self, model: &Model, store: &ParamStore, split: Split) -> Result<f64> {
        let tape = Tape::new();
        let params = store.bind_constant(&tape);
        match self {
            Problem::Nodes {
                x,
                labels,
                graph,
                splits,
                classes,
            } => {
                let idx = pick(splits, split);
                let g = graph.as_ref().map(|g| tape.constant(g.clone()));
                let scores = model.scores(&params, tape.constant(x.clone()), g)?;
                let pred = argmax_rows(&scores.value().select_rows(idx));
                let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                f1_micro(&pred, &truth, *classes)
            }
            Problem::Links {
                x,
                graph,
                val,
                test,
                ..
            } => {
                let g = graph.as_ref().map(|g| tape.constant(g.clone()));
                let z = model.forward(&params, tape.constant(x.clone()), g)?;
                let (pairs, labels) = match split {
                    Split::Val => (&val.pairs, val.labels.clone()),
                    Split::Test => (&test.pairs, test.labels.clone()),
                    Split::Train => return precondition("training links have no fixed negatives"),
                };
                if pairs.is_empty() {
                    return precondition(format!("the {} split is empty", split.name()));
                }
                let logits = model.link_logits(&params, z, pairs)?.value();
                roc_auc(logits.data(), &labels)
            }
            Problem::Matrices {
                xs,
                labels,
                splits,
                classes,
            } => {
                let idx = pick(splits, split);
                let mut pred = Vec::with_capacity(idx.len());
                for &i in idx {
                    let s = model.scores(&params, tape.constant(xs[i].clone()), None)?;
                    pred.push(argmax_rows(&s.value())[0]);
                }
                let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                f1_micro(&pred, &truth, *classes)
            }
        }
    }

    pub fn has_split(&self, split: Split) -> bool {
        match self {
            Problem::Nodes { splits, .. } | Problem::Matrices { splits, .. } => {
                !pick(splits, split).is_empty()
            }
            Problem::Links {
                train, val, test, ..
            } => match split {
                Split::Train => !train.is_empty(),
                Split::Val => !val.pairs.is_empty(),
                Split::Test => !test.pairs.is_empty(),
            },
        }
    }

    /// First layer whose output is non-finite or fails, if any.
    pub fn failing_layer(&self, model: &Model, store: &ParamStore) -> Option<usize> {
        let tape = Tape::new();
        let params = store.bind_constant(&tape);
        let (x, graph) = match self {
            Problem::Nodes { x, graph, .. } | Problem::Links { x, graph, .. } => {
                (x.clone(), graph.clone())
            }
            Problem::Matrices { xs, .. } => (xs[0].clone(), None),
        };
        let g = graph.map(|g| tape.constant(g));
        let mut h = tape.constant(x.scale(model.config.model.input_scale));
        for i in 0..model.layers.len() {
            match model.layer_forward(&params, i, h, g) {
                Ok(next) if next.value().is_finite() => h = next,
                _ => return Some(i),
            }
        }
        None
    }
}

fn pick(splits: &Splits, split: Split) -> &[usize] {
    match split {
        Split::Train => &splits.train,
        Split::Val => &splits.val,
        Split::Test => &splits.test,
    }
}

fn propagation(
    n: usize,
    edges: &[(usize, usize)],
    power: usize,
    normalize: bool,
) -> Result<Option<Matrix>> {
    if power == 0 {
        return Ok(None);
    }
    let mut a = Matrix::zeros(n, n);
    for &(u, v) in edges {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    Ok(Some(adjacency_power(&a, power, normalize)?))
}
