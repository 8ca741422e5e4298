use super::GraphDataset;
use crate::error::{precondition, Result};
use crate::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SIR spread on a complete `branching`-ary tree of `n` nodes (node `i > 0`
/// has parent `(i - 1) / branching`). The root is infected; an infected
/// parent infects a child of susceptibility `s ~ U(0.5, 1.5)` with
/// probability `1 - (1 - p)^s`. Features are `[susceptibility, depth,
/// degree]`, labels are 1 for infected nodes.
pub fn generate_sir_tree(n: usize, branching: usize, p: f64, seed: u64) -> Result<GraphDataset> {
    if n < 2 {
        return precondition(format!("an SIR tree needs at least 2 nodes, got {n}"));
    }
    if branching == 0 {
        return precondition("branching factor must be at least 1");
    }
    if !(p > 0.0 && p <= 1.0) {
        return precondition(format!("infection probability must lie in (0, 1], got {p}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parent = |i: usize| (i - 1) / branching;
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (parent(i), i)).collect();
    let susceptibility: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();

    let mut depth = vec![0usize; n];
    let mut degree = vec![0usize; n];
    let mut infected = vec![false; n];
    infected[0] = true;
    for i in 1..n {
        let par = parent(i);
        depth[i] = depth[par] + 1;
        degree[i] += 1;
        degree[par] += 1;
        let chance = 1.0 - (1.0 - p).powf(susceptibility[i]);
        let draw: f64 = rng.random();
        infected[i] = infected[par] && draw < chance;
    }
    let features = Matrix::from_fn(n, 3, |i, j| match j {
        0 => susceptibility[i],
        1 => depth[i] as f64,
        _ => degree[i] as f64,
    });
    let labels = infected.iter().map(|&b| b as usize).collect();
    let mut ds = GraphDataset::new(
        format!("sir-{n}-{branching}-{p}-{seed}"),
        features,
        labels,
        &edges,
    )?;
    ds.num_classes = 2;
    Ok(ds)
}
