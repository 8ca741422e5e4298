use crate::error::{precondition, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Edge partition for link prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeSplits {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|&f| !(f >= 0.0)) || fractions.iter().all(|&f| f == 0.0) {
        return precondition(format!(
            "split fractions must be nonnegative and not all zero, got {fractions:?}"
        ));
    }
    if fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
        return precondition(format!("split fractions {fractions:?} sum to more than 1"));
    }
    let mut sizes = [0; 3];
    let mut left = n;
    for (s, f) in sizes.iter_mut().zip(fractions) {
        *s = ((f * n as f64).round() as usize).min(left);
        left -= *s;
    }
    Ok(sizes)
}

/// Seeded split of `0..labels.len()` into train/val/test with the given
/// fractions, stratified by class. Each class's members are shuffled and
/// given rank keys `(rank + u) / class_size`; sorting all indices by key
/// interleaves the classes so every prefix holds each class in proportion.
/// Falls back to an unstratified shuffle, with a warning, when some class
/// has fewer members than there are nonempty splits.
pub fn split_indices(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let n = labels.len();
    let sizes = split_sizes(n, fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let parts = sizes.iter().filter(|&&s| s > 0).count();
    let stratify = members.iter().all(|m| m.is_empty() || m.len() >= parts);
    let order: Vec<usize> = if stratify {
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
        for m in &mut members {
            m.shuffle(&mut rng);
            let size = m.len() as f64;
            for (rank, &i) in m.iter().enumerate() {
                let jitter: f64 = rng.random();
                keyed.push(((rank as f64 + jitter) / size, i));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, i)| i).collect()
    } else {
        log::warn!(
            "a class is too small to stratify {parts} splits; splitting without stratification"
        );
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };
    let (train, rest) = order.split_at(sizes[0]);
    let (val, rest) = rest.split_at(sizes[1]);
    Ok(Splits {
        train: train.to_vec(),
        val: val.to_vec(),
        test: rest[..sizes[2]].to_vec(),
    })
}

/// Seeded random partition of an edge list.
pub fn split_edges(edges: &[(usize, usize)], fractions: [f64; 3], seed: u64) -> Result<EdgeSplits> {
    let sizes = split_sizes(edges.len(), fractions)?;
    let mut shuffled = edges.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = shuffled.split_at(sizes[0]);
    let (val, rest) = rest.split_at(sizes[1]);
    Ok(EdgeSplits {
        train: train.to_vec(),
        val: val.to_vec(),
        test: rest[..sizes[2]].to_vec(),
    })
}

/// `count` uniformly drawn node pairs `(u, v)`, `u < v`, that are not in
/// `edges`. Pairs may repeat across draws.
pub fn sample_negative_edges(
    n: usize,
    edges: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if n < 2 || edges.len() >= n * (n - 1) / 2 {
        return precondition("the graph has no non-edges to sample");
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        let pair = (u.min(v), u.max(v));
        if u != v && !edges.contains(&pair) {
            out.push(pair);
        }
    }
    Ok(out)
}
