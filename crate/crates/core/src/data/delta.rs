use crate::error::{precondition, Result};
use std::collections::VecDeque;

/// Largest graph accepted by the brute-force δ computation.
pub const DELTA_NODE_CAP: usize = 200;

/// All-pairs hop distances by breadth-first search; `None` if the graph is
/// disconnected.
pub fn hop_distances(n: usize, edges: &[(usize, usize)]) -> Result<Option<Vec<Vec<u32>>>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return precondition(format!("edge ({u}, {v}) out of range for {n} nodes"));
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut dist = vec![vec![u32::MAX; n]; n];
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == u32::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if row.contains(&u32::MAX) {
            return Ok(None);
        }
    }
    Ok(Some(dist))
}

/// Gromov δ-hyperbolicity of the hop-count metric: the maximum over
/// quadruples of half the gap between the two largest of the three pair
/// sums. Graphs above `cap` nodes are refused.
pub fn gromov_delta(n: usize, edges: &[(usize, usize)], cap: usize) -> Result<f64> {
    if n == 0 {
        return precondition("δ of an empty graph");
    }
    if n > cap {
        return precondition(format!(
            "{n} nodes exceed the brute-force cap of {cap}; δ is not computed"
        ));
    }
    let Some(d) = hop_distances(n, edges)? else {
        return precondition("δ needs a connected graph");
    };
    let mut best = 0u32;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let mut s = [d[i][j] + d[k][l], d[i][k] + d[j][l], d[i][l] + d[j][k]];
                    s.sort_unstable();
                    best = best.max(s[2] - s[1]);
                }
            }
        }
    }
    Ok(best as f64 / 2.0)
}
