use super::GraphDataset;
use crate::error::{precondition, Result};
use crate::numerics::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Edgeless dataset of Gaussian blobs with identity covariance. Class
/// centers lie on random unit directions scaled by `separation / 2` (two
/// classes sit at opposite points).
pub fn generate_blobs(
    samples: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<GraphDataset> {
    if dim == 0 || classes < 2 || samples < classes {
        return precondition("blobs need dim ≥ 1, classes ≥ 2 and a sample per class");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for c in 0..classes {
        if classes == 2 && c == 1 {
            centers.push(centers[0].iter().map(|v| -v).collect());
            continue;
        }
        let raw: Vec<f64> = (0..dim).map(|_| normal()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        centers.push(raw.iter().map(|v| v / norm * separation / 2.0).collect());
    }
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let features = Matrix::from_fn(samples, dim, |i, j| centers[labels[i]][j] + normal());
    GraphDataset::new(
        format!("blobs-{samples}-{dim}-{classes}"),
        features,
        labels,
        &[],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_separated() {
        let ds = generate_blobs(200, 5, 2, 8.0, 1).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert!(ds.edges.is_empty());
        // class means are far apart relative to the unit noise
        let mean = |c: usize| -> Vec<f64> {
            let idx: Vec<usize> = (0..200).filter(|&i| ds.labels[i] == c).collect();
            (0..5)
                .map(|j| idx.iter().map(|&i| ds.features[(i, j)]).sum::<f64>() / idx.len() as f64)
                .collect()
        };
        let (a, b) = (mean(0), mean(1));
        let gap = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((gap - 8.0).abs() < 1.0, "{gap}");
        assert_eq!(ds, generate_blobs(200, 5, 2, 8.0, 1).unwrap());
    }
}
