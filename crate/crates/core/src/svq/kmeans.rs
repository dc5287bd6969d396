//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sparse::sq_dist;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_ITERATIONS: usize = 50;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after seeding and after each
    /// iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn assign(points: &Tensor, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            total += best.1;
            best.0
        })
        .collect();
    (labels, total)
}

fn plus_plus(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centroids = vec![points.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on an already chosen point
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters the rows of `points` into `k` groups. Empty clusters keep their
/// previous centroid, so the objective never increases.
pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<KMeansResult> {
    if points.ndim() != 2 {
        return Err(Error::Shape(format!(
            "k-means expects a matrix, got {:?}",
            points.shape()
        )));
    }
    if k == 0 || points.rows() < k {
        return Err(Error::Config(format!(
            "k-means needs at least k = {k} samples, got {}",
            points.rows()
        )));
    }
    let d = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let (mut labels, obj) = assign(points, &centroids);
    let mut objective = vec![obj];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        let (next_labels, obj) = assign(points, &centroids);
        labels = next_labels;
        objective.push(obj);
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }

    Ok(KMeansResult {
        centroids: Tensor::new(vec![k, d], centroids.concat())?,
        assignments: labels,
        objective,
        iterations,
    })
}
