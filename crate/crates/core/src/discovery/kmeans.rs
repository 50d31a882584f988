use ndarray::{Array2, ArrayView1};
use rand::Rng;

use super::{fold_norms, objective, ConceptDictionary, DiscoveryConfig, DiscoveryMethod, DiscoveryResult};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor_io::ActivationMatrix;

/// Lloyd's algorithm with k-means++ seeding.
///
/// Iterates until the assignment is a fixpoint or `max_iters` is reached.
/// An empty cluster is re-seeded to the sample farthest from its current
/// centroid. Centroids become unit-norm concepts with their norms moved into
/// `U`, so each row of `U` has exactly one non-zero entry (unless the sample's
/// centroid is the origin).
pub fn discover_kmeans(a: &ActivationMatrix, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let data = a.data();
    let (n, p) = data.dim();
    let k = cfg.k;
    if k > n {
        return Err(Error::KTooLarge { k, max: n });
    }

    let mut centroids = seed_plus_plus(data, k, cfg.seed);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..cfg.max_iters {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, row) in data.rows().into_iter().enumerate() {
            let (best, d) = nearest(row, &centroids);
            dist[i] = d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        let mut sums = Array2::<f64>::zeros((k, p));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &row);
            counts[assignment[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = sums.row(j).mapv(|v| v / counts[j] as f64);
                centroids.row_mut(j).assign(&mean);
            } else {
                let far = (0..n).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                if centroids.row(j) != data.row(far) {
                    centroids.row_mut(j).assign(&data.row(far));
                    changed = true;
                }
                dist[far] = 0.0;
            }
        }

        let (u, c) = one_hot_factors(&assignment, &centroids);
        history.push(objective(data.view(), u.view(), c.view()));
        if !changed {
            break;
        }
    }

    let (mut u, mut c) = one_hot_factors(&assignment, &centroids);
    for j in fold_norms(&mut u, &mut c) {
        c[[j % p, j]] = 1.0;
    }
    Ok(DiscoveryResult {
        dictionary: ConceptDictionary::new(c, DiscoveryMethod::Kmeans, true)?,
        coefficients: u,
        iterations_run: history.len(),
        residual_history: history,
        clamped_entries: 0,
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(data: &Array2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let (n, p) = data.dim();
    let mut rng = rng::stream(seed, Stream::Discovery);
    let mut centroids = Array2::zeros((k, p));
    centroids.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centroids.row(0)))
        .collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&data.row(pick));
        for (i, r) in data.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, centroids.row(j)));
        }
    }
    centroids
}

/// `U` with one-hot rows and `C = centroidsᵀ`.
fn one_hot_factors(assignment: &[usize], centroids: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let k = centroids.nrows();
    let mut u = Array2::zeros((assignment.len(), k));
    for (i, &j) in assignment.iter().enumerate() {
        u[[i, j]] = 1.0;
    }
    (u, centroids.t().to_owned())
}
