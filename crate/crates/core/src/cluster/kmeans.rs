//! Lloyd's algorithm on scalars with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Independent k-means++ restarts; the lowest-SSE fit is kept.
    pub n_init: usize,
    /// Also start one run from the optimal contiguous segmentation, which
    /// Lloyd leaves unchanged. Without it, restarts can all land in the same
    /// local optimum when an outlier dominates the k-means++ draw.
    pub exact_seed: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            seed: 0,
            max_iters: 100,
            n_init: 10,
            exact_seed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Cluster of each input value; cluster 0 has the smallest centroid.
    pub labels: Vec<usize>,
    /// Strictly ascending.
    pub centroids: Vec<f64>,
    pub sse: f64,
    /// SSE after each update step of the kept run.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub fn sse(values: &[f64], labels: &[usize], centroids: &[f64]) -> f64 {
    values
        .iter()
        .zip(labels)
        .map(|(v, &l)| (v - centroids[l]).powi(2))
        .sum()
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn nearest(v: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in centroids.iter().enumerate().skip(1) {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = i;
        }
    }
    best
}

fn plus_plus_init(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&v| centers.iter().map(|c| (v - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(values[pick]);
    }
    centers
}

/// Centroids of the minimum-SSE split of the sorted values into k contiguous
/// runs, by dynamic programming over prefix sums.
pub fn optimal_centroids_1d(values: &[f64], k: usize) -> Vec<f64> {
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    // SSE of x[a..b].
    let cost = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };
    let mut d = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    d[0][0] = 0.0;
    for m in 1..=k {
        for i in m..=n {
            for j in (m - 1)..i {
                let c = d[m - 1][j] + cost(j, i);
                if c < d[m][i] {
                    d[m][i] = c;
                    cut[m][i] = j;
                }
            }
        }
    }
    let mut centroids = vec![0.0; k];
    let mut end = n;
    for m in (1..=k).rev() {
        let start = cut[m][end];
        centroids[m - 1] = (s1[end] - s1[start]) / (end - start) as f64;
        end = start;
    }
    centroids
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>, max_iters: usize) -> KMeansFit {
    let k = centroids.len();
    let mut labels: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&v, &l) in values.iter().zip(&labels) {
            sums[l] += v;
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        // An emptied cluster takes over the worst-fit point; this only lowers SSE.
        for c in 0..k {
            if counts[c] == 0 {
                let worst = (0..values.len())
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = (values[a] - centroids[labels[a]]).abs();
                        let db = (values[b] - centroids[labels[b]]).abs();
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                if let Some(i) = worst {
                    let old = labels[i];
                    sums[old] -= values[i];
                    counts[old] -= 1;
                    centroids[old] = sums[old] / counts[old] as f64;
                    labels[i] = c;
                    sums[c] = values[i];
                    counts[c] = 1;
                    centroids[c] = values[i];
                }
            }
        }
        trace.push(sse(values, &labels, &centroids));
        iterations += 1;
        if iterations >= max_iters {
            break;
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    KMeansFit {
        sse: *trace.last().unwrap_or(&0.0),
        labels,
        centroids,
        trace,
        iterations,
    }
}

fn relabel(mut fit: KMeansFit) -> KMeansFit {
    let mut order: Vec<usize> = (0..fit.centroids.len()).collect();
    order.sort_by(|&a, &b| fit.centroids[a].total_cmp(&fit.centroids[b]));
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    fit.centroids = order.iter().map(|&o| fit.centroids[o]).collect();
    for l in &mut fit.labels {
        *l = rank[*l];
    }
    fit
}

pub fn kmeans_1d(values: &[f64], config: &KMeansConfig) -> Result<KMeansFit, ClusterError> {
    let k = config.k;
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFiniteScore);
    }
    if values.len() < k {
        return Err(ClusterError::TooFewPoints { points: values.len(), k });
    }
    let distinct = distinct_count(values);
    if distinct < k {
        return Err(ClusterError::TooFewDistinct { distinct, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansFit> = config
        .exact_seed
        .then(|| lloyd(values, optimal_centroids_1d(values, k), config.max_iters.max(1)));
    for _ in 0..config.n_init.max(1) {
        let init = plus_plus_init(values, k, &mut rng);
        let fit = lloyd(values, init, config.max_iters.max(1));
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(relabel(best.expect("at least one restart")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let fit = kmeans_1d(&[0.2, 0.4, 0.9], &KMeansConfig { k: 1, ..Default::default() }).unwrap();
        assert!((fit.centroids[0] - 0.5).abs() < 1e-12);
        assert_eq!(fit.labels, [0, 0, 0]);
    }

    #[test]
    fn separated_pairs() {
        let fit = kmeans_1d(&[0.9, 0.1, 0.88, 0.12], &KMeansConfig { k: 2, ..Default::default() }).unwrap();
        assert_eq!(fit.labels, [1, 0, 1, 0]);
        assert!(fit.centroids[0] < fit.centroids[1]);
    }

    #[test]
    fn too_few() {
        let cfg = KMeansConfig { k: 3, ..Default::default() };
        assert_eq!(kmeans_1d(&[0.1, 0.2], &cfg), Err(ClusterError::TooFewPoints { points: 2, k: 3 }));
        assert_eq!(
            kmeans_1d(&[0.1, 0.1, 0.2], &cfg),
            Err(ClusterError::TooFewDistinct { distinct: 2, k: 3 })
        );
    }

    #[test]
    fn known_local_optimum_escaped_with_restarts() {
        // {0}|{2,3,5} is a Lloyd fixed point with SSE 14/3; the optimum {0,2}|{3,5} has SSE 4.
        let stuck = lloyd(&[0.0, 2.0, 3.0, 5.0], vec![0.0, 3.0], 100);
        assert!((stuck.sse - 14.0 / 3.0).abs() < 1e-12);
        let fit = kmeans_1d(&[0.0, 2.0, 3.0, 5.0], &KMeansConfig { k: 2, ..Default::default() }).unwrap();
        assert!((fit.sse - 4.0).abs() < 1e-12);
        assert_eq!(optimal_centroids_1d(&[5.0, 0.0, 3.0, 2.0], 2), [1.0, 4.0]);
    }
}
