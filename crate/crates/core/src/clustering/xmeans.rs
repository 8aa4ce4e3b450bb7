//! X-means: k-means with the number of clusters chosen by recursive
//! BIC-scored 2-way splits.
//!
//! Each cluster is modelled as a spherical Gaussian, all clusters sharing
//! one variance. A cluster is replaced by its two k-means children when
//! the children's BIC beats the parent's, evaluated on the parent's
//! points only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dendrogram::ClusterAssignment;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroid(points: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let dim = points[idx[0]].len();
    let mut c = vec![0.0; dim];
    for &i in idx {
        c.iter_mut().zip(&points[i]).for_each(|(a, b)| *a += b);
    }
    c.iter_mut().for_each(|a| *a /= idx.len() as f64);
    c
}

/// Two-way k-means with k-means++ seeding. Returns `None` when the points
/// cannot be split (fewer than two distinct points, or an empty side).
fn two_means(points: &[Vec<f64>], idx: &[usize], rng: &mut ChaCha8Rng) -> Option<[Vec<usize>; 2]> {
    let first = points[idx[rng.random_range(0..idx.len())]].clone();
    let weights: Vec<f64> = idx.iter().map(|&i| sq_dist(&points[i], &first)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut pick = idx.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        if target < *w {
            pick = k;
            break;
        }
        target -= w;
    }
    // guard against landing on a zero-weight point through rounding
    if weights[pick] == 0.0 {
        pick = weights.iter().rposition(|w| *w > 0.0)?;
    }
    let mut centers = [first, points[idx[pick]].clone()];

    let mut sides: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for _ in 0..KMEANS_MAX_ITER {
        sides = [Vec::new(), Vec::new()];
        for &i in idx {
            let side = usize::from(sq_dist(&points[i], &centers[1]) < sq_dist(&points[i], &centers[0]));
            sides[side].push(i);
        }
        if sides.iter().any(Vec::is_empty) {
            return None;
        }
        let next = [centroid(points, &sides[0]), centroid(points, &sides[1])];
        let shift = sq_dist(&next[0], &centers[0])
            .sqrt()
            .max(sq_dist(&next[1], &centers[1]).sqrt());
        centers = next;
        if shift <= KMEANS_TOL {
            break;
        }
    }
    Some(sides)
}

/// BIC of a partition of `points` (spherical Gaussians, shared variance).
/// `None` when the variance is not estimable (`R <= K`).
pub fn bic(points: &[Vec<f64>], clusters: &[&[usize]]) -> Option<f64> {
    let r: usize = clusters.iter().map(|c| c.len()).sum();
    let k = clusters.len();
    if r <= k || clusters.iter().any(|c| c.is_empty()) {
        return None;
    }
    let m = points[clusters[0][0]].len() as f64;
    let rf = r as f64;
    let mut sse = 0.0;
    for c in clusters {
        let mu = centroid(points, c);
        sse += c.iter().map(|&i| sq_dist(&points[i], &mu)).sum::<f64>();
    }
    let var = (sse / (m * (r - k) as f64)).max(f64::MIN_POSITIVE);
    let mix: f64 = clusters
        .iter()
        .map(|c| {
            let rc = c.len() as f64;
            rc * (rc / rf).ln()
        })
        .sum();
    let loglik = mix
        - rf * m / 2.0 * (2.0 * std::f64::consts::PI * var).ln()
        - sse / (2.0 * var);
    let params = (k - 1) as f64 + k as f64 * m + 1.0;
    Some(loglik - params / 2.0 * rf.ln())
}

/// Cluster `points` with at most `k_max` clusters.
pub fn xmeans(points: &[Vec<f32>], k_max: usize, seed: u64) -> ClusterAssignment {
    let n = points.len();
    if n == 0 {
        return ClusterAssignment {
            labels: Vec::new(),
            num_clusters: 0,
        };
    }
    let pts: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().map(|&c| c as f64).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = k_max.max(1);

    let mut clusters: Vec<Vec<usize>> = vec![(0..n).collect()];
    // clusters that failed to split are never retried
    let mut settled = vec![false];
    loop {
        let mut changed = false;
        let mut next = Vec::with_capacity(clusters.len() * 2);
        let mut next_settled = Vec::with_capacity(clusters.len() * 2);
        let mut count = clusters.len();
        for (c, done) in clusters.into_iter().zip(settled) {
            if done || count >= k_max || c.len() < 3 {
                next.push(c);
                next_settled.push(true);
                continue;
            }
            let split = two_means(&pts, &c, &mut rng).and_then(|[a, b]| {
                let parent = bic(&pts, &[&c])?;
                let children = bic(&pts, &[&a, &b])?;
                (children > parent).then_some([a, b])
            });
            match split {
                Some([a, b]) => {
                    next.push(a);
                    next.push(b);
                    next_settled.extend([false, false]);
                    count += 1;
                    changed = true;
                }
                None => {
                    next.push(c);
                    next_settled.push(true);
                }
            }
        }
        clusters = next;
        settled = next_settled;
        if !changed {
            break;
        }
    }

    let mut raw = vec![0usize; n];
    for (ci, members) in clusters.iter().enumerate() {
        for &i in members {
            raw[i] = ci;
        }
    }
    ClusterAssignment::from_labels(&raw)
}
