//! Group-average (UPGMA) agglomerative clustering over Euclidean distance.
//!
//! Cluster ids follow the usual convention: leaves are `0..n`, and the
//! `k`-th merge creates cluster `n + k`. At each step the pair with the
//! smallest linkage is merged; ties go to the lexicographically smallest
//! `(smaller id, larger id)` pair.
//!
//! The implementation keeps a full distance matrix updated with the
//! Lance-Williams rule for average linkage and a per-row nearest-neighbour
//! cache, so most merges cost `O(n)`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::sq_euclidean_unchecked;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller cluster id.
    pub a: usize,
    /// Larger cluster id.
    pub b: usize,
    pub distance: f64,
    /// Size of the merged cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

/// Flat clustering: `labels[i]` is the cluster of point `i`; ids are
/// contiguous and numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    /// Renumber arbitrary labels into contiguous ids by first appearance.
    pub fn from_labels<T: Ord + Clone>(raw: &[T]) -> Self {
        let mut map = std::collections::BTreeMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        ClusterAssignment {
            labels,
            num_clusters: map.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices of every cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Ordering key of a candidate merge.
#[derive(Debug, Clone, Copy)]
struct Key {
    dist: f64,
    lo: usize,
    hi: usize,
}

impl Key {
    fn new(dist: f64, x: usize, y: usize) -> Self {
        Key {
            dist,
            lo: x.min(y),
            hi: x.max(y),
        }
    }

    fn cmp(&self, other: &Key) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

struct State {
    n: usize,
    dist: Vec<f64>,
    active: Vec<bool>,
    id: Vec<usize>,
    size: Vec<usize>,
    /// (partner slot, key) of each active slot's nearest neighbour.
    nn: Vec<Option<(usize, Key)>>,
}

impl State {
    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.dist[i * self.n + j] = v;
        self.dist[j * self.n + i] = v;
    }

    fn recompute_nn(&mut self, i: usize) {
        let mut best: Option<(usize, Key)> = None;
        for j in 0..self.n {
            if j == i || !self.active[j] {
                continue;
            }
            let key = Key::new(self.d(i, j), self.id[i], self.id[j]);
            if best.is_none_or(|(_, b)| key.cmp(&b) == Ordering::Less) {
                best = Some((j, key));
            }
        }
        self.nn[i] = best;
    }
}

fn check_points(points: &[Vec<f32>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: p.len(),
            });
        }
    }
    Ok(dim)
}

/// Full merge tree of `points` under group-average linkage.
///
/// Returns a numerical error if merge distances ever decrease, which
/// group-average linkage rules out for finite inputs.
pub fn group_average_cluster(points: &[Vec<f32>]) -> Result<Dendrogram> {
    check_points(points)?;
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    dist.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = sq_euclidean_unchecked(&points[i], &points[j]).sqrt();
            }
        }
    });
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite pairwise distance".into()));
    }
    let mut st = State {
        n,
        dist,
        active: vec![true; n],
        id: (0..n).collect(),
        size: vec![1; n],
        nn: vec![None; n],
    };
    for i in 0..n {
        st.recompute_nn(i);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let (i, (j, key)) = (0..n)
            .filter(|&i| st.active[i])
            .filter_map(|i| st.nn[i].map(|nn| (i, nn)))
            .min_by(|a, b| a.1 .1.cmp(&b.1 .1))
            .expect("at least two active clusters");
        let (keep, drop) = (i.min(j), i.max(j));
        let (sk, sd) = (st.size[keep] as f64, st.size[drop] as f64);

        if let Some(prev) = merges.last().map(|m: &Merge| m.distance) {
            if key.dist < prev - 1e-9 * prev.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "merge distance decreased from {prev} to {}",
                    key.dist
                )));
            }
        }
        merges.push(Merge {
            a: key.lo,
            b: key.hi,
            distance: key.dist,
            size: st.size[keep] + st.size[drop],
        });

        st.active[drop] = false;
        st.nn[drop] = None;
        st.id[keep] = n + step;
        st.size[keep] += st.size[drop];
        for k in 0..n {
            if k != keep && st.active[k] {
                let v = (sk * st.d(k, keep) + sd * st.d(k, drop)) / (sk + sd);
                st.set(k, keep, v);
            }
        }
        for k in 0..n {
            if k == keep || !st.active[k] {
                continue;
            }
            match st.nn[k] {
                Some((p, _)) if p == keep || p == drop => st.recompute_nn(k),
                Some((_, best)) => {
                    let cand = Key::new(st.d(k, keep), st.id[k], st.id[keep]);
                    if cand.cmp(&best) == Ordering::Less {
                        st.nn[k] = Some((keep, cand));
                    }
                }
                None => st.recompute_nn(k),
            }
        }
        st.recompute_nn(keep);
    }
    Ok(Dendrogram {
        merges,
        leaf_count: n,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Apply every merge with distance strictly below `threshold`.
pub fn cut_dendrogram(dg: &Dendrogram, threshold: f64) -> ClusterAssignment {
    let n = dg.leaf_count;
    let total = n + dg.merges.len();
    let mut uf = UnionFind::new(total);
    for (k, m) in dg.merges.iter().enumerate() {
        if m.distance < threshold {
            let new = n + k;
            let (ra, rb) = (uf.find(m.a), uf.find(m.b));
            uf.parent[ra] = new;
            uf.parent[rb] = new;
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    ClusterAssignment::from_labels(&roots)
}

impl Dendrogram {
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.distance)
    }

    pub fn max_distance(&self) -> Option<f64> {
        self.distances().reduce(f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_points() -> Vec<Vec<f32>> {
        vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 0.0],
            vec![10.1, 0.0],
        ]
    }

    #[test]
    fn single_point_has_no_merges() {
        let dg = group_average_cluster(&[vec![1.0, 2.0]]).unwrap();
        assert!(dg.merges.is_empty());
        assert_eq!(cut_dendrogram(&dg, 5.0).num_clusters, 1);
        let empty = group_average_cluster(&[]).unwrap();
        assert_eq!(empty.leaf_count, 0);
    }

    #[test]
    fn two_pairs_geometry() {
        let dg = group_average_cluster(&four_points()).unwrap();
        assert_eq!(dg.merges.len(), 3);
        assert!((dg.merges[0].distance - 0.1).abs() < 1e-6);
        assert!((dg.merges[1].distance - 0.1).abs() < 1e-6);
        assert_eq!((dg.merges[0].a, dg.merges[0].b), (0, 1));
        assert_eq!((dg.merges[1].a, dg.merges[1].b), (2, 3));
        // mean of 10, 10.1, 9.9, 10
        assert!((dg.merges[2].distance - 10.0).abs() < 1e-5);
        assert_eq!((dg.merges[2].a, dg.merges[2].b, dg.merges[2].size), (4, 5, 4));
        let cut = cut_dendrogram(&dg, 1.0);
        assert_eq!(cut.num_clusters, 2);
        assert_eq!(cut.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn threshold_extremes() {
        let dg = group_average_cluster(&four_points()).unwrap();
        assert_eq!(cut_dendrogram(&dg, 0.0).num_clusters, 4);
        assert_eq!(cut_dendrogram(&dg, dg.max_distance().unwrap() + 1e-9).num_clusters, 1);
    }

    #[test]
    fn ties_resolved_by_smallest_pair() {
        // equilateral-ish: all three pairwise distances equal
        let pts = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let dg = group_average_cluster(&pts).unwrap();
        assert_eq!((dg.merges[0].a, dg.merges[0].b), (0, 1));
        assert_eq!((dg.merges[1].a, dg.merges[1].b), (2, 3));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(group_average_cluster(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn relabeling_is_by_first_appearance() {
        let a = ClusterAssignment::from_labels(&[7, 3, 7, 9]);
        assert_eq!(a.labels, vec![0, 1, 0, 2]);
        assert_eq!(a.num_clusters, 3);
        assert_eq!(a.members(), vec![vec![0, 2], vec![1], vec![3]]);
    }
}
