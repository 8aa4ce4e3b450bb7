//! Frame induction: embed instances, then cluster them in one step
//! (group-average over all instances) or two steps (X-means per lemma into
//! pseudo-LUs, then group-average over pseudo-LU centroids).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::{l2_normalize, mixed_unit, CombineWeight};
use crate::error::{Error, Result};
use crate::learning::EncoderParams;

use super::dendrogram::{cut_dendrogram, group_average_cluster, ClusterAssignment, Dendrogram};
use super::xmeans::xmeans;

pub const DEFAULT_K_MAX_PER_LEMMA: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringMode {
    OneStep,
    TwoStep,
}

impl ClusteringMode {
    pub fn name(self) -> &'static str {
        match self {
            ClusteringMode::OneStep => "one-step",
            ClusteringMode::TwoStep => "two-step",
        }
    }
}

impl std::fmt::Display for ClusteringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by both clustering modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InduceConfig {
    pub mode: ClusteringMode,
    pub k_max_per_lemma: usize,
    pub seed: u64,
}

impl InduceConfig {
    pub fn new(mode: ClusteringMode, seed: u64) -> Self {
        InduceConfig {
            mode,
            k_max_per_lemma: DEFAULT_K_MAX_PER_LEMMA,
            seed,
        }
    }
}

/// `normalize(combine(encode(v_word), encode(v_mask), alpha))` for every
/// instance, in dataset order.
pub fn embed_dataset(ds: &Dataset, enc: &EncoderParams, alpha: CombineWeight) -> Result<Vec<Vec<f32>>> {
    ds.records()
        .par_iter()
        .map(|r| {
            let w = enc.embed(&r.v_word)?;
            let m = enc.embed(&r.v_mask)?;
            mixed_unit(&w, &m, alpha)
        })
        .collect()
}

/// FNV-1a, used to derive stable per-lemma seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn lemma_seed(seed: u64, lemma: &str) -> u64 {
    seed ^ fnv1a(lemma.as_bytes())
}

/// Per-lemma X-means. pLU ids are contiguous, numbered in sorted-lemma
/// order and then by X-means cluster order.
pub fn pseudo_lus(
    ds: &Dataset,
    embeddings: &[Vec<f32>],
    k_max_per_lemma: usize,
    seed: u64,
) -> ClusterAssignment {
    let mut by_lemma: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_lemma.entry(&r.lemma).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = by_lemma.into_iter().collect();
    let local: Vec<ClusterAssignment> = groups
        .par_iter()
        .map(|(lemma, idx)| {
            let pts: Vec<Vec<f32>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
            xmeans(&pts, k_max_per_lemma, lemma_seed(seed, lemma))
        })
        .collect();
    let mut labels = vec![0usize; ds.len()];
    let mut offset = 0;
    for ((_, idx), a) in groups.iter().zip(&local) {
        for (k, &i) in idx.iter().enumerate() {
            labels[i] = offset + a.labels[k];
        }
        offset += a.num_clusters;
    }
    ClusterAssignment {
        labels,
        num_clusters: offset,
    }
}

/// Clustering tree for a dataset, ready to be cut at any threshold.
#[derive(Debug, Clone)]
pub struct InducedTree {
    /// Step-one pseudo-LUs (two-step mode only).
    pub plus: Option<ClusterAssignment>,
    /// Over instances (one-step) or pLU representatives (two-step).
    pub dendrogram: Dendrogram,
}

impl InducedTree {
    pub fn build(ds: &Dataset, embeddings: &[Vec<f32>], cfg: &InduceConfig) -> Result<Self> {
        match cfg.mode {
            ClusteringMode::OneStep => Ok(InducedTree {
                plus: None,
                dendrogram: group_average_cluster(embeddings)?,
            }),
            ClusteringMode::TwoStep => {
                let plus = pseudo_lus(ds, embeddings, cfg.k_max_per_lemma, cfg.seed);
                let reps = plu_representatives(embeddings, &plus)?;
                Ok(InducedTree {
                    plus: Some(plus),
                    dendrogram: group_average_cluster(&reps)?,
                })
            }
        }
    }

    /// Instance-level frame clusters at `threshold`.
    pub fn cut(&self, threshold: f64) -> ClusterAssignment {
        let top = cut_dendrogram(&self.dendrogram, threshold);
        match &self.plus {
            None => top,
            Some(plus) => {
                let raw: Vec<usize> = plus.labels.iter().map(|&p| top.labels[p]).collect();
                ClusterAssignment::from_labels(&raw)
            }
        }
    }

    pub fn num_plus(&self) -> Option<usize> {
        self.plus.as_ref().map(|p| p.num_clusters)
    }
}

/// Re-normalized mean embedding of each pLU.
pub fn plu_representatives(embeddings: &[Vec<f32>], plus: &ClusterAssignment) -> Result<Vec<Vec<f32>>> {
    plus.members()
        .iter()
        .map(|members| {
            let dim = embeddings[members[0]].len();
            let mut mean = vec![0.0f64; dim];
            for &i in members {
                mean.iter_mut().zip(&embeddings[i]).for_each(|(a, &b)| *a += b as f64);
            }
            let v: Vec<f32> = mean.iter().map(|s| (s / members.len() as f64) as f32).collect();
            l2_normalize(&v)
        })
        .collect()
}

pub fn one_step_induce(
    ds: &Dataset,
    enc: &EncoderParams,
    alpha: CombineWeight,
    threshold: f64,
) -> Result<ClusterAssignment> {
    let emb = embed_dataset(ds, enc, alpha)?;
    let cfg = InduceConfig::new(ClusteringMode::OneStep, 0);
    Ok(InducedTree::build(ds, &emb, &cfg)?.cut(threshold))
}

/// Returns `(pLUs, final clusters)`.
pub fn two_step_induce(
    ds: &Dataset,
    enc: &EncoderParams,
    alpha: CombineWeight,
    threshold: f64,
    k_max_per_lemma: usize,
    seed: u64,
) -> Result<(ClusterAssignment, ClusterAssignment)> {
    let emb = embed_dataset(ds, enc, alpha)?;
    let cfg = InduceConfig {
        mode: ClusteringMode::TwoStep,
        k_max_per_lemma,
        seed,
    };
    let tree = InducedTree::build(ds, &emb, &cfg)?;
    let fin = tree.cut(threshold);
    Ok((tree.plus.expect("two-step tree has pLUs"), fin))
}

/// On-disk clustering result: instance id to cluster id plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub assignments: BTreeMap<String, usize>,
    pub num_clusters: usize,
    pub num_plus: Option<usize>,
    pub mode: ClusteringMode,
    pub threshold: f64,
    pub alpha: f64,
    pub checkpoint_hash: Option<String>,
}

impl AssignmentFile {
    pub fn new(
        ds: &Dataset,
        assignment: &ClusterAssignment,
        num_plus: Option<usize>,
        mode: ClusteringMode,
        threshold: f64,
        alpha: CombineWeight,
        checkpoint_hash: Option<String>,
    ) -> Self {
        let assignments = ds
            .records()
            .iter()
            .zip(&assignment.labels)
            .map(|(r, &c)| (r.id.clone(), c))
            .collect();
        AssignmentFile {
            assignments,
            num_clusters: assignment.num_clusters,
            num_plus,
            mode,
            threshold,
            alpha: alpha.get(),
            checkpoint_hash,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("assignment serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Parse and check the contiguity of cluster ids.
pub fn parse_assignment(text: &str) -> Result<AssignmentFile> {
    let f: AssignmentFile = serde_json::from_str(text).map_err(|e| Error::json("assignment file", e))?;
    let used: BTreeSet<usize> = f.assignments.values().copied().collect();
    if used.len() != f.num_clusters || used.iter().next_back().is_some_and(|&m| m + 1 != f.num_clusters) {
        return Err(Error::Config(format!(
            "cluster ids are not contiguous 0..{}",
            f.num_clusters
        )));
    }
    Ok(f)
}

pub fn load_assignment(path: impl AsRef<Path>) -> Result<AssignmentFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_assignment(&text)
}
