//! Agglomerative and X-means clustering, and the two frame-induction
//! pipelines built from them.

pub mod dendrogram;
pub mod induce;
pub mod xmeans;

pub use dendrogram::{cut_dendrogram, group_average_cluster, ClusterAssignment, Dendrogram, Merge};
pub use induce::{
    embed_dataset, load_assignment, one_step_induce, parse_assignment, pseudo_lus, two_step_induce,
    AssignmentFile, ClusteringMode, InduceConfig, InducedTree, DEFAULT_K_MAX_PER_LEMMA,
};
pub use xmeans::xmeans;
