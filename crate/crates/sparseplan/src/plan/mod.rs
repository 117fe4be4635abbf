//! Sparse-imagination MPC-CEM planning: token dropout strategies,
//! clustering baselines, and the replanning loop.

mod cem;
mod cluster;
mod dropmask;
mod hungarian;
mod mpc;
mod score;

pub use cem::{
    atc_objective, cem_optimize, cem_plan, subset_objective, PlanConfig, STD_FLOOR,
};
pub use cluster::{agglomerative_cluster, kmeans_anchored, ClusterSet};
pub use dropmask::{keep_count, sample_mask_lhs, sample_mask_random, DropMask};
pub use hungarian::{assignment_cost, hungarian_match};
pub use mpc::{mpc_run, MpcOutcome, Strategy};
pub use score::{attention_received_scores, mask_from_scores, score_attention_wm};
