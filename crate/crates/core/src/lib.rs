//! Synergy and redundancy analysis of layered neural systems.
//!
//! Activation time series of information-processing units (attention heads,
//! experts) are decomposed pairwise with integrated information
//! decomposition. Persistent synergy and persistent redundancy between every
//! pair of units become two weighted networks, from which the crate derives
//! per-unit synergy–redundancy ranks, per-layer profiles, topology metrics,
//! and ablation orderings. Behaviour divergence between baseline and ablated
//! next-token distributions closes the loop.

pub mod divergence;
pub mod error;
pub mod estimators;
pub mod netmetrics;
pub mod pairwise;
pub mod phid;
pub mod ranking;
pub mod recording;
pub mod rng;
pub mod synthgen;

pub use divergence::{
    ablation_curve, behaviour_divergence, kl_divergence, AblationCurve, Condition, LogitTrace,
};
pub use error::{Error, Result};
pub use estimators::{discrete_mi, gaussian_mi, pid_atoms, DiscreteJoint, GaussianCov, PidAtoms};
pub use netmetrics::{build_graph, global_efficiency, modularity, GraphMetrics, WeightedGraph};
pub use pairwise::{pair_matrices, PairMatrix, PairOptions, PromptAggregation};
pub use phid::{phid_discrete, phid_from_covariance, phid_gaussian, LatticeNode, PhidAtoms};
pub use ranking::{
    ablation_order, layer_profile, select_subset, synergy_redundancy_rank, HeadSubset, OrderMode,
    RankProfile, SubsetMode,
};
pub use recording::{load_recording, save_recording, PromptMeta, Recording, UnitKind, UnitMeta};
pub use synthgen::{generate, SynthKind, SynthSpec};
