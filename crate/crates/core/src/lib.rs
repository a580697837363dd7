//! Channel pruning by channel similarity.
//!
//! Channels of a Conv-BN-activation layer are compared with a distance derived
//! from their BN parameters alone, grouped by agglomerative clustering under one
//! global threshold, and reduced to one representative per group. Removed
//! channels' next-layer kernels are folded into their representatives.
//!
//! Module map:
//! * [`tensor`], [`model`]: forward engine (conv, mini-batch BN, activations).
//! * [`distance`]: empirical and closed-form channel distances, distance matrices.
//! * [`cluster`]: threshold-based hierarchical clustering and its brute-force oracle.
//! * [`plan`]: pruning plans, plan application, the shift-bound coefficient.
//! * [`flops`]: inference FLOPs accounting.
//! * [`verify`]: numerical checks of the distance limit and the shift bound.
//! * [`manifest`]: JSON + binary blob model format.
//! * [`fixtures`]: seeded model generators.

pub mod cluster;
pub mod distance;
pub mod error;
pub mod fixtures;
pub mod flops;
pub mod manifest;
pub mod model;
pub mod plan;
pub mod tensor;
pub mod verify;

pub use cluster::{brute_force_cluster, hierarchical_cluster, ClusterAssignment, Linkage};
pub use distance::{
    build_distance_matrix, empirical_channel_distance, empirical_distance_matrix,
    probabilistic_channel_distance, ChannelStats, DistanceMatrix,
};
pub use error::{Error, Result};
pub use flops::{flops_compare, flops_count, FlopsReport, CONVENTIONS};
pub use manifest::{load_model, save_model, ModelManifest};
pub use model::{block_forward, BlockOutput, DenseHead, InputShape, LayerBlock, ModelGraph};
pub use plan::{
    apply_plan, build_pruning_plan, compute_lambda, select_representatives, LayerPlan, PruneConfig,
    PruningPlan,
};
pub use tensor::{
    activation, bn_forward, conv2d, ActivationKind, BnParams, ConvKernel, Pool, PoolKind, Tensor4,
};
pub use verify::{
    distance_matrix_report, measure_shift, verify_activation_inequality, verify_prop1,
    verify_prop2, verify_prop2_random, BoundReport, ConvergenceReport, Prop2Options,
};
