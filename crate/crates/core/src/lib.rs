//! Optimal-transport preprocessing for federated image learning.
//!
//! Edge agents with mismatched color distributions compute channel-wise
//! Wasserstein barycenters of their local images, a central server
//! aggregates those into a global RGB target, and every image is projected
//! onto that target before training. A small FedAvg harness measures the
//! effect of the alignment on convergence.
//!
//! Module map:
//! * [`measure`], [`cost`], [`sinkhorn`], [`exact1d`] — entropic OT kernels
//!   plus the exact 1D quantile oracle;
//! * [`barycenter`] — fixed-support regularized barycenters (iterative
//!   Bregman projections) and the quantile-averaging oracle;
//! * [`image`], [`projection`] — image/channel-measure conversion and
//!   per-image projection onto a target triplet;
//! * [`align`] — the simulated network orchestration and discrepancy
//!   reporting;
//! * [`learner`] — the FedAvg reference learner;
//! * [`dataset`], [`config`], [`bench`] — ingestion/egress, run
//!   configuration, and the complexity benchmark;
//! * [`synthetic`] — seeded generators for synthetic networks.

pub mod align;
pub mod barycenter;
pub mod bench;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod exact1d;
pub mod image;
pub mod learner;
pub mod measure;
pub mod projection;
pub mod seed;
pub mod sinkhorn;
pub mod synthetic;

pub use crate::align::{
    aggregate_global_triplet, align_network, compute_local_triplet, discrepancy_matrix,
    partition_dataset, AgentState, AlignConfig, AlignmentReport, DiscrepancyMatrix, ServerState,
};
pub use crate::barycenter::{
    bregman_barycenter, quantile_barycenter_1d, BarycenterConfig, BarycenterOutput,
};
pub use crate::bench::{bench_scaling, BenchReport, BenchRow};
pub use crate::config::RunConfig;
pub use crate::cost::CostMatrix;
pub use crate::dataset::{holdout_split, load_dataset, save_dataset, AgentDataset, DatasetFormat};
pub use crate::error::{Error, Result};
pub use crate::exact1d::exact_1d_wasserstein;
pub use crate::image::{
    image_to_channel_measures, pooled_channel_measures, ChannelTriplet, MeasureMode, MeasureSpec,
    RgbImage,
};
pub use crate::learner::{
    fedavg_aggregate, init_model, local_train, run_federated_training, ModelParams, ModelSpec,
    TrainConfig, TrainOutcome,
};
pub use crate::measure::DiscreteMeasure;
pub use crate::projection::{barycentric_map, project_image, IntensityLut, ProjectedImage};
pub use crate::sinkhorn::{
    sinkhorn, wasserstein_distance, SinkhornConfig, SinkhornResult, TransportPlan,
};
