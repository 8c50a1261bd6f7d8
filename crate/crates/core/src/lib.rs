//! Spectral clustering with Nyström-approximated kernels.
//!
//! The crate provides the exact normalized spectral clustering pipeline, a
//! Nyström pipeline that works from a rank-l factor of the landmark matrix
//! and never materializes an n×n matrix, two earlier Nyström baselines, and
//! numerical checks of the rank-truncation identity and the degree
//! perturbation bound that justify the approach.

pub mod analysis;
pub mod bench;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod kernel;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod rng;

pub use embedding::{
    baseline_fowlkes_sc, baseline_li_sc, determine_rank, proposed_nystrom_sc, prototypical_sc,
    DegreeRepair, Method, NystromOptions, PipelineOutput, RankPolicy, SpectralEmbedding,
};
pub use error::{Error, Result};
pub use kernel::{
    build_dense_kernel, build_nystrom_factors, sample_landmarks_uniform, DataMatrix, DenseKernel,
    KernelConfig, NystromFactors,
};
pub use kmeans::{kmeans, ClusteringResult, KMeansConfig};
pub use metrics::{eigenvector_alignment, f_score, largest_principal_angle, nmi};
