//! Turning a raw scan into training signals: normals, the near-surface
//! vector field, free-space samples and coordinate normalization.

mod empty;
mod normalize;
mod normals;
mod vector_field;

pub use empty::{sample_empty_space, EmptySampleSet, EmptySpaceConfig, MIN_RAY_LENGTH};
pub use normalize::{normalize_to_unit_cube, NormalizationTransform, NormalizedInputs};
pub use normals::{estimate_normals_pca, plane_normal, NormalEstimate, DEFAULT_NORMAL_K};
pub use vector_field::{
    Bandwidth, ClusterMembership, VectorFieldConfig, VectorFieldEstimator, DEFAULT_CLUSTER_ANGLE_DEG, DEFAULT_K,
    DEFAULT_NEAR_RADIUS,
};
