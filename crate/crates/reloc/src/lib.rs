//! Coarse-to-fine relocalization of a point cloud against a map of planar
//! patches.
//!
//! The coarse stage searches planar pose `(theta, x, y)` at a known height by
//! branch and bound over a consensus objective (points within a threshold of
//! any patch). The fine stage refines the full 6-DOF pose by damped
//! least squares on robust point-to-plane residuals.

pub mod bnb;
pub mod consensus;
pub mod map;
pub mod pose;
pub mod refine;
pub mod synthetic;

pub use bnb::{bnb_search, unobservable_directions, BnbConfig, BnbResult, PrunedBox};
pub use consensus::{box_bounds, consensus, inlier_points, SearchBox, DEFAULT_EPS};
pub use map::{read_cloud, read_map, Patch, PlanarPatchMap};
pub use pose::PoseHypothesis;
pub use refine::{leveling_rotation, predicted_covariance, refine_pose, PosePrior, RefineConfig, RefineResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelocError {
    #[error("map has no patches")]
    EmptyMap,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pose is not observable; unconstrained directions: {}", .0.join(", "))]
    Degenerate(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
