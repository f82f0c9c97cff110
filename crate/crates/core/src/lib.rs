//! Differentiable search of photonic tensor-core topologies under foundry
//! footprint constraints.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod pdk;
pub mod perm;
pub mod search;
pub mod train;

pub use error::{PtcError, Result};
pub use linalg::{CMat, RMat};
pub use pdk::{BlockBounds, DeviceCounts, FootprintConstraint, PdkSpec, PenaltyConfig};
pub use perm::{Permutation, SplConfig};
pub use search::{SearchConfig, SearchSchedule, SuperMesh, Topology};
pub use train::{NoiseModel, Task};
