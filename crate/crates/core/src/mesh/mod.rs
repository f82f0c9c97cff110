//! Structured complex-linear forward model of the photonic mesh: phase,
//! coupler and crossing columns, gated block chains, normalized unitaries and
//! tiled `U diag(sigma) V` weights, each with an explicit vector-Jacobian
//! product.
//!
//! Cotangents of complex quantities follow the convention
//! `G = dL/dRe(z) + j dL/dIm(z)`, so for `Y = A X` the input cotangent is
//! `A^H G_Y` and a real parameter `p` of `A` gets `Re <G_Y, dA/dp X>`.

mod layers;
mod partition;
mod unitary;

pub use layers::{
    apply_couplers_linearized, apply_couplers_physical, couplers_linearized_vjp, cr_vjp, quantize_coupler,
    ste_backward, CouplerColumn, PermutationLayer, PhaseColumn, RelaxedPerm, STE_SLOPE,
};
pub use partition::{grid_dims, partition_matmul, DiagonalScale, Tile, WeightPartition};
pub use unitary::{
    build_unitary, build_unitary_taped, normalize_unitary, normalize_vjp, unitary_vjp, BlockGrad, BlockView, NormMode,
    UnitaryTape,
};
