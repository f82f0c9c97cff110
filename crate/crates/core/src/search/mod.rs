//! Depth, coupler and crossing search over the gated SuperMesh.

mod gate;
mod gradcheck;
mod optim;
mod runner;
mod sampler;
mod schedule;
mod supermesh;
mod topology;

pub use gate::{
    expected_keep_prob, gumbel_noise, gumbel_sample, gumbel_softmax, gumbel_softmax_vjp, keep_prob_vjp, GateSample,
    SuperBlockGate, KEEP,
};
pub use gradcheck::{GradCheck, GroupCheck};
pub use optim::Adam;
pub use runner::{
    run_search, search_step, EpochRecord, NoObserver, SearchConfig, SearchObserver, SearchOptimizer, SearchOutcome,
};
pub use sampler::sample_submesh;
pub use schedule::{Phase, SearchSchedule, Stage};
pub use supermesh::{
    surrogate_transmission, FootprintTerms, GateDraw, LayerWeights, LossTerms, MeshGrad, Objective, SteMode,
    SuperBlock, SuperMesh, TileWeights,
};
pub use topology::{Topology, TopologyBlock};
