//! Gates, noise channels, SPAM, survival probabilities and dataset simulation.
//!
//! Density operators are column-vectorized, so a channel `X -> A X B` has
//! superoperator `B^T ⊗ A` and a unitary channel is `conj(U) ⊗ U`.

mod channel;
mod dataset;
mod gateset;
mod noise;
pub mod presets;
mod simulate;
mod spam;
mod unitary;

pub use channel::{random_density, Channel, ChannelKind};
pub use dataset::{group_by_cell, read_jsonl, write_jsonl, DatasetRecord, Experiment, Observation};
pub use gateset::{GateSet, GROUP_TOL};
pub use noise::{NoiseKind, NoiseModel, NoiseOrder, PositionNoiseFn};
pub use simulate::{
    enumerate_survival_distribution, sample_survivals, simulate_dataset, survival_probability, SimulationOptions,
    Simulator, SpamAssignment, SurvivalDistribution, CLAMP_TOL, DEFAULT_ENUMERATION_CAP,
};
pub use spam::{projector, SpamConfig};
pub use unitary::Unitary;
