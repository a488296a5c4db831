//! Simulation of stimulated Raman adiabatic passage in a dissipative
//! Rydberg superatom: master equation, quantum trajectories and analysis.

pub mod algebra;
pub mod analysis;
pub mod error;
pub mod master;
pub mod model;
pub mod observables;
mod ode;
pub mod trajectories;

pub use algebra::{
    expectation, kron_embed, op_apply, ComplexMatrix, DensityMatrix, Level, OperatorMatrix, Side, StateRef, StateVector,
    C64, LEVELS, MAX_ATOMS,
};
pub use error::{Error, Result};
pub use master::{integrate, lindblad_rhs, IntegratorSettings, MasterEquationRun, Method};
pub use model::{build_hamiltonian, build_jump_channels, InteractionSpec, Model, ModelConfig, PulseParams, RateSet};
pub use observables::ObservableSeries;
pub use trajectories::{
    average_records, average_trajectories, evolve_trajectory, run_trajectories, JumpEvent, TrajectoryAverage, TrajectoryRecord,
    TrajectorySettings,
};
pub use ode::StepStats;
