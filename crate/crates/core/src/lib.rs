//! Stochastic trajectories of two remote qubits whose fluorescence is mixed on a
//! beamsplitter and monitored by photodetection, homodyne, heterodyne or mixed
//! detection, with finite efficiencies.

pub mod analytics;
pub mod entanglement;
pub mod error;
pub mod kraus;
pub mod state;
pub mod trajectory;

pub use error::{EntanglementError, KrausError, NumericalError, StateError};
pub use kraus::{KrausSet, MeasurementSettings};
pub use state::{BellAmplitudes, BlochVector15, CMat4, PureState, TwoQubitState, C64};
pub use trajectory::{
    EnsembleOptions, EnsembleSummary, InitialState, Scheme, StepOutcome, TrajectoryConfig,
    TrajectoryRecord,
};
