//! Desk-scale simulation and analysis of multiple-quantum-coherence (MQC)
//! experiments on GHZ-class entangled states.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`statevector`]: dense pure-state simulation, gates, circuits, sampling.
//! - [`circuits`]: device topology, CX fan-out scheduling, and the circuit
//!   families (GHZ prep, MQC sweep with optional refocusing, parity
//!   oscillations, star/complete graph variants).
//! - [`noise`]: Kraus channels derived from device parameters, stochastic
//!   trajectory execution, quasi-static drift, readout confusion, and an
//!   exact density-matrix oracle for small registers.
//! - [`analysis`]: overlap signal, coherence spectra via discrete Fourier
//!   transform, fidelity bounds, parity coherence, error bars.
//! - [`mitigation`]: readout calibration matrices (full, truncated,
//!   tensored) and the constrained least-squares counts correction.

pub mod analysis;
pub mod circuits;
pub mod mitigation;
pub mod noise;
pub mod presets;
pub mod seeding;
pub mod statevector;

pub use analysis::{
    aggregate_repetitions, direct_fidelity, fidelity_bounds, mqc_spectrum, parity_coherence,
    s_phi, AnalysisError, FidelityReport, MqcSpectrum, SweepResult,
};
pub use circuits::{
    auto_plan, build_ghz_prep, build_mqc_circuit, build_parity_circuit, phi_grid, stamp_durations, DeviceModel,
    EdgeParams, EntanglingPlan, MqcVariant, PhiGrid, PlanError, QubitParams,
};
pub use noise::{
    density_oracle, depolarizing_fill, mqc_decompose, run_trajectories,
    thermal_relaxation_channel, DensityMatrix, KrausChannel, NoiseError, NoiseModel,
    NoiseToggles, ReadoutModel,
};
pub use statevector::{Circuit, CountsTable, Gate, GateKind, Moment, StateError, StateVector};
