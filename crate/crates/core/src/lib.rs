//! Identification of linear dynamical systems from a mix of true-system and
//! auxiliary-system rollouts by weighted, optionally ridge-regularized, least
//! squares, with computable finite-sample error bounds and a Monte-Carlo
//! experiment harness.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod linalg;
pub mod scalar;
pub mod sim;
pub mod weight_select;

pub use bounds::{
    bound_data_dependent, bound_data_independent, check_aux_benefit, corollary1_gamma, g_total, gelfand_envelope, phi,
    prop1_threshold, prop4_trace_bound, sample_size_hypothesis, trace_g, trace_g_sequence, BoundReport,
    DependentInputs, Envelope, IndependentInputs, SystemData,
};
pub use error::{Error, Result};
pub use estimator::{
    assemble_batch, error_decomposition, estimation_error, normal_equation_residual, wls_estimate, wls_from_pieces,
    BatchData, ErrorTerms, GramPieces, WlsConfig, WlsEstimate,
};
pub use experiments::{
    run_mc_validity, run_qsweep_experiment, run_scenario, ExperimentResult, QPolicy, QSweepConfig, QSweepSummary,
    ScenarioConfig, SchedulePoint, SystemPair, ValidityConfig, ValidityKind, ValidityReport,
};
pub use scalar::Real;
pub use sim::{simulate_rollouts, simulate_rollouts_with, NoiseConfig, Rollout, RolloutSet, SimOptions, SystemModel};
pub use weight_select::{sweep, sweep_with_truth, Priors, SweepGrid, SweepResult};

pub type Matrix64 = linalg::Matrix<f64>;
pub type SystemModel64 = SystemModel<f64>;
pub type NoiseConfig64 = NoiseConfig<f64>;
pub type RolloutSet64 = RolloutSet<f64>;
pub type BatchData64 = BatchData<f64>;
pub type WlsEstimate64 = WlsEstimate<f64>;
pub type BoundReport64 = BoundReport<f64>;
pub type SweepResult64 = SweepResult<f64>;
