//! Bilinear Koopman generator surrogates for control-affine systems.
//!
//! The crate learns finite-dimensional surrogates of the Koopman generator
//! from sampled trajectory-free data, propagates observables through the
//! learned bilinear model, and certifies state-constraint satisfaction by
//! checking tightened constraints along the surrogate prediction.
//!
//! Pipeline, end to end:
//!
//! 1. describe the control system ([`dynamics`]) and pick a dictionary of
//!    observables ([`dictionary`]);
//! 2. sample states and fit generator matrices, one per control vertex
//!    ([`edmd`]);
//! 3. assemble the bilinear surrogate and propagate lifted states
//!    ([`surrogate`]);
//! 4. certify tightened constraints along the prediction and validate the
//!    certificate against the true flow ([`certify`]);
//! 5. reproduce the standard sweeps and benchmarks ([`experiments`]).

pub mod certify;
pub mod constraints;
pub mod dictionary;
pub mod domain;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod quad;
pub mod seeding;
pub mod stats;
pub mod surrogate;

pub use certify::{
    certify, represent_constraints, soundness_trial, validate_certificate, Certificate,
    CertificationConfig, ConstraintVerdict, GroundTruthCheck, RepresentedConstraint,
    SoundnessReport, SoundnessScenario, Verdict,
};
pub use constraints::{Constraint, ConstraintSet};
pub use dictionary::{
    composite_dictionary, fem_dictionary, monomial_dictionary, Dictionary, DictionaryKind,
    FemMesh, Observable, ObservableCoeffs,
};
pub use domain::BoxDomain;
pub use dynamics::{
    check_domain, integrate, ControlAffineSystem, ControlSignal, DomainReport, StateDomain,
    Trajectory, ViolationKind,
};
pub use edmd::{
    apply_generator, build_matrices, build_matrices_weighted, galerkin_reference, generator_error,
    EdmdFit, GeneratorMatrix, Provenance, SampleSet,
};
pub use error::{Error, Result};
pub use experiments::{
    parse_generator_rows_csv, run_duffing_benchmark, run_fem_sweep, run_generator_sweep,
    run_generator_sweep_with_skip, run_trajectory_sweep, DuffingBenchmarkResult,
    DuffingBenchmarkSpec, FemSweepResult, FemSweepSpec, GeneratorSweepResult, SweepScenario,
    SweepSpec, TrajectorySweepResult,
};
pub use linalg::SolveReport;
pub use quad::Quadrature;
pub use surrogate::{
    assemble_surrogate, fit_edmdc, BilinearSurrogate, EdmdcModel, LiftedTrajectory,
    ObservableSeries, LIFTED_BLOWUP,
};
