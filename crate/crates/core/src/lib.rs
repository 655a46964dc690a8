//! Certification and simulation toolkit for high-gain observers of
//! triangular nonlinear systems with delayed state and input coupling.
//!
//! The crate is organized along the pipeline:
//!
//! - [`exprlang`]: the small expression grammar used by text configurations;
//! - [`linalg`]: dense matrix services (Lyapunov solve, symmetric
//!   eigenvalues, Routh test, companion pole placement);
//! - [`model`]: the system class, delay laws, gain bounds and validation;
//! - [`certify`]: feasibility conditions, gain-parameter search, decay-rate
//!   solve, envelope and practical-radius constants;
//! - [`dde`]: fixed-step method-of-steps integrator with dense output;
//! - [`harness`]: coupled plant/observer simulation and verification of the
//!   certified bounds;
//! - [`demo`]: the bundled polar-molecule demonstration model.

pub mod certify;
pub mod dde;
pub mod demo;
pub mod exprlang;
pub mod harness;
pub mod linalg;
pub mod model;

pub use certify::{
    build_certificate, CertMode, Certification, CertifyError, CertifyRequest, Condi2Variant,
    EpsChoice, StabilityCertificate,
};
pub use exprlang::{evaluate, parse_expression, Expression};
pub use harness::{
    check_envelope, estimate_nu, eval_lkf, simulate_plant_observer, ObserverSpec,
    SimulationOptions, SimulationResult,
};
pub use linalg::{DenseMatrix, LyapunovConvention};
pub use model::{check_a1_samples, gamma_eval, validate_system, DelayModel, GammaSpec,
    HistorySpec, TriangularSystem};
