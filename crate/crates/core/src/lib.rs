//! Quantifies how ensemble wind uncertainty propagates into aircraft
//! trajectory predictions and probabilities of loss of separation.
//!
//! The pipeline has four stages:
//!
//! 1. [`ensemble`] ingests or synthesizes an ensemble of horizontal wind
//!    fields on a shared grid ([`rbf`] turns the discrete fields into
//!    smooth, evaluable functions).
//! 2. [`mukl`] compresses the correlated u/v fields into a small set of
//!    uncorrelated random coefficients by a joint Karhunen-Loeve expansion.
//! 3. [`apc`] builds data-driven orthonormal polynomials and Gaussian
//!    quadrature directly from the sample moments of those coefficients and
//!    fits a polynomial-chaos surrogate of any model output.
//! 4. [`trajectory`] plans wind-corrected great-circle flights, and
//!    [`conflict`] turns surrogate separation distances into envelope
//!    screens, kernel-density estimates and marginal/joint/conditional
//!    probabilities of separation-minimum infringement.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod apc;
pub mod conflict;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod mukl;
pub mod numfmt;
pub mod propagation;
pub mod rbf;
pub mod trajectory;

pub use apc::{
    build_apc_basis, build_index_set, build_univariate_basis, fit_surrogate, ApcBasis,
    MomentSet, MultiIndexSet, Surrogate, UnivariateBasis,
};
pub use conflict::{
    classify_probability, conflict_probability, ensemble_baseline, envelope_series,
    envelope_verdict, joint_conditional, silverman_bandwidth, silverman_bandwidth_2d,
    BivariateKde, ConflictVerdict, EnvelopeSeries, KdeModel, Verdict, HIGH_RISK_PROBABILITY,
    SEPARATION_THRESHOLD_M,
};
pub use ensemble::{
    generate_synthetic_ensemble, load_ensemble, pool_ensembles, save_ensemble, SyntheticSpec,
    WindEnsemble, WindMember,
};
pub use grid::WindGrid;
pub use mukl::{
    assemble_covariance, solve_eigenproblem, truncate_by_energy, MuklExpansion, Truncation,
};
pub use propagation::{
    plan_pair_at_nodes, plan_pair_per_member, plan_pair_through_fields, PairPlans,
};
pub use rbf::{default_epsilon, fit_rbf, RbfInterpolant};
pub use trajectory::{
    haversine, separation_series, AircraftSpec, Planner, RbfWindField, Trajectory, UniformWind,
    WindCorrectedPlanner, WindField, ZeroWind, EARTH_RADIUS_M,
};
