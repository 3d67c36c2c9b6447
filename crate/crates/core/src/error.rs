//! Error types for every subsystem, built on `thiserror`.
//!
//! Each subsystem exposes its own enum so callers can match on the failure
//! class they care about; the CLI maps these onto exit codes.

use thiserror::Error;

/// Grid axis validation failures.
#[derive(Debug, Error)]
pub enum GridError {
    /// An axis was too short, unsorted, or contained non-finite values.
    #[error("invalid {axis} axis: {reason}")]
    InvalidAxis {
        /// Which axis failed validation.
        axis: &'static str,
        /// What was wrong with it.
        reason: String,
    },
}

/// Ensemble ingestion, generation and serialization failures.
#[derive(Debug, Error)]
pub enum EnsembleError {
    /// Underlying file I/O failed.
    #[error("ensemble i/o: {0}")]
    Io(#[from] std::io::Error),

    /// The CSV header did not match `member,lat,lon,u,v`.
    #[error("bad ensemble header: expected 'member,lat,lon,u,v', found '{found}'")]
    Header {
        /// Header actually present in the file.
        found: String,
    },

    /// A row failed to parse.
    #[error("line {line}: {reason}")]
    Malformed {
        /// 1-based line number in the file.
        line: u64,
        /// Parse failure description.
        reason: String,
    },

    /// A parsed value was NaN or infinite.
    #[error("line {line}: non-finite {column} value")]
    NonFinite {
        /// 1-based line number in the file.
        line: u64,
        /// Column holding the offending value.
        column: &'static str,
    },

    /// A member did not cover the full grid.
    #[error("member {member} is missing grid cell ({lat}, {lon})")]
    MissingCell {
        /// Member identifier from the file.
        member: u64,
        /// Latitude of the uncovered cell, degrees.
        lat: f64,
        /// Longitude of the uncovered cell, degrees.
        lon: f64,
    },

    /// A member defined the same grid cell twice.
    #[error("line {line}: member {member} repeats grid cell ({lat}, {lon})")]
    DuplicateCell {
        /// 1-based line number of the repeat.
        line: u64,
        /// Member identifier from the file.
        member: u64,
        /// Latitude of the repeated cell, degrees.
        lat: f64,
        /// Longitude of the repeated cell, degrees.
        lon: f64,
    },

    /// Fewer than two realizations were provided.
    #[error("ensemble needs at least 2 members, got {found}")]
    TooFewMembers {
        /// Member count actually present.
        found: usize,
    },

    /// Pooled sources disagreed on the grid.
    #[error("ensemble grids do not match: {reason}")]
    GridMismatch {
        /// Description of the disagreement.
        reason: String,
    },

    /// The grid axes were invalid.
    #[error(transparent)]
    Grid(#[from] GridError),

    /// A generation parameter was out of range.
    #[error("invalid {field}: {reason}")]
    InvalidParameter {
        /// Parameter name.
        field: &'static str,
        /// What was wrong with it.
        reason: String,
    },
}

/// Radial-basis-function interpolation failures.
#[derive(Debug, Error)]
pub enum RbfError {
    /// Field shape did not match the grid shape.
    #[error("field shape ({found_rows}, {found_cols}) does not match grid ({rows}, {cols})")]
    ShapeMismatch {
        /// Expected row count.
        rows: usize,
        /// Expected column count.
        cols: usize,
        /// Row count of the field passed in.
        found_rows: usize,
        /// Column count of the field passed in.
        found_cols: usize,
    },

    /// The shape parameter was not positive and finite.
    #[error("shape parameter must be positive and finite, got {value}")]
    InvalidEpsilon {
        /// Offending value.
        value: f64,
    },

    /// Collocation system could not be factored even after regularization.
    #[error("collocation system is singular")]
    SingularSystem,

    /// Evaluation point outside the grid bounding box.
    #[error("point ({lat}, {lon}) is outside the interpolation domain")]
    OutOfDomain {
        /// Requested latitude, degrees.
        lat: f64,
        /// Requested longitude, degrees.
        lon: f64,
    },

    /// Input field contained NaN or infinite values.
    #[error("field contains non-finite values")]
    NonFinite,
}

/// Binary archive read/write failures, shared by the expansion and
/// surrogate serializers.
#[derive(Debug, Error)]
pub enum ArchiveError {
    /// Underlying file I/O failed.
    #[error("archive i/o: {0}")]
    Io(#[from] std::io::Error),

    /// The file did not match the documented layout.
    #[error("archive format: {0}")]
    Format(String),
}

/// Karhunen-Loeve decomposition failures.
#[derive(Debug, Error)]
pub enum MuklError {
    /// The assembled matrix was not square.
    #[error("covariance matrix must be square, got {rows}x{cols}")]
    NotSquare {
        /// Row count supplied.
        rows: usize,
        /// Column count supplied.
        cols: usize,
    },

    /// The assembled matrix was not symmetric to tolerance.
    #[error("covariance matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric {
        /// Largest `|C[i,j] - C[j,i]|` found.
        max_asymmetry: f64,
    },

    /// Negative eigenvalues exceeded the round-off budget.
    #[error("covariance is indefinite: min eigenvalue {min:e} against max {max:e}")]
    Indefinite {
        /// Most negative eigenvalue before clipping.
        min: f64,
        /// Largest eigenvalue.
        max: f64,
    },

    /// Every eigenvalue was zero; no energy to decompose.
    #[error("eigenvalue spectrum is identically zero")]
    ZeroSpectrum,

    /// A numerically null mode was requested in the truncation.
    #[error("mode {mode} carries no variance and cannot be included (max selectable {selectable})")]
    NullModeIncluded {
        /// 1-based index of the offending mode.
        mode: usize,
        /// Number of modes with non-negligible variance.
        selectable: usize,
    },

    /// Requested truncation order exceeds what the spectrum offers.
    #[error("truncation order {requested} exceeds the {available} available modes")]
    InvalidTruncation {
        /// Modes requested.
        requested: usize,
        /// Modes available.
        available: usize,
    },

    /// Energy fraction outside `(0, 1]`.
    #[error("explained-variance fraction must lie in (0, 1], got {delta}")]
    InvalidDelta {
        /// Offending value.
        delta: f64,
    },

    /// Coefficient vector length did not match the truncation order.
    #[error("coefficient vector has length {found}, expansion holds {expected} modes")]
    CoefficientLength {
        /// Modes in the expansion.
        expected: usize,
        /// Length supplied.
        found: usize,
    },

    /// Archive serialization failed.
    #[error(transparent)]
    Archive(#[from] ArchiveError),

    /// Stored grid axes were invalid.
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Polynomial-chaos construction failures.
#[derive(Debug, Error)]
pub enum ApcError {
    /// Polynomial order outside the supported range.
    #[error("polynomial order must be at least 1, got {p}")]
    InvalidOrder {
        /// Requested order.
        p: usize,
    },

    /// Not enough samples to estimate the required moments.
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples {
        /// Minimum sample count.
        needed: usize,
        /// Samples supplied.
        found: usize,
    },

    /// A sample or moment was NaN or infinite.
    #[error("non-finite {what}")]
    NonFinite {
        /// What contained the non-finite value.
        what: &'static str,
    },

    /// Wrong number of raw moments for the requested order.
    #[error("order {p} needs {expected} raw moments, got {found}")]
    MomentCount {
        /// Requested order.
        p: usize,
        /// Moments required (2p + 1).
        expected: usize,
        /// Moments supplied.
        found: usize,
    },

    /// The zeroth moment of a probability measure must be one.
    #[error("zeroth moment must equal 1, got {found}")]
    BadZerothMoment {
        /// Value supplied.
        found: f64,
    },

    /// The moment Hankel matrix was not positive definite.
    #[error("moment Hankel matrix is not positive definite: leading minor of order {minor} is not positive (degenerate samples)")]
    HankelNotPositiveDefinite {
        /// 1-based order of the first failing leading minor.
        minor: usize,
    },

    /// Dimension counts disagreed when assembling the multivariate basis.
    #[error("expected {expected} univariate bases, got {found}")]
    BasisCount {
        /// Bases required.
        expected: usize,
        /// Bases supplied.
        found: usize,
    },

    /// Model output rows did not match the quadrature node count.
    #[error("output matrix has {found} rows, quadrature holds {expected} node tuples")]
    OutputRows {
        /// Node tuple count.
        expected: usize,
        /// Rows supplied.
        found: usize,
    },

    /// A point with the wrong dimension was passed to evaluation.
    #[error("evaluation point has dimension {found}, basis has {expected} variables")]
    PointDimension {
        /// Variables in the basis.
        expected: usize,
        /// Dimension supplied.
        found: usize,
    },

    /// Time index outside the fitted range.
    #[error("time index {index} out of range ({len} steps)")]
    TimeIndex {
        /// Index requested.
        index: usize,
        /// Steps available.
        len: usize,
    },

    /// Archive serialization failed.
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Trajectory planning and separation failures.
#[derive(Debug, Error)]
pub enum TrajectoryError {
    /// An aircraft definition was invalid.
    #[error("invalid aircraft spec ({field}): {reason}")]
    InvalidSpec {
        /// Offending field.
        field: &'static str,
        /// What was wrong with it.
        reason: String,
    },

    /// Integration parameters were invalid.
    #[error("invalid integration parameter ({field}): {reason}")]
    InvalidParameter {
        /// Offending parameter.
        field: &'static str,
        /// What was wrong with it.
        reason: String,
    },

    /// The crosswind component met or exceeded the airspeed, so no heading
    /// can hold the requested track.
    #[error("crosswind {crosswind:.1} m/s exceeds airspeed {airspeed:.1} m/s near ({lat:.3}, {lon:.3})")]
    CrosswindExceedsAirspeed {
        /// Crosswind magnitude, m/s.
        crosswind: f64,
        /// True airspeed, m/s.
        airspeed: f64,
        /// Latitude where the condition was hit, degrees.
        lat: f64,
        /// Longitude where the condition was hit, degrees.
        lon: f64,
    },

    /// Wind lookup failed during integration.
    #[error("wind lookup failed: {0}")]
    WindLookup(#[from] RbfError),

    /// The aircraft did not reach its destination within the time limit.
    /// The partial trajectory is attached for inspection.
    #[error("destination not reached within {limit_s} s ({remaining_m:.0} m remaining)")]
    TimeLimitExceeded {
        /// Configured time limit, seconds.
        limit_s: f64,
        /// Distance still to go, metres.
        remaining_m: f64,
        /// States integrated before giving up.
        partial: Box<crate::trajectory::Trajectory>,
    },

    /// Two trajectories did not share a time grid.
    #[error("trajectory time grids do not match: {reason}")]
    GridMismatch {
        /// Description of the disagreement.
        reason: String,
    },
}

/// Conflict probability estimation failures.
#[derive(Debug, Error)]
pub enum ConflictError {
    /// No samples were provided.
    #[error("sample set is empty")]
    EmptySamples,

    /// All samples were identical, so no bandwidth can be chosen.
    #[error("samples have zero variance; bandwidth is undefined")]
    DegenerateSamples,

    /// A sample was NaN or infinite.
    #[error("samples contain non-finite values")]
    NonFinite,

    /// The conditioning event has vanishing probability.
    #[error("conditioning event probability {probability:e} is below 1e-12; conditional is undefined")]
    VanishingConditioner {
        /// Probability mass of the conditioning event.
        probability: f64,
    },

    /// No ensemble member satisfied the conditioning event.
    #[error("no ensemble member satisfies the conditioning event; conditional is undefined")]
    EmptyConditioningSet,

    /// Time index outside the series.
    #[error("time index {index} out of range ({len} steps)")]
    TimeIndex {
        /// Index requested.
        index: usize,
        /// Steps available.
        len: usize,
    },

    /// Separation matrices disagreed on dimensions.
    #[error("shape mismatch: {reason}")]
    ShapeMismatch {
        /// Description of the disagreement.
        reason: String,
    },

    /// Evaluating the separation surrogate failed.
    #[error("surrogate evaluation failed: {0}")]
    Surrogate(#[from] ApcError),
}

/// Any failure along the ensemble-to-verdict pipeline, for callers that
/// drive several stages in sequence.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Ensemble ingestion or generation failed.
    #[error("ensemble stage failed: {0}")]
    Ensemble(#[from] EnsembleError),

    /// The joint expansion failed.
    #[error("expansion stage failed: {0}")]
    Mukl(#[from] MuklError),

    /// Wind field interpolation failed.
    #[error("wind interpolation failed: {0}")]
    Rbf(#[from] RbfError),

    /// Flight planning failed.
    #[error("planning failed: {0}")]
    Trajectory(#[from] TrajectoryError),

    /// Surrogate construction or evaluation failed.
    #[error("surrogate stage failed: {0}")]
    Apc(#[from] ApcError),

    /// Conflict analysis failed.
    #[error("conflict stage failed: {0}")]
    Conflict(#[from] ConflictError),
}
