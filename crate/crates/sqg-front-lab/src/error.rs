use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("grid: {0}")]
    Grid(String),

    #[error("multiplier symbol is not finite at xi = {xi}")]
    NonFiniteSymbol { xi: f64 },

    #[error("multiplier is not Hermitian-symmetric; apply it to a complex field instead")]
    ComplexMultiplierOnRealField,

    #[error("fractional power exponent {s} outside allowed range [{lo}, {hi}]")]
    ExponentRange { s: f64, lo: f64, hi: f64 },

    #[error("dyadic block lambda = {lambda} outside covered range [{min}, {max}]")]
    BlockOutOfRange { lambda: f64, min: f64, max: f64 },

    #[error("quadrature mesh: {0}")]
    Mesh(String),

    #[error("asymmetric truncation [{lo}, {hi}] rejected; the kernel parity cancellation requires a symmetric window")]
    AsymmetricTruncation { lo: f64, hi: f64 },

    #[error("zero shift: difference quotients require y != 0")]
    ZeroShift,

    #[error("symbol argument must be nonzero for quadrature evaluation")]
    ZeroSymbolFrequency,

    #[error("mesh truncation radius {y_max} exceeds half box length {half_box}; periodic wrap would double-count")]
    MeshExceedsHalfBox { y_max: f64, half_box: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("grid size n = {n} exceeds the exact paradifferential kernel limit {max}; reduce n")]
    GridTooLargeForParaproduct { n: usize, max: usize },

    #[error("small-data margin violated: max F(phi_x) = {measured:.6} > {limit:.6}")]
    MarginViolated { measured: f64, limit: f64 },

    #[error("time stepping aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String },

    #[error("dt = {dt} violates the CFL guard {limit} (c_cfl * dx / max|a'(xi_max)|)")]
    CflViolated { dt: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("packet evaluation outside its validity region: t = {t}, v = {v} (need v in J_lambda and t >= {t_min})")]
    OutsidePacketRegion { t: f64, v: f64, t_min: f64 },

    #[error("profile series needs at least {needed} time samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("fit window [{lo}, {hi}] not usable: {reason}")]
    BadFitWindow { lo: f64, hi: f64, reason: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Configuration file failures, split into distinct classes so callers can
/// tell a missing file from a schema violation from an unknown key.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    Missing(PathBuf),

    #[error("config file {path}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, key: String },

    #[error("config file {path}: {message}")]
    Schema { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, LabError>;
