//! Crate-wide error type.
//!
//! Everything fallible returns [`Error`]; the variants map to the broad
//! failure classes the library distinguishes (bad shapes, bad configuration,
//! numeric blow-ups, resource caps, I/O).

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/graph shape violation. The message names the offending node.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Operation attempted in an invalid state (e.g. backward on an empty
    /// graph, resume with a mismatched checkpoint).
    #[error("state error: {0}")]
    State(String),

    /// NaN or infinity where a finite value is required. Updates that hit
    /// this are rejected atomically.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Input outside the mathematical domain of an operation
    /// (e.g. log-density of an action outside the open interval (-1, 1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// Explicit resource limit hit (e.g. support-size explosion in the
    /// distributional oracle with merging disabled).
    #[error("resource limit: {0}")]
    Resource(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
