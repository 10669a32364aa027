use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("shooting iteration did not converge: {0}")]
    NonConvergent(String),
    #[error("step size underflow at s = {at} (h = {step:e})")]
    StepUnderflow { at: f64, step: f64 },
    #[error("empty test-function set")]
    EmptyTests,
    #[error("spectral order {order} exceeds the smoothness limit {max} of the field")]
    SpectralOrder { order: usize, max: usize },
    #[error("spectral norm unavailable for this field kind: {0}")]
    NoSpectrum(&'static str),
    #[error("level grid does not cover [0, {needed}] (top level {top})")]
    LevelGrid { needed: f64, top: f64 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("barycenter recentering did not converge after {0} iterations")]
    Recenter(usize),
    #[error("cloud too coarse: softening sensitivity {0:.3e} exceeds threshold")]
    CloudTooCoarse(f64),
    #[error("unsupported profile format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
