use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis index {axis} out of range for complex dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("volume density must be real and positive (found {0:e} at some site)")]
    NonPositiveVolume(f64),

    #[error("metric lost positivity: minimum eigenvalue {min_eig:e}")]
    MetricNotPositive { min_eig: f64 },

    #[error("bundle metric is not positive definite (min eigenvalue {min_eig:e})")]
    BundleMetricNotPositive { min_eig: f64 },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("gauduchon gauge failed: {0}")]
    GauduchonGauge(String),

    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    SolveFailed { residual: f64, iterations: usize },

    #[error("base metric is not Gauduchon (residual {0:e}); degree and det gauge are not well defined")]
    NotGauduchon(f64),

    #[error("imaginary part {0:e} above tolerance; inconsistent data")]
    ImaginaryPart(f64),

    #[error("operation requires complex dimension {expected}, grid has {found}")]
    WrongDimension { expected: usize, found: usize },

    #[error("flow step failed: {0}")]
    StepFailed(String),

    #[error("time series too short: need at least {need} rows, have {have}")]
    SeriesTooShort { need: usize, have: usize },

    #[error("projection is not a proper subobject (rank {rank} of {total})")]
    ImproperProjection { rank: usize, total: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no spectral gap: {0}")]
    NoSpectralGap(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
