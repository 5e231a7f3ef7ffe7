use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("structural constant `{0}` is not declared")]
    MissingConstant(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid expression `{input}`: {reason}")]
    Parse { input: String, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("stepsize {h} is not an integer multiple of the fine stepsize {h_fine}")]
    NonCommensurate { h: f64, h_fine: f64 },

    #[error("cannot shrink a lattice from {from} to {to} particles")]
    ShrinkNotAllowed { from: usize, to: usize },

    #[error("implicit stage did not converge: residual {residual:e} after {iterations} sweeps")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("step {step} (t = {time}) failed: {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("stepsize constraint violated: h = {h} but h must be < {bound} (zeta = {zeta})")]
    StepsizeConstraint { h: f64, bound: f64, zeta: f64 },

    #[error("lineage mismatch: {0}")]
    LineageMismatch(String),

    #[error("coupling violation: {0}")]
    CouplingViolation(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips any `Step` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_non_finite(&self) -> bool {
        matches!(self.root(), Error::NonFinite(_))
    }
}
