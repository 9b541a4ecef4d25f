use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0}, expected 2 or 3")]
    UnsupportedDimension(usize),

    #[error("non-finite coordinate")]
    NonFinite,

    #[error("invalid point at index {index}: {source}")]
    InvalidPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gram matrix not positive definite")]
    NotPositiveDefinite,

    #[error("stalled projection (residual {residual})")]
    StalledProjection { residual: f64 },

    #[error("projection did not converge (final residual {residual})")]
    NotConverged { residual: f64 },

    #[error("insufficient overlap: {usable} usable residuals")]
    InsufficientOverlap { usable: usize },

    #[error("endpoint in collision margin")]
    EndpointInCollision,

    #[error("grid too large: {cells} cells")]
    GridTooLarge { cells: u128 },

    #[error("no grid points inside the distance band")]
    EmptyBand,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite
            | Error::StalledProjection { .. }
            | Error::NotConverged { .. }
            | Error::InsufficientOverlap { .. }
            | Error::EndpointInCollision
            | Error::EmptyBand => true,
            Error::InvalidPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_index(self, index: usize) -> Self {
        Error::InvalidPoint {
            index,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_point(p: &[f64], dim: usize) -> Result<()> {
    if p.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}
