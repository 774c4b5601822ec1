use thiserror::Error;

/// Errors produced by the actuation, sensing and simulation models.
#[derive(Debug, Error)]
pub enum Error {
    /// The field point coincides (or nearly coincides) with a dipole source.
    #[error("dipole singularity: separation {distance:e} m is below the {min:e} m limit")]
    Singularity { distance: f64, min: f64 },

    /// A direction is too close to the vertical for the azimuth/elevation
    /// parametrization to be defined.
    #[error("degenerate orientation: direction {0:?} is (nearly) vertical")]
    DegenerateOrientation([f64; 3]),

    /// A geometric construction (rotation axis, plane U) collapsed to zero.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    /// The field at the capsule is parallel to the capsule axis.
    #[error("degenerate field: capsule field is parallel to its rotation axis")]
    DegenerateField,

    /// Not enough travel in the position history to estimate a heading.
    #[error("stale heading: {0}")]
    StaleHeading(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
