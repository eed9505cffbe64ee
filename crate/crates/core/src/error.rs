use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("point ({0:.4}, {1:.4}, {2:.4}) lies outside the volume")]
    OutOfBounds(f64, f64, f64),

    #[error("volume is constant; intensity scale is undefined")]
    ConstantVolume,

    #[error("payload holds {actual} values but header dims require {expected}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("phantom does not fit inside the volume: {0}")]
    PhantomBounds(String),

    #[error("zero-length tangent at centerline point {0}")]
    DegenerateTangent(usize),

    #[error("segmentation failed: no pixel above threshold {threshold} within {radius} px of the prompt")]
    SegmentationFailed { threshold: f64, radius: usize },

    #[error("contour has {0} points; at least 8 are required")]
    ContourTooShort(usize),

    #[error("degenerate contour: {0}")]
    DegenerateContour(String),

    #[error("contour point counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),

    #[error("parameter {0} is outside the knot domain [{1}, {2}]")]
    OutsideDomain(f64, f64, f64),

    #[error("singular interpolation system (pivot {0:.3e})")]
    Singular(f64),

    #[error("interpolation residual {0:.3e} exceeds tolerance")]
    Residual(f64),

    #[error("iso value {iso} outside data range [{min}, {max}]")]
    IsoOutOfRange { iso: f64, min: f64, max: f64 },

    #[error("branch merge failed: {0}")]
    Merge(String),

    #[error("empty point set")]
    EmptySet,

    #[error("exact EMD supports at most {cap} points, got {got}")]
    EmdTooLarge { cap: usize, got: usize },

    #[error("timestep {t} outside 1..={max}")]
    TimestepRange { t: usize, max: usize },

    #[error("training diverged at iteration {iteration}: loss {loss:.4e} (initial {initial:.4e})")]
    Diverged { iteration: usize, loss: f64, initial: f64 },

    #[error("sampling produced non-finite state at step {0}")]
    SamplingBlewUp(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// `fs::read` with the path in the error.
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}
