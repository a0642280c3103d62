use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tile `{0}` is missing a companion file: {1}")]
    MissingCompanionFile(String, PathBuf),

    #[error("corrupt raster {path}: {reason}")]
    CorruptRaster { path: PathBuf, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("duplicate tile id `{0}`")]
    DuplicateTile(String),

    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("output directory {0} is not empty")]
    OutputNotEmpty(PathBuf),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },

    #[error("class {class} target cannot be approached within multiplicity caps (best achievable {best}, target {target})")]
    UnreachableTarget { class: usize, best: u64, target: u64 },

    #[error("manifest has no records")]
    EmptyManifest,

    #[error("invalid target counts: {0}")]
    InvalidTargets(String),

    #[error("unknown tile id `{0}`")]
    UnknownTileId(String),

    #[error("mosaic factor must be 2 or 3, got {0}")]
    BadFactor(usize),

    #[error("need at least {needed} tiles for a mosaic, got {got}")]
    TooFewTiles { needed: usize, got: usize },

    #[error("no score file for tile `{0}` in {1}")]
    MissingScoreFile(String, PathBuf),

    #[error("invalid scores for tile `{tile}`: {reason}")]
    InvalidScores { tile: String, reason: String },

    #[error("invalid predictor spec `{0}`")]
    InvalidPredictor(String),

    #[error("{0}x{1} raster is not divisible by scale factor {2}")]
    IndivisibleSize(usize, usize, usize),

    #[error("invalid TTA config: {0}")]
    InvalidTta(String),

    #[error("tile id mismatch: `{0}` vs `{1}`")]
    TileIdMismatch(String, String),

    #[error("ensemble weights are all zero")]
    AllZeroWeights,

    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),

    #[error("no class has a defined IoU")]
    NoDefinedClasses,

    #[error("confusion matrix counter overflow")]
    ArithmeticOverflow,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::CorruptRaster {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn malformed(what: impl ToString, reason: impl ToString) -> Self {
        Error::Malformed {
            what: what.to_string(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn dims(expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_h: expected.0,
            expected_w: expected.1,
            got_h: got.0,
            got_w: got.1,
        }
    }
}
