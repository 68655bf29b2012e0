use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector norm {norm:e} is below the zero threshold")]
    ZeroVector { norm: f64 },

    #[error("dimension {0} is too small; at least 2 coordinates are required")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),

    #[error("points are antipodal; the connecting geodesic is not unique")]
    AntipodalPoint,

    #[error("point coincides with the base point; direction is undefined")]
    AtBasePoint,

    #[error("vector is not tangent at the base point (inner product {0:e})")]
    NotTangent(f64),

    #[error("euclidean mean vanishes; spherical mean is undefined")]
    DegenerateMean,

    #[error("points are not contained in an open hemisphere (max distance {max_distance} rad)")]
    HemisphereViolation { max_distance: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("prototype bank has no {0} prototypes")]
    EmptyBank(&'static str),

    #[error("need at least {k} points for clustering, found {found}")]
    TooFewPoints { k: usize, found: usize },

    #[error("score {score} lies outside the ambiguity interval [{low}, {high}]")]
    OutOfInterval { score: f64, low: f64, high: f64 },

    #[error("layer {layer}: fitted similarity variance {variance:e} is degenerate")]
    DegenerateVariance { layer: usize, variance: f64 },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("labels contain no positives")]
    NoPositives,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    TruncatedFile { offset: u64, needed: u64 },

    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: u64 },

    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { key: String, line: usize },

    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
