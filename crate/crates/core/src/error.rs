use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("instance has no geometry (empty mask and no polygon)")]
    EmptyGeometry,

    #[error("IoU undefined: both masks are empty")]
    EmptyUnion,

    #[error("negative or non-finite area: {0}")]
    InvalidArea(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown tile id {0}")]
    UnknownTile(u64),

    #[error("window {0:?} lies entirely outside the raster")]
    WindowOutsideRaster([i64; 4]),

    #[error("split zones overlap: {0} and {1}")]
    ZoneOverlap(String, String),

    #[error("annotation regions of {0} and {1} are disjoint")]
    DisjointRegions(String, String),

    #[error("annotation set {set} is invalid: {reason}")]
    InvalidAnnotationSet { set: String, reason: String },

    #[error("segmenter returned {got} masks for {expected} prompts")]
    SegmenterContract { expected: usize, got: usize },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("geotransform is not invertible")]
    NonInvertibleTransform,

    #[error("unsupported geometry type {0}")]
    UnsupportedGeometry(String),

    #[error("invalid RLE: {0}")]
    InvalidRle(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image codec: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
