use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("geometry undefined past bridge (layer `{0}`)")]
    GeometryPastBridge(String),

    #[error("position {position:?} outside {extent:?}")]
    OutOfRange {
        position: (usize, usize, usize),
        extent: (usize, usize, usize),
    },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("non-finite activation produced by layer `{0}`")]
    NonFinite(String),

    #[error("layer `{0}` has no post-synaptic field")]
    NoPsField(String),

    #[error("TD pass died at layer `{0}`")]
    TdDied(String),

    #[error("no attended region")]
    NoAttendedRegion,

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("class index {index} out of range (network has {classes} outputs)")]
    BadClass { index: usize, classes: usize },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file corrupt at byte {offset}: {message}")]
    WeightFormat { offset: usize, message: String },

    #[error("image: {0}")]
    Image(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("config: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for usage/config problems, 2 for pipeline failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TdDied(_) | Error::NoAttendedRegion | Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
