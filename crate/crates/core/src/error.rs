use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid encoder config: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("allocation of {elements} elements failed")]
    OutOfMemory { elements: usize },

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error("weight `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("stream out of order: {0}")]
    StreamOrder(String),

    #[error("bad magic {0:?}, expected \"VIRW\"")]
    BadMagic([u8; 4]),

    #[error("unsupported weight file version {0}")]
    Version(u32),

    #[error("file truncated in header: {0} bytes")]
    TruncatedHeader(usize),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("payload is {actual} bytes, manifest requires {expected}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
