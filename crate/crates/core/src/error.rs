use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input {x} outside domain [{lo}, {hi})")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("invalid piecewise function: {0}")]
    InvalidFunction(String),

    #[error("every threshold weight rounds to zero, mixed set would be empty")]
    EmptyMix,

    #[error("degenerate weight: w = 0 has no threshold")]
    DegenerateWeight,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("maxpool needs even spatial dimensions, got {height}x{width}")]
    OddSpatial { height: usize, width: usize },

    #[error("incompatible model: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed file at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("wrong magic number: expected {expected}, found {found}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated file at byte {offset}")]
    Truncated { offset: u64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite parameter in layer {layer}, connection {index}")]
    NonFinite { layer: usize, index: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
}
