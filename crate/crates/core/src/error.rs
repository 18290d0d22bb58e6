use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("axis {0} listed more than once")]
    DuplicateAxis(usize),
    #[error("axis {axis} of tensor {tensor} is neither contracted nor open")]
    UnboundAxis { tensor: usize, axis: usize },
    #[error("invalid dummy spec: {0}")]
    InvalidDummySpec(String),
    #[error("statistics of an empty tensor")]
    EmptyTensor,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid format: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("invalid builtin parameters: {0}")]
    InvalidParams(String),
    #[error("init plan has no variance for weight vertex `{0}`")]
    PlanIncomplete(String),
    #[error("padding {padding} exceeds kernel size {beta} minus one")]
    InvalidPadding { padding: usize, beta: usize },
    #[error("layer {layer}: {message}")]
    ShapeMismatch { layer: usize, message: String },
}
