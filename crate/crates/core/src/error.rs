use alloc::string::String;

/// Errors produced by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("node index {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("filter of size {filter} does not fit input of length {len}")]
    FilterTooLarge { filter: usize, len: usize },
    #[error("histogram input {value} at node {node}, channel {channel} lies outside [-1, 1]")]
    UnboundedInput {
        value: f64,
        node: usize,
        channel: usize,
    },
    #[error("bin count must be at least 2, got {0}")]
    BinCount(usize),
    #[error("class index {class} out of range for {m} classes")]
    ClassIndex { class: usize, m: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("graph size range {min}..={max} invalid (need 3 <= min <= max)")]
    SizeRange { min: usize, max: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        $crate::Error::ShapeMismatch { op: $op, detail: alloc::format!($($arg)*) }
    };
}
pub(crate) use shape_err;
