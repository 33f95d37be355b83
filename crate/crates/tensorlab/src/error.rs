use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match {len} values")]
    ShapeValues { shape: Vec<usize>, len: usize },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("softmax row {row} has no finite entry")]
    DegenerateRow { row: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("non-finite gradient for parameter `{name}` at element {index}")]
    NonFiniteGradient { name: String, index: usize },
}

impl TensorError {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            op,
            reason: reason.into(),
        }
    }
}
