use thiserror::Error;

use crate::statespec::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin {spin} is incompatible with {statistics} statistics")]
    SpinStatistics { spin: String, statistics: String },

    #[error("spin projection {sigma} is not valid for spin {spin}")]
    InvalidSigma { sigma: String, spin: String },

    #[error("mode {0} is not part of the mode table")]
    UnknownMode(String),

    #[error("duplicate mode {0} in mode table")]
    DuplicateMode(String),

    #[error("operands are defined over different mode tables")]
    TableMismatch,

    #[error("mode blocks overlap: {0}")]
    OverlappingBlocks(String),

    #[error("invalid basis label: {0}")]
    InvalidLabel(String),

    #[error("Unruh weights are not normalized: |q_R|^2 + |q_L|^2 = {0}")]
    Normalization(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cutoff {cutoff} leaves tail weight {tail:e} above tolerance; need cutoff >= {required}")]
    CutoffTooSmall { cutoff: usize, required: usize, tail: f64 },

    #[error("kernel has dimension {dim}, expected exactly one vacuum")]
    KernelDimension { dim: usize },

    #[error("kernel residual {residual:e} exceeds tolerance {tolerance:e}")]
    KernelResidual { residual: f64, tolerance: f64 },

    #[error("permutation of length {got} does not match table of {expected} modes")]
    PermutationLength { expected: usize, got: usize },

    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),

    #[error("dense block of dimension {dim} exceeds the limit {limit}")]
    BlockTooLarge { dim: usize, limit: usize },

    #[error("problem size {size} exceeds the limit {limit}")]
    ProblemTooLarge { size: usize, limit: usize },

    #[error("Alice must be a qubit, found {0} distinct labels")]
    AliceNotQubit(usize),

    #[error("state has zero norm")]
    ZeroState,

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
