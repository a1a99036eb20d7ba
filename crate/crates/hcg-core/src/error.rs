//! Error types shared across the crate.

use thiserror::Error;

/// Errors from graph construction, validation and file I/O.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("duplicate edge ({row}, {col})")]
    DuplicateEdge { row: usize, col: usize },
    #[error("index out of range: ({row}, {col}) in a {num_rows}x{num_cols} adjacency")]
    OutOfRange {
        row: usize,
        col: usize,
        num_rows: usize,
        num_cols: usize,
    },
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("unsupported format: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt section: {0}")]
    CorruptSection(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from the sparsifier and the sparse kernels.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bad keep width: k={k} not in 1..={dim}")]
    BadK { k: usize, dim: usize },
    #[error("non-finite input at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("partition plan does not match the adjacency: {0}")]
    PlanMismatch(String),
    #[error("tape does not match the operands: {0}")]
    TapeMismatch(String),
}

/// Errors from bucketing, planning, profiling and the pipeline.
#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("bad degree thresholds: low_max={low_max} must be < med_max={med_max}")]
    BadThresholds { low_max: usize, med_max: usize },
    #[error("bad bucket split widths: require K1 > K2 > K3 >= 1 and K1 <= dim, got ({k1}, {k2}, {k3}) with dim {dim}")]
    BadBucketK {
        k1: usize,
        k2: usize,
        k3: usize,
        dim: usize,
    },
    #[error("no feasible keep width: {0}")]
    NoFeasibleK(String),
    #[error("bad scheduler config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Errors from model assembly, training and checkpoints.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("graph has no labels, cannot train or score")]
    MissingLabels,
    #[error("too few samples for correlation: n={0}, need at least 2")]
    TooFewSamples(usize),
    #[error("unsupported format: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt section: {0}")]
    CorruptSection(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
