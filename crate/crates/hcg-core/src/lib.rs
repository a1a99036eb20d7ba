//! Kernels and training loop for heterogeneous circuit graphs.
//!
//! A circuit netlist is modelled as a pair of node sets (cells and nets)
//! connected by three CSR adjacencies: `pins` (net rows gathering from cell
//! columns), `pinned` (its exact transpose, cell rows gathering from net
//! columns) and `near` (cell-to-cell proximity). Message passing runs a
//! row-wise top-k sparsifier over the source embeddings, multiplies the
//! adjacency against the compressed result, and merges the two cell-side
//! paths with an element-wise max.
//!
//! Layout of the crate:
//!
//! * [`graph`] owns the CSR container, validation, the synthetic generator
//!   and the on-disk format.
//! * [`drelu`] implements the top-k sparsifier and its compressed output.
//! * [`kernels`] implements the sparse-times-compressed products, their
//!   adjoints, the max merge and the workload model.
//! * [`scheduler`] buckets rows by degree, builds partition plans, profiles
//!   keep-widths and runs the three edge types as one pipeline.
//! * [`model`] stacks two heterogeneous layers, trains them with Adam and
//!   scores predictions with rank correlations.
//!
//! Everything is `f64` and every operation is bit-deterministic for a fixed
//! seed and configuration, independent of worker count.

pub mod dense;
pub mod drelu;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod scheduler;

pub use dense::DenseMatrix;
pub use drelu::{CbsrMatrix, DreluConfig, DreluMode};
pub use error::{GraphError, KernelError, ModelError, SchedulerError};
pub use graph::{CsrAdjacency, EdgeType, GraphStats, HeteroGraph, SyntheticSpec};
pub use kernels::{LayerTape, MergeMask, WorkloadEstimate};
pub use model::{MetricsReport, Network, TrainConfig, TrainOutcome};
pub use scheduler::{
    DegreeBuckets, KProfile, PartitionPlan, PipelineConfig, PipelineMode, PipelineReport,
};

/// Version stamp written into every JSON report produced by this crate.
pub const SCHEMA_VERSION: u32 = 1;
