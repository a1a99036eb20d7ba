//! Heterogeneous circuit graph: cells, nets and three typed adjacencies.

mod csr;
mod generate;
mod io;

pub use csr::{build_csr, CsrAdjacency};
pub use generate::{generate_synthetic, Preset, SyntheticSpec};
pub use io::{load_graph, save_graph};

use crate::dense::DenseMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// The three edge types of a circuit graph, in their canonical storage and
/// scheduling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    /// Net rows gathering from cell columns; updates net embeddings.
    Pins,
    /// Cell rows gathering from net columns; exact transpose of `pins`.
    Pinned,
    /// Cell rows gathering from cell columns.
    Near,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Pins, EdgeType::Pinned, EdgeType::Near];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Pins => "pins",
            EdgeType::Pinned => "pinned",
            EdgeType::Near => "near",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One finding from [`validate`]; an empty finding list means the graph is
/// well formed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimMismatch(String),
    CsrStructure { edge: EdgeType, detail: String },
    TransposeMismatch { detail: String },
    NonFiniteFeature { node: &'static str, row: usize, col: usize },
    LabelIssue(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimMismatch(d) => write!(f, "dimension mismatch: {d}"),
            Violation::CsrStructure { edge, detail } => {
                write!(f, "{edge} adjacency is not valid CSR: {detail}")
            }
            Violation::TransposeMismatch { detail } => {
                write!(f, "pinned is not the transpose of pins: {detail}")
            }
            Violation::NonFiniteFeature { node, row, col } => {
                write!(f, "non-finite {node} feature at ({row}, {col})")
            }
            Violation::LabelIssue(d) => write!(f, "label issue: {d}"),
        }
    }
}

/// A heterogeneous circuit graph with cached adjacency transposes.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    x_cell: DenseMatrix,
    x_net: DenseMatrix,
    pins: CsrAdjacency,
    pinned: CsrAdjacency,
    near: CsrAdjacency,
    pins_t: CsrAdjacency,
    pinned_t: CsrAdjacency,
    near_t: CsrAdjacency,
    labels: Option<Vec<f64>>,
}

impl HeteroGraph {
    /// Wraps features and adjacencies, computing and caching all three
    /// transposes. Structural soundness is checked separately by
    /// [`validate`], so a malformed graph can still be loaded and reported.
    pub fn new(
        x_cell: DenseMatrix,
        x_net: DenseMatrix,
        pins: CsrAdjacency,
        pinned: CsrAdjacency,
        near: CsrAdjacency,
        labels: Option<Vec<f64>>,
    ) -> Self {
        let pins_t = pins.transpose();
        let pinned_t = pinned.transpose();
        let near_t = near.transpose();
        Self {
            x_cell,
            x_net,
            pins,
            pinned,
            near,
            pins_t,
            pinned_t,
            near_t,
            labels,
        }
    }

    pub fn n_cell(&self) -> usize {
        self.x_cell.rows()
    }

    pub fn n_net(&self) -> usize {
        self.x_net.rows()
    }

    pub fn d_cell(&self) -> usize {
        self.x_cell.cols()
    }

    pub fn d_net(&self) -> usize {
        self.x_net.cols()
    }

    pub fn x_cell(&self) -> &DenseMatrix {
        &self.x_cell
    }

    pub fn x_net(&self) -> &DenseMatrix {
        &self.x_net
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn adj(&self, edge: EdgeType) -> &CsrAdjacency {
        match edge {
            EdgeType::Pins => &self.pins,
            EdgeType::Pinned => &self.pinned,
            EdgeType::Near => &self.near,
        }
    }

    /// Cached transpose of [`HeteroGraph::adj`], computed once at build or
    /// load time.
    pub fn adj_t(&self, edge: EdgeType) -> &CsrAdjacency {
        match edge {
            EdgeType::Pins => &self.pins_t,
            EdgeType::Pinned => &self.pinned_t,
            EdgeType::Near => &self.near_t,
        }
    }

    /// Source-node features seen by an edge type.
    pub fn source_features(&self, edge: EdgeType) -> &DenseMatrix {
        match edge {
            EdgeType::Pins | EdgeType::Near => &self.x_cell,
            EdgeType::Pinned => &self.x_net,
        }
    }
}

/// Checks every structural contract of a graph and returns all findings.
pub fn validate(g: &HeteroGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_cell = g.n_cell();
    let n_net = g.n_net();

    let expected = [
        (EdgeType::Pins, n_net, n_cell),
        (EdgeType::Pinned, n_cell, n_net),
        (EdgeType::Near, n_cell, n_cell),
    ];
    for (edge, rows, cols) in expected {
        let a = g.adj(edge);
        if a.num_rows() != rows || a.num_cols() != cols {
            out.push(Violation::DimMismatch(format!(
                "{edge} is {}x{}, expected {rows}x{cols}",
                a.num_rows(),
                a.num_cols()
            )));
        }
        if let Err(e) = a.validate_structure() {
            out.push(Violation::CsrStructure {
                edge,
                detail: e.to_string(),
            });
        }
    }

    if g.pins.validate_structure().is_ok() && g.pinned.validate_structure().is_ok() {
        let expected_pinned = g.pins.transpose();
        if expected_pinned.num_rows() != g.pinned.num_rows()
            || expected_pinned.num_cols() != g.pinned.num_cols()
            || expected_pinned.nnz() != g.pinned.nnz()
        {
            out.push(Violation::TransposeMismatch {
                detail: format!(
                    "shape/nnz {}x{}/{} vs expected {}x{}/{}",
                    g.pinned.num_rows(),
                    g.pinned.num_cols(),
                    g.pinned.nnz(),
                    expected_pinned.num_rows(),
                    expected_pinned.num_cols(),
                    expected_pinned.nnz()
                ),
            });
        } else if let Some(((er, ec, ev), (gr, gc, gv))) = expected_pinned
            .entries()
            .zip(g.pinned.entries())
            .find(|(a, b)| a.0 != b.0 || a.1 != b.1 || a.2.to_bits() != b.2.to_bits())
        {
            out.push(Violation::TransposeMismatch {
                detail: format!(
                    "first difference: expected ({er}, {ec}, {ev}), found ({gr}, {gc}, {gv})"
                ),
            });
        }
    }

    for (name, x) in [("cell", &g.x_cell), ("net", &g.x_net)] {
        if let Some((row, col)) = x.first_non_finite() {
            out.push(Violation::NonFiniteFeature { node: name, row, col });
        }
    }

    if let Some(labels) = g.labels() {
        if labels.len() != n_cell {
            out.push(Violation::LabelIssue(format!(
                "{} labels for {n_cell} cells",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            out.push(Violation::LabelIssue(format!("non-finite label at {i}")));
        }
    }

    out
}

/// Degree summary of one adjacency.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeStats {
    pub edge_type: EdgeType,
    pub num_rows: usize,
    pub num_cols: usize,
    pub nnz: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
    /// Power-of-two degree histogram: bucket 0 counts degree-0 rows, bucket
    /// `i >= 1` counts degrees in `[2^(i-1), 2^i)`. Counts sum to
    /// `num_rows`.
    pub degree_histogram: Vec<usize>,
}

/// Shape summary of a graph, serialized as the JSON sidecar of a graph file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphStats {
    pub schema_version: u32,
    pub n_cell: usize,
    pub n_net: usize,
    pub d_cell: usize,
    pub d_net: usize,
    pub has_labels: bool,
    pub edges: Vec<EdgeStats>,
}

/// Computes node counts, feature dims and per-edge degree summaries.
pub fn stats(g: &HeteroGraph) -> GraphStats {
    let edges = EdgeType::ALL
        .iter()
        .map(|&edge| {
            let a = g.adj(edge);
            let mut min_degree = usize::MAX;
            let mut max_degree = 0usize;
            let mut degree_histogram = Vec::new();
            for r in 0..a.num_rows() {
                let d = a.degree(r);
                min_degree = min_degree.min(d);
                max_degree = max_degree.max(d);
                let bucket = if d == 0 { 0 } else { d.ilog2() as usize + 1 };
                if degree_histogram.len() <= bucket {
                    degree_histogram.resize(bucket + 1, 0);
                }
                degree_histogram[bucket] += 1;
            }
            if a.num_rows() == 0 {
                min_degree = 0;
            }
            EdgeStats {
                edge_type: edge,
                num_rows: a.num_rows(),
                num_cols: a.num_cols(),
                nnz: a.nnz(),
                min_degree,
                max_degree,
                mean_degree: if a.num_rows() == 0 {
                    0.0
                } else {
                    a.nnz() as f64 / a.num_rows() as f64
                },
                degree_histogram,
            }
        })
        .collect();
    GraphStats {
        schema_version: crate::SCHEMA_VERSION,
        n_cell: g.n_cell(),
        n_net: g.n_net(),
        d_cell: g.d_cell(),
        d_net: g.d_net(),
        has_labels: g.labels.is_some(),
        edges,
    }
}
