//! Two-layer heterogeneous message-passing network with a hand-written
//! backward pass.
//!
//! One layer evaluates, for cells and nets with inputs `x_cell`, `x_net`:
//!
//! ```text
//! h_cell = drelu(x_cell, k_cell)        h_net = drelu(x_net, k_net)
//! y_net  = (A_pins   h_cell) W_pins   + b_pins
//! near   = (A_near   h_cell) W_near   + b_near
//! pinned = (A_pinned h_net ) W_pinned + b_pinned
//! y_cell = max(near, pinned)            (element-wise, ties to near)
//! ```
//!
//! The backward pass replays the tape exactly: the max routes each output
//! gradient to the side that won, the dense weight products are ordinary
//! matrix adjoints, the sparse products use the kept-coordinate adjoint, and
//! the two cell-side contributions meet at `h_cell`'s shared kept slots
//! before the sparsifier scatters them back to the dense input.

pub mod checkpoint;
pub mod metrics;
pub mod optim;
mod train;

pub use checkpoint::{load_model, save_model};
pub use metrics::{score, MetricsReport};
pub use optim::{AdamParams, OptimizerKind};
pub use train::{train, train_multi, EvalSet, TrainConfig, TrainOutcome};

use rand::Rng;

use crate::dense::DenseMatrix;
use crate::drelu::{cbsr_to_dense, drelu_backward, drelu_forward, DreluConfig};
use crate::error::ModelError;
use crate::graph::{EdgeType, HeteroGraph};
use crate::kernels::{
    dr_spmm_backward, dr_spmm_forward, max_merge, max_merge_backward, LayerTape, MergeMask,
};
use crate::scheduler::{
    bucket_rows, build_partition_plan, default_k_by_bucket_for, PartitionPlan, DEFAULT_THRESHOLDS,
};
use std::sync::Arc;

/// Shapes of one layer: cell-side and net-side input widths and the common
/// output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub d_cell_in: usize,
    pub d_net_in: usize,
    pub d_out: usize,
}

/// One heterogeneous convolution layer; weights right-multiply the sparse
/// aggregation outputs.
#[derive(Debug, Clone)]
pub struct HeteroConvLayer {
    pub w_pins: DenseMatrix,
    pub w_pinned: DenseMatrix,
    pub w_near: DenseMatrix,
    pub b_pins: Vec<f64>,
    pub b_pinned: Vec<f64>,
    pub b_near: Vec<f64>,
    pub drelu: DreluConfig,
}

impl HeteroConvLayer {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        dims: LayerDims,
        drelu: DreluConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if dims.d_cell_in == 0 || dims.d_net_in == 0 || dims.d_out == 0 {
            return Err(ModelError::BadConfig(format!(
                "layer dims must be positive, got {dims:?}"
            )));
        }
        drelu.check(dims.d_cell_in, dims.d_net_in)?;
        let mut init = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized to match")
        };
        Ok(Self {
            w_pins: init(dims.d_cell_in, dims.d_out),
            w_pinned: init(dims.d_net_in, dims.d_out),
            w_near: init(dims.d_cell_in, dims.d_out),
            b_pins: vec![0.0; dims.d_out],
            b_pinned: vec![0.0; dims.d_out],
            b_near: vec![0.0; dims.d_out],
            drelu,
        })
    }

    pub fn dims(&self) -> LayerDims {
        LayerDims {
            d_cell_in: self.w_pins.rows(),
            d_net_in: self.w_pinned.rows(),
            d_out: self.w_pins.cols(),
        }
    }

    /// Trainable tensors in canonical order, flattened.
    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_pins.data_mut(),
            self.w_pinned.data_mut(),
            self.w_near.data_mut(),
            &mut self.b_pins,
            &mut self.b_pinned,
            &mut self.b_near,
        ]
    }
}

/// Parameter gradients of one layer, same shapes and order as the layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w_pins: DenseMatrix,
    pub w_pinned: DenseMatrix,
    pub w_near: DenseMatrix,
    pub b_pins: Vec<f64>,
    pub b_pinned: Vec<f64>,
    pub b_near: Vec<f64>,
}

impl LayerGrads {
    pub(crate) fn params(&self) -> [&[f64]; 6] {
        [
            self.w_pins.data(),
            self.w_pinned.data(),
            self.w_near.data(),
            &self.b_pins,
            &self.b_pinned,
            &self.b_near,
        ]
    }
}

/// Everything one layer evaluation must remember to run its adjoint.
pub struct LayerEval {
    pub y_cell: DenseMatrix,
    pub y_net: DenseMatrix,
    tape: LayerTape,
    h_cell: Arc<crate::drelu::CbsrMatrix>,
    h_net: Arc<crate::drelu::CbsrMatrix>,
    z_pins: DenseMatrix,
    z_pinned: DenseMatrix,
    z_near: DenseMatrix,
}

impl LayerEval {
    /// Sparsified cell-side operand this layer aggregated.
    pub fn h_cell(&self) -> &crate::drelu::CbsrMatrix {
        &self.h_cell
    }

    /// Sparsified net-side operand this layer aggregated.
    pub fn h_net(&self) -> &crate::drelu::CbsrMatrix {
        &self.h_net
    }

    /// Which side won each cell of the merge.
    pub fn merge_mask(&self) -> Option<&MergeMask> {
        self.tape.mask()
    }
}

fn plan_for(g: &HeteroGraph, edge: EdgeType, dim: usize) -> Result<PartitionPlan, ModelError> {
    let buckets = bucket_rows(g.adj(edge), DEFAULT_THRESHOLDS)?;
    Ok(build_partition_plan(
        &buckets,
        default_k_by_bucket_for(dim)?,
        dim,
    )?)
}

/// Runs one layer forward and records its tape.
pub fn layer_forward(
    g: &HeteroGraph,
    layer: &HeteroConvLayer,
    x_cell: &DenseMatrix,
    x_net: &DenseMatrix,
    workers: usize,
) -> Result<LayerEval, ModelError> {
    let dims = layer.dims();
    if x_cell.rows() != g.n_cell()
        || x_net.rows() != g.n_net()
        || x_cell.cols() != dims.d_cell_in
        || x_net.cols() != dims.d_net_in
    {
        return Err(ModelError::ShapeMismatch(format!(
            "layer wants cell {}x{} and net {}x{}, got {}x{} and {}x{}",
            g.n_cell(),
            dims.d_cell_in,
            g.n_net(),
            dims.d_net_in,
            x_cell.rows(),
            x_cell.cols(),
            x_net.rows(),
            x_net.cols()
        )));
    }
    layer.drelu.check(dims.d_cell_in, dims.d_net_in)?;

    let h_cell = Arc::new(drelu_forward(x_cell, layer.drelu.k_cell, layer.drelu.mode)?);
    let h_net = Arc::new(drelu_forward(x_net, layer.drelu.k_net, layer.drelu.mode)?);

    let plan_pins = plan_for(g, EdgeType::Pins, dims.d_cell_in)?;
    let plan_near = plan_for(g, EdgeType::Near, dims.d_cell_in)?;
    let plan_pinned = plan_for(g, EdgeType::Pinned, dims.d_net_in)?;

    let z_pins = dr_spmm_forward(g.adj(EdgeType::Pins), &h_cell, &plan_pins, workers)?;
    let z_near = dr_spmm_forward(g.adj(EdgeType::Near), &h_cell, &plan_near, workers)?;
    let z_pinned = dr_spmm_forward(g.adj(EdgeType::Pinned), &h_net, &plan_pinned, workers)?;

    let mut y_net = z_pins.matmul(&layer.w_pins)?;
    y_net.add_row_bias(&layer.b_pins)?;
    let mut near = z_near.matmul(&layer.w_near)?;
    near.add_row_bias(&layer.b_near)?;
    let mut pinned = z_pinned.matmul(&layer.w_pinned)?;
    pinned.add_row_bias(&layer.b_pinned)?;
    let (y_cell, mask) = max_merge(&near, &pinned)?;

    let mut tape = LayerTape::default();
    tape.record(EdgeType::Pins, Arc::clone(&h_cell), g.adj(EdgeType::Pins));
    tape.record(EdgeType::Near, Arc::clone(&h_cell), g.adj(EdgeType::Near));
    tape.record(
        EdgeType::Pinned,
        Arc::clone(&h_net),
        g.adj(EdgeType::Pinned),
    );
    tape.set_mask(mask);

    Ok(LayerEval {
        y_cell,
        y_net,
        tape,
        h_cell,
        h_net,
        z_pins,
        z_pinned,
        z_near,
    })
}

/// Gradients a layer's adjoint hands back: parameter gradients plus the
/// gradients at the layer's dense inputs.
pub struct LayerBackward {
    pub grads: LayerGrads,
    pub d_x_cell: DenseMatrix,
    pub d_x_net: DenseMatrix,
}

/// Replays one layer's tape against upstream gradients `d_y_cell`,
/// `d_y_net`.
pub fn layer_backward(
    g: &HeteroGraph,
    layer: &HeteroConvLayer,
    eval: &LayerEval,
    d_y_cell: &DenseMatrix,
    d_y_net: &DenseMatrix,
    workers: usize,
) -> Result<LayerBackward, ModelError> {
    if d_y_cell.rows() != eval.y_cell.rows()
        || d_y_cell.cols() != eval.y_cell.cols()
        || d_y_net.rows() != eval.y_net.rows()
        || d_y_net.cols() != eval.y_net.cols()
    {
        return Err(ModelError::ShapeMismatch(
            "upstream gradient shapes do not match the forward outputs".into(),
        ));
    }
    let mask = eval.tape.mask().expect("forward recorded a mask");
    let (d_near, d_pinned) = max_merge_backward(d_y_cell, mask)?;

    let d_w_pins = eval.z_pins.transpose_matmul(d_y_net)?;
    let d_w_near = eval.z_near.transpose_matmul(&d_near)?;
    let d_w_pinned = eval.z_pinned.transpose_matmul(&d_pinned)?;
    let d_b_pins = d_y_net.col_sums();
    let d_b_near = d_near.col_sums();
    let d_b_pinned = d_pinned.col_sums();

    let d_z_pins = d_y_net.matmul_transpose(&layer.w_pins)?;
    let d_z_near = d_near.matmul_transpose(&layer.w_near)?;
    let d_z_pinned = d_pinned.matmul_transpose(&layer.w_pinned)?;

    let g_pins = dr_spmm_backward(
        g.adj_t(EdgeType::Pins),
        &d_z_pins,
        &eval.tape,
        EdgeType::Pins,
        workers,
    )?;
    let g_near = dr_spmm_backward(
        g.adj_t(EdgeType::Near),
        &d_z_near,
        &eval.tape,
        EdgeType::Near,
        workers,
    )?;
    let g_pinned = dr_spmm_backward(
        g.adj_t(EdgeType::Pinned),
        &d_z_pinned,
        &eval.tape,
        EdgeType::Pinned,
        workers,
    )?;

    // Both cell-side paths read the same kept slots of h_cell, so their
    // kept-coordinate gradients add before the sparsifier scatters them.
    let mut d_h_cell = g_pins;
    d_h_cell.add_assign(&g_near)?;
    let d_x_cell = drelu_backward(&eval.h_cell, &d_h_cell, layer.drelu.mode)?;
    let d_x_net = drelu_backward(&eval.h_net, &g_pinned, layer.drelu.mode)?;

    Ok(LayerBackward {
        grads: LayerGrads {
            w_pins: d_w_pins,
            w_pinned: d_w_pinned,
            w_near: d_w_near,
            b_pins: d_b_pins,
            b_pinned: d_b_pinned,
            b_near: d_b_near,
        },
        d_x_cell,
        d_x_net,
    })
}

/// Two stacked layers ending in a scalar cell output.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<HeteroConvLayer>,
}

/// Tapes of one full forward evaluation.
pub struct NetworkEval {
    pub prediction: Vec<f64>,
    evals: Vec<LayerEval>,
}

impl NetworkEval {
    /// Per-layer evaluations in forward order.
    pub fn layer_evals(&self) -> &[LayerEval] {
        &self.evals
    }
}

/// Parameter gradients for the whole network plus input gradients.
pub struct NetworkBackward {
    pub layer_grads: Vec<LayerGrads>,
    pub d_x_cell: DenseMatrix,
    pub d_x_net: DenseMatrix,
}

impl Network {
    /// Standard stack: inputs -> hidden -> scalar, same keep widths and
    /// mode on both layers (clamped to each layer's input widths).
    pub fn new(
        g_d_cell: usize,
        g_d_net: usize,
        hidden: usize,
        drelu_in: DreluConfig,
        drelu_hidden: DreluConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let l1 = HeteroConvLayer::new(
            LayerDims {
                d_cell_in: g_d_cell,
                d_net_in: g_d_net,
                d_out: hidden,
            },
            drelu_in,
            rng,
        )?;
        let l2 = HeteroConvLayer::new(
            LayerDims {
                d_cell_in: hidden,
                d_net_in: hidden,
                d_out: 1,
            },
            drelu_hidden,
            rng,
        )?;
        Ok(Self {
            layers: vec![l1, l2],
        })
    }

    /// Forward pass; the prediction is the single output column of the last
    /// layer's cell embedding.
    pub fn forward(&self, g: &HeteroGraph, workers: usize) -> Result<NetworkEval, ModelError> {
        let mut x_cell = g.x_cell().clone();
        let mut x_net = g.x_net().clone();
        let mut evals = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let eval = layer_forward(g, layer, &x_cell, &x_net, workers)?;
            x_cell = eval.y_cell.clone();
            x_net = eval.y_net.clone();
            evals.push(eval);
        }
        let last = evals.last().expect("network has layers");
        if last.y_cell.cols() != 1 {
            return Err(ModelError::BadConfig(format!(
                "final layer must be scalar, got width {}",
                last.y_cell.cols()
            )));
        }
        let prediction = (0..last.y_cell.rows())
            .map(|r| last.y_cell.get(r, 0))
            .collect();
        Ok(NetworkEval { prediction, evals })
    }

    /// Backward pass from a per-cell prediction gradient.
    pub fn backward(
        &self,
        g: &HeteroGraph,
        eval: &NetworkEval,
        d_prediction: &[f64],
        workers: usize,
    ) -> Result<NetworkBackward, ModelError> {
        let n = g.n_cell();
        if d_prediction.len() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "prediction gradient has {} entries, graph has {} cells",
                d_prediction.len(),
                n
            )));
        }
        let mut d_y_cell =
            DenseMatrix::from_vec(n, 1, d_prediction.to_vec()).expect("sized to match");
        let mut d_y_net = DenseMatrix::zeros(g.n_net(), 1);
        let mut layer_grads = vec![None; self.layers.len()];
        let mut d_inputs = None;
        for (i, (layer, le)) in self.layers.iter().zip(&eval.evals).enumerate().rev() {
            let back = layer_backward(g, layer, le, &d_y_cell, &d_y_net, workers)?;
            layer_grads[i] = Some(back.grads);
            if i == 0 {
                d_inputs = Some((back.d_x_cell, back.d_x_net));
            } else {
                d_y_cell = back.d_x_cell;
                d_y_net = back.d_x_net;
            }
        }
        let (d_x_cell, d_x_net) = d_inputs.expect("network has layers");
        Ok(NetworkBackward {
            layer_grads: layer_grads
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
            d_x_cell,
            d_x_net,
        })
    }
}

/// Mean squared error and its gradient `2 (p - l) / n`.
pub fn mse_loss(prediction: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    if prediction.len() != labels.len() || prediction.is_empty() {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction has {} entries, labels have {}",
            prediction.len(),
            labels.len()
        )));
    }
    let n = prediction.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(prediction.len());
    for (&p, &l) in prediction.iter().zip(labels) {
        let e = p - l;
        loss += e * e / n;
        grad.push(2.0 * e / n);
    }
    Ok((loss, grad))
}

/// Masked variant: entries outside `included` contribute neither loss nor
/// gradient; the divisor is the included count.
pub fn mse_loss_masked(
    prediction: &[f64],
    labels: &[f64],
    included: &[bool],
) -> Result<(f64, Vec<f64>), ModelError> {
    if prediction.len() != labels.len() || prediction.len() != included.len() {
        return Err(ModelError::ShapeMismatch(
            "prediction, labels and mask must have equal length".into(),
        ));
    }
    let n = included.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(ModelError::TooFewSamples(0));
    }
    let n = n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; prediction.len()];
    for (i, (&p, &l)) in prediction.iter().zip(labels).enumerate() {
        if included[i] {
            let e = p - l;
            loss += e * e / n;
            grad[i] = 2.0 * e / n;
        }
    }
    Ok((loss, grad))
}

/// Dense reference of what the sparsified cell path feeds forward; only for
/// tests and verification tooling.
pub fn densified_inputs(eval: &LayerEval) -> (DenseMatrix, DenseMatrix) {
    (cbsr_to_dense(&eval.h_cell), cbsr_to_dense(&eval.h_net))
}
