//! Shared fixtures for the criterion benches.

use hcg_core::graph::{generate_synthetic, Preset, SyntheticSpec};
use hcg_core::HeteroGraph;

/// Scaled-down preset graph: heavy-tailed near degrees, dim 64, a few
/// thousand cells, so one kernel pass sits in the tens of microseconds.
pub fn bench_graph(scale: f64) -> HeteroGraph {
    let spec = SyntheticSpec {
        seed: 7,
        ..SyntheticSpec::preset(Preset::Small).with_scale(scale)
    };
    generate_synthetic(&spec).expect("preset spec is feasible at bench scales")
}
