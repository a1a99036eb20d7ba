//! Randomized invariants of the sparsification, kernel, scheduling, graph,
//! and metric layers. Each property states a contract the rest of the crate
//! leans on; sizes stay small so the whole file runs in seconds.

use hcg_core::dense::{max_rel_error, DenseMatrix};
use hcg_core::drelu::{cbsr_to_dense, drelu_forward, row_threshold, DreluMode};
use hcg_core::graph::{
    build_csr, generate_synthetic, load_graph, save_graph, validate, CsrAdjacency, EdgeType,
    Preset, SyntheticSpec,
};
use hcg_core::kernels::{
    dr_spmm_backward, dr_spmm_forward, estimate_workload, max_merge, max_merge_backward,
    spmm_oracle, LayerTape,
};
use hcg_core::model::metrics::{kendall_tau_b, pearson, score, spearman};
use hcg_core::scheduler::{
    bucket_rows, build_partition_plan, run_pipeline, PipelineConfig, PipelineMode,
    DEFAULT_THRESHOLDS,
};
use proptest::prelude::*;
use std::collections::BTreeSet;
use std::sync::Arc;

fn dense_from(rows: usize, cols: usize, vals: &[f64]) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, vals.to_vec()).unwrap()
}

/// A dense matrix with smooth values, sized `rows x cols`.
fn arb_dense(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-50.0f64..50.0, r * c)
            .prop_map(move |vals| dense_from(r, c, &vals))
    })
}

/// A dense matrix drawn from a coarse value grid, so ties are common.
fn arb_tied_dense(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec((-3i32..=3).prop_map(|v| f64::from(v) * 0.5), r * c)
            .prop_map(move |vals| dense_from(r, c, &vals))
    })
}

/// A sparse adjacency with the given shape bounds and at least one entry.
fn arb_csr(max_rows: usize, max_cols: usize) -> impl Strategy<Value = CsrAdjacency> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        let nnz = 1..=(r * c).min(4 * r.max(c));
        (
            proptest::collection::btree_set((0..r, 0..c), nnz),
            Just((r, c)),
        )
            .prop_flat_map(|(coords, (r, c))| {
                let n = coords.len();
                proptest::collection::vec(-2.0f64..2.0, n).prop_map(move |vals| {
                    let entries: Vec<_> = coords
                        .iter()
                        .zip(&vals)
                        .map(|(&(i, j), &v)| (i, j, v))
                        .collect();
                    build_csr(&entries, r, c).unwrap()
                })
            })
    })
}

/// Adjacency, compatible compressed operand, and worker count for one
/// forward product.
fn arb_forward_instance(
) -> impl Strategy<Value = (CsrAdjacency, DenseMatrix, usize, usize)> {
    (arb_csr(12, 10), 3usize..=8, 1usize..=3).prop_flat_map(|(a, dim, workers)| {
        let cols = a.num_cols();
        (
            proptest::collection::vec(-10.0f64..10.0, cols * dim),
            Just((a, dim, workers)),
        )
            .prop_flat_map(|(vals, (a, dim, workers))| {
                let x = dense_from(a.num_cols(), dim, &vals);
                (1..=dim).prop_map(move |k| (a.clone(), x.clone(), k, workers))
            })
    })
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        d_cell: 6,
        d_net: 5,
        seed,
        ..SyntheticSpec::preset(Preset::Small).with_scale(0.008)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Every compressed row holds exactly k entries with strictly increasing
    // in-range indices, whatever the input values.
    #[test]
    fn drelu_rows_are_exactly_k_and_sorted(x in arb_dense(10, 8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((x.cols() - 1) as f64 * k_frac) as usize;
        for mode in [DreluMode::Literal, DreluMode::Nonneg] {
            let out = drelu_forward(&x, k, mode).unwrap();
            prop_assert_eq!(out.num_rows(), x.rows());
            prop_assert_eq!(out.k(), k);
            for r in 0..out.num_rows() {
                let idx = out.row_indices(r);
                prop_assert_eq!(idx.len(), k);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&c| c < x.cols()));
            }
        }
    }

    // Dominance with lowest-index tie-breaking: a dropped value never beats
    // a kept one, and an equal dropped value sits at a higher index.
    #[test]
    fn drelu_kept_values_dominate_dropped(x in arb_tied_dense(8, 8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((x.cols() - 1) as f64 * k_frac) as usize;
        let out = drelu_forward(&x, k, DreluMode::Literal).unwrap();
        for r in 0..x.rows() {
            let kept: BTreeSet<usize> = out.row_indices(r).iter().copied().collect();
            for (kc, &kv) in out.row_indices(r).iter().zip(out.row_values(r)) {
                prop_assert_eq!(kv, x.get(r, *kc));
                for dc in (0..x.cols()).filter(|c| !kept.contains(c)) {
                    let dv = x.get(r, dc);
                    prop_assert!(
                        kv > dv || (kv == dv && *kc < dc),
                        "row {} kept ({}, {}) dropped ({}, {})", r, kc, kv, dc, dv
                    );
                }
            }
        }
    }

    // The stored threshold of a row equals its smallest kept value.
    #[test]
    fn drelu_threshold_is_min_kept(x in arb_dense(8, 8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((x.cols() - 1) as f64 * k_frac) as usize;
        let out = drelu_forward(&x, k, DreluMode::Literal).unwrap();
        for r in 0..x.rows() {
            let min_kept = out.row_values(r).iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(row_threshold(x.row(r), k).unwrap(), min_kept);
        }
    }

    // Reapplying the operator to its densified output reselects the same
    // index set. Holds whenever kept values are positive; a negative
    // survivor could otherwise lose to a densified zero, so the input is
    // kept strictly positive here.
    #[test]
    fn drelu_is_idempotent_on_support_of_positive_rows(
        (x, k_frac) in (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(0.1f64..50.0, r * c)
                    .prop_map(move |vals| dense_from(r, c, &vals)),
                0.0f64..1.0,
            )
        }),
    ) {
        let k = 1 + ((x.cols() - 1) as f64 * k_frac) as usize;
        let once = drelu_forward(&x, k, DreluMode::Literal).unwrap();
        let twice = drelu_forward(&cbsr_to_dense(&once), k, DreluMode::Literal).unwrap();
        prop_assert_eq!(once.indices(), twice.indices());
        prop_assert_eq!(once.values(), twice.values());
    }

    // Nonneg mode selects the same support as literal and clamps values.
    #[test]
    fn nonneg_mode_shares_support_and_clamps(x in arb_dense(8, 8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((x.cols() - 1) as f64 * k_frac) as usize;
        let lit = drelu_forward(&x, k, DreluMode::Literal).unwrap();
        let non = drelu_forward(&x, k, DreluMode::Nonneg).unwrap();
        prop_assert_eq!(lit.indices(), non.indices());
        for (l, n) in lit.values().iter().zip(non.values()) {
            prop_assert_eq!(*n, l.max(0.0));
        }
    }

    // Double transpose reproduces the adjacency bit for bit.
    #[test]
    fn transpose_is_an_involution(a in arb_csr(14, 11)) {
        prop_assert_eq!(&a.transpose().transpose(), &a);
    }

    // Transposition preserves the coordinate multiset under (i,j) swap.
    #[test]
    fn transpose_swaps_coordinates(a in arb_csr(14, 11)) {
        let mut fwd: Vec<_> = a.entries().map(|(i, j, v)| (j, i, v.to_bits())).collect();
        let mut bwd: Vec<_> = a.transpose().entries().map(|(i, j, v)| (i, j, v.to_bits())).collect();
        fwd.sort_unstable();
        bwd.sort_unstable();
        prop_assert_eq!(fwd, bwd);
    }

    // The balanced product agrees with the dense oracle applied to the
    // densified operand, at every worker count.
    #[test]
    fn forward_matches_dense_oracle((a, x, k, workers) in arb_forward_instance()) {
        let h = drelu_forward(&x, k, DreluMode::Literal).unwrap();
        let buckets = bucket_rows(&a, DEFAULT_THRESHOLDS).unwrap();
        let plan = build_partition_plan(&buckets, (3, 2, 1), h.dim()).unwrap();
        let got = dr_spmm_forward(&a, &h, &plan, workers).unwrap();
        let want = spmm_oracle(&a, &cbsr_to_dense(&h)).unwrap();
        prop_assert!(max_rel_error(&got, &want) <= 1e-9);
    }

    // <forward(A, x), dy> == <backward(A^T, dy), x restricted to kept slots>.
    #[test]
    fn forward_backward_satisfy_the_adjoint_identity((a, x, k, workers) in arb_forward_instance()) {
        let h = Arc::new(drelu_forward(&x, k, DreluMode::Literal).unwrap());
        let buckets = bucket_rows(&a, DEFAULT_THRESHOLDS).unwrap();
        let plan = build_partition_plan(&buckets, (3, 2, 1), h.dim()).unwrap();
        let y = dr_spmm_forward(&a, &h, &plan, workers).unwrap();

        // Deterministic pseudo-random upstream gradient.
        let mut dy = DenseMatrix::zeros(y.rows(), y.cols());
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                dy.set(r, c, ((r * 31 + c * 17) % 13) as f64 - 6.0);
            }
        }
        let mut tape = LayerTape::default();
        tape.record(EdgeType::Near, Arc::clone(&h), &a);
        let g = dr_spmm_backward(&a.transpose(), &dy, &tape, EdgeType::Near, workers).unwrap();

        let lhs: f64 = y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(a, b)| a * b)
            .sum();
        let mut rhs = 0.0;
        for j in 0..h.num_rows() {
            for (t, &v) in h.row_values(j).iter().enumerate() {
                rhs += g.get(j, t) * v;
            }
        }
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        prop_assert!((lhs - rhs).abs() / scale <= 1e-9, "lhs {lhs} rhs {rhs}");
    }

    // The merge gradient split loses nothing: winner side carries the
    // upstream value bit-exactly, loser side is exact zero.
    #[test]
    fn merge_backward_conserves_the_gradient(
        near in arb_tied_dense(8, 6),
        salt in 0u64..1000,
    ) {
        let mut pinned = DenseMatrix::zeros(near.rows(), near.cols());
        let mut d = DenseMatrix::zeros(near.rows(), near.cols());
        for r in 0..near.rows() {
            for c in 0..near.cols() {
                let h = (r * 131 + c * 17) as u64 + salt;
                pinned.set(r, c, ((h % 7) as f64 - 3.0) * 0.5);
                d.set(r, c, (h % 11) as f64 - 5.0);
            }
        }
        let (y, mask) = max_merge(&near, &pinned).unwrap();
        let (dn, dp) = max_merge_backward(&d, &mask).unwrap();
        for r in 0..near.rows() {
            for c in 0..near.cols() {
                let a = near.get(r, c);
                let b = pinned.get(r, c);
                prop_assert_eq!(y.get(r, c), a.max(b));
                // Ties go to near, so equality means the near bit is set.
                prop_assert_eq!(mask.get(r, c), a >= b);
                let (n, p) = (dn.get(r, c), dp.get(r, c));
                prop_assert!(n == 0.0 || p == 0.0);
                prop_assert_eq!(n + p, d.get(r, c));
            }
        }
    }

    // Each row's task slices tile [0, dim) without gaps or overlap, and
    // wider split widths never produce more tasks.
    #[test]
    fn plan_slices_tile_each_row(a in arb_csr(16, 16), dim in 4usize..=40) {
        let buckets = bucket_rows(&a, (2, 5)).unwrap();
        let plan = build_partition_plan(&buckets, (4, 3, 2), dim).unwrap();
        for row in 0..plan.num_rows() {
            let mut next = 0;
            for t in plan.row_tasks(row) {
                prop_assert_eq!(t.row, row);
                prop_assert_eq!(t.start, next);
                next += t.len;
            }
            prop_assert_eq!(next, dim);
        }
        if dim >= 9 {
            let wider = build_partition_plan(&buckets, (9, 6, 3), dim).unwrap();
            prop_assert!(wider.num_tasks() <= plan.num_tasks());
            prop_assert!(wider.num_tasks() >= plan.num_rows());
        }
    }

    // Workload estimates follow the degree * width cost model and p_max
    // stays within its documented bounds.
    #[test]
    fn workload_model_is_consistent(a in arb_csr(16, 16), d in 1usize..=64, t in 1usize..=4096) {
        let w = estimate_workload(&a, d);
        for r in 0..a.num_rows() {
            prop_assert_eq!(w.per_row()[r], a.degree(r) * d);
        }
        prop_assert_eq!(w.total_workload(), w.per_row().iter().sum::<usize>());
        let p = w.p_max(t);
        prop_assert!(p >= 1 && p <= a.num_rows());
        prop_assert_eq!(w.p_max(0), 0);
    }

    // Correlations stay inside [-1, 1]; on tie-free data Kendall reduces to
    // (concordant - discordant) / C(n, 2).
    #[test]
    fn metric_bounds_and_tie_free_kendall(perm in Just(()).prop_flat_map(|_| {
        proptest::collection::vec(-100.0f64..100.0, 5..24)
    })) {
        let n = perm.len();
        let x: Vec<f64> = (0..n).map(|i| perm[i] + i as f64 * 1e-7).collect();
        let y: Vec<f64> = (0..n).map(|i| perm[(i * 7 + 3) % n] + i as f64 * 1e-7).collect();
        for v in [pearson(&x, &y).unwrap(), spearman(&x, &y).unwrap(), kendall_tau_b(&x, &y).unwrap()] {
            let v = v.unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        let distinct = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() == s.len();
        prop_assume!(distinct(&x) && distinct(&y));
        let mut conc = 0i64;
        let mut disc = 0i64;
        for i in 0..n {
            for j in (i + 1)..n {
                let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
                if s > 0.0 {
                    conc += 1;
                } else if s < 0.0 {
                    disc += 1;
                }
            }
        }
        let plain = (conc - disc) as f64 / (n * (n - 1) / 2) as f64;
        let tau = kendall_tau_b(&x, &y).unwrap().unwrap();
        prop_assert!((tau - plain).abs() <= 1e-12, "tau {tau} plain {plain}");
    }

    // Identical predictions give perfect correlations and zero error.
    #[test]
    fn perfect_prediction_scores_perfectly(perm in proptest::collection::vec(-10.0f64..10.0, 4..20)) {
        let x: Vec<f64> = perm.iter().enumerate().map(|(i, v)| v + i as f64 * 1e-6).collect();
        prop_assume!(x.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() == x.len());
        let r = score(&x, &x).unwrap();
        prop_assert!((r.pearson - 1.0).abs() < 1e-12);
        prop_assert!((r.spearman - 1.0).abs() < 1e-12);
        prop_assert!((r.kendall_tau - 1.0).abs() < 1e-12);
        prop_assert_eq!(r.mae, 0.0);
        prop_assert_eq!(r.rmse, 0.0);
    }
}

proptest! {
    // Whole-graph properties are costlier, so fewer cases.
    #![proptest_config(ProptestConfig::with_cases(12))]

    // pins and pinned hold the same coordinate multiset under (i,j) swap on
    // every generated graph.
    #[test]
    fn generated_pins_and_pinned_mirror_each_other(seed in 0u64..1 << 48) {
        let g = generate_synthetic(&small_spec(seed)).unwrap();
        prop_assert!(validate(&g).is_empty());
        let mut pins: Vec<_> = g
            .adj(EdgeType::Pins)
            .entries()
            .map(|(i, j, v)| (j, i, v.to_bits()))
            .collect();
        let mut pinned: Vec<_> = g
            .adj(EdgeType::Pinned)
            .entries()
            .map(|(i, j, v)| (i, j, v.to_bits()))
            .collect();
        pins.sort_unstable();
        pinned.sort_unstable();
        prop_assert_eq!(pins, pinned);
    }

    // Graph files round-trip bit-exactly and validate the same.
    #[test]
    fn graph_save_load_round_trips(seed in 0u64..1 << 48) {
        let g = generate_synthetic(&small_spec(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        prop_assert_eq!(validate(&back), validate(&g));
        prop_assert!(back.x_cell().bits_eq(g.x_cell()));
        prop_assert!(back.x_net().bits_eq(g.x_net()));
        for e in EdgeType::ALL {
            prop_assert_eq!(back.adj(e), g.adj(e));
        }
        let bits = |l: Option<&[f64]>| l.map(|s| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(bits(back.labels()), bits(g.labels()));
    }

    // Sequential and parallel pipelines agree bit for bit at any worker
    // count, including their backward products. The raw pipeline merges the
    // two cell paths, so both node types need the same width.
    #[test]
    fn pipeline_modes_and_workers_agree(seed in 0u64..1 << 48, k in 2usize..=5) {
        let g = generate_synthetic(&SyntheticSpec {
            d_net: 6,
            ..small_spec(seed)
        })
        .unwrap();
        let reference = {
            let cfg = PipelineConfig::new(PipelineMode::Sequential, 1, k);
            run_pipeline(&g, &cfg).unwrap().0
        };
        for (mode, workers) in [
            (PipelineMode::Sequential, 3),
            (PipelineMode::Parallel, 1),
            (PipelineMode::Parallel, 4),
        ] {
            let cfg = PipelineConfig::new(mode, workers, k);
            let (out, _) = run_pipeline(&g, &cfg).unwrap();
            prop_assert!(out.y_net.bits_eq(&reference.y_net));
            prop_assert!(out.y_cell.bits_eq(&reference.y_cell));
            let (a, b) = (out.grads.as_ref().unwrap(), reference.grads.as_ref().unwrap());
            prop_assert!(a.pins.bits_eq(&b.pins));
            prop_assert!(a.pinned.bits_eq(&b.pinned));
            prop_assert!(a.near.bits_eq(&b.near));
        }
    }
}
