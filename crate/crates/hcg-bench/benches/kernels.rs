//! Kernel microbenches: top-k selection, DR-SpMM forward across keep
//! widths against the dense oracle, and the kept-coordinate backward.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hcg_bench::bench_graph;
use hcg_core::drelu::{cbsr_to_dense, drelu_forward, DreluMode};
use hcg_core::graph::EdgeType;
use hcg_core::kernels::{dr_spmm_backward, dr_spmm_forward, spmm_oracle, LayerTape};
use hcg_core::scheduler::{bucket_rows, build_partition_plan, default_k_by_bucket_for, DEFAULT_THRESHOLDS};
use std::hint::black_box;
use std::sync::Arc;

fn bench_drelu(c: &mut Criterion) {
    let g = bench_graph(0.1);
    let x = g.x_cell();
    let mut group = c.benchmark_group("drelu_forward");
    group.throughput(Throughput::Elements((x.rows() * x.cols()) as u64));
    for k in [8usize, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| drelu_forward(black_box(x), k, DreluMode::Literal).unwrap());
        });
    }
    group.finish();
}

fn bench_forward_k_sweep(c: &mut Criterion) {
    let g = bench_graph(0.1);
    let a = g.adj(EdgeType::Near);
    let buckets = bucket_rows(a, DEFAULT_THRESHOLDS).unwrap();
    let plan =
        build_partition_plan(&buckets, default_k_by_bucket_for(g.d_cell()).unwrap(), g.d_cell())
            .unwrap();
    let mut group = c.benchmark_group("dr_spmm_forward_near");
    group.throughput(Throughput::Elements(a.nnz() as u64));
    for k in [2usize, 8, 32, 64] {
        let h = drelu_forward(g.x_cell(), k, DreluMode::Literal).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &h, |b, h| {
            b.iter(|| dr_spmm_forward(black_box(a), h, &plan, 1).unwrap());
        });
    }
    // The no-compression reference at full width.
    let dense = cbsr_to_dense(&drelu_forward(g.x_cell(), g.d_cell(), DreluMode::Literal).unwrap());
    group.bench_function("dense_oracle", |b| {
        b.iter(|| spmm_oracle(black_box(a), &dense).unwrap());
    });
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let g = bench_graph(0.1);
    let a = g.adj(EdgeType::Near);
    let buckets = bucket_rows(a, DEFAULT_THRESHOLDS).unwrap();
    let plan =
        build_partition_plan(&buckets, default_k_by_bucket_for(g.d_cell()).unwrap(), g.d_cell())
            .unwrap();
    let h = Arc::new(drelu_forward(g.x_cell(), 8, DreluMode::Literal).unwrap());
    let dy = dr_spmm_forward(a, &h, &plan, 1).unwrap();
    let mut tape = LayerTape::default();
    tape.record(EdgeType::Near, Arc::clone(&h), a);
    let a_t = g.adj_t(EdgeType::Near);

    let mut group = c.benchmark_group("dr_spmm_backward_near");
    group.throughput(Throughput::Elements(a.nnz() as u64));
    group.bench_function("k8", |b| {
        b.iter(|| dr_spmm_backward(black_box(a_t), &dy, &tape, EdgeType::Near, 1).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_drelu, bench_forward_k_sweep, bench_backward);
criterion_main!(benches);
