//! Degree-aware scheduling: bucket rows, derive per-row task splits, profile
//! keep-widths and run the three edge types as one overlapped pipeline.

mod pipeline;
mod profile;

pub use pipeline::{
    run_pipeline, EdgePhaseTimes, PipelineConfig, PipelineGrads, PipelineMode, PipelineOutputs,
    PipelineReport,
};
pub use profile::{profile_k, EdgeKChoice, KProfile, SweepSample};

use crate::error::SchedulerError;
use crate::graph::CsrAdjacency;
use serde::{Deserialize, Serialize};

/// Warp width of the accelerator this scheduling model mirrors; a row in a
/// bucket with split width `K` becomes `ceil(32 / K)` tasks.
pub const WARP_SIZE: usize = 32;

/// Default `(low_max, med_max)` degree thresholds.
pub const DEFAULT_THRESHOLDS: (usize, usize) = (32, 128);

/// Default `(K1, K2, K3)` split widths for Low/Medium/High buckets.
pub const DEFAULT_K_BY_BUCKET: (usize, usize, usize) = (32, 16, 8);

/// Degree class of one destination row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bucket {
    Low,
    Medium,
    High,
}

/// Row-to-bucket assignment for one adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeBuckets {
    low_max: usize,
    med_max: usize,
    buckets: Vec<Bucket>,
}

impl DegreeBuckets {
    pub fn bucket(&self, row: usize) -> Bucket {
        self.buckets[row]
    }

    pub fn num_rows(&self) -> usize {
        self.buckets.len()
    }

    pub fn thresholds(&self) -> (usize, usize) {
        (self.low_max, self.med_max)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for b in &self.buckets {
            match b {
                Bucket::Low => c.0 += 1,
                Bucket::Medium => c.1 += 1,
                Bucket::High => c.2 += 1,
            }
        }
        c
    }
}

/// Classifies rows by degree: `deg <= low_max` is Low, `deg <= med_max` is
/// Medium, anything above is High.
pub fn bucket_rows(
    a: &CsrAdjacency,
    thresholds: (usize, usize),
) -> Result<DegreeBuckets, SchedulerError> {
    let (low_max, med_max) = thresholds;
    if low_max == 0 || low_max >= med_max {
        return Err(SchedulerError::BadThresholds { low_max, med_max });
    }
    let buckets = (0..a.num_rows())
        .map(|r| {
            let d = a.degree(r);
            if d <= low_max {
                Bucket::Low
            } else if d <= med_max {
                Bucket::Medium
            } else {
                Bucket::High
            }
        })
        .collect();
    Ok(DegreeBuckets {
        low_max,
        med_max,
        buckets,
    })
}

/// One execution task: a destination row restricted to a run of output
/// columns `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTask {
    pub row: usize,
    pub start: usize,
    pub len: usize,
}

/// Per-row task decomposition of a forward product against one adjacency.
///
/// A row in a bucket with split width `K` is cut into `ceil(32 / K)` tasks
/// whose column runs are disjoint and cover `[0, dim)` as evenly as
/// possible. Tasks of distinct rows, and tasks of the same row, all write
/// disjoint output cells, so any execution order yields identical bits.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    num_rows: usize,
    dim: usize,
    k_by_bucket: (usize, usize, usize),
    tasks: Vec<RowTask>,
    row_offsets: Vec<usize>,
}

impl PartitionPlan {
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_by_bucket(&self) -> (usize, usize, usize) {
        self.k_by_bucket
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Tasks of one row, in ascending `start` order.
    pub fn row_tasks(&self, row: usize) -> &[RowTask] {
        &self.tasks[self.row_offsets[row]..self.row_offsets[row + 1]]
    }

    pub fn tasks(&self) -> &[RowTask] {
        &self.tasks
    }
}

/// Largest `(K1, K2, K3)` with `K1 > K2 > K3 >= 1` that fits `dim`, walking
/// down from the `(32, 16, 8)` default. Needs `dim >= 3`.
pub fn default_k_by_bucket_for(dim: usize) -> Result<(usize, usize, usize), SchedulerError> {
    if dim < 3 {
        return Err(SchedulerError::BadBucketK {
            k1: DEFAULT_K_BY_BUCKET.0,
            k2: DEFAULT_K_BY_BUCKET.1,
            k3: DEFAULT_K_BY_BUCKET.2,
            dim,
        });
    }
    let k1 = DEFAULT_K_BY_BUCKET.0.min(dim);
    let k2 = DEFAULT_K_BY_BUCKET.1.min(k1 / 2).max(2);
    let k3 = DEFAULT_K_BY_BUCKET.2.min(k2 / 2).max(1);
    debug_assert!(k1 > k2 && k2 > k3);
    Ok((k1, k2, k3))
}

fn tasks_for_split_width(k: usize) -> usize {
    WARP_SIZE.div_ceil(k)
}

/// Builds the task decomposition for every row of a bucketed adjacency.
pub fn build_partition_plan(
    buckets: &DegreeBuckets,
    k_by_bucket: (usize, usize, usize),
    dim: usize,
) -> Result<PartitionPlan, SchedulerError> {
    let (k1, k2, k3) = k_by_bucket;
    if !(k1 > k2 && k2 > k3 && k3 >= 1 && k1 <= dim) {
        return Err(SchedulerError::BadBucketK { k1, k2, k3, dim });
    }
    let num_rows = buckets.num_rows();
    let mut tasks = Vec::new();
    let mut row_offsets = Vec::with_capacity(num_rows + 1);
    row_offsets.push(0);
    for row in 0..num_rows {
        let k = match buckets.bucket(row) {
            Bucket::Low => k1,
            Bucket::Medium => k2,
            Bucket::High => k3,
        };
        let parts = tasks_for_split_width(k);
        let base = dim / parts;
        let extra = dim % parts;
        let mut start = 0;
        for p in 0..parts {
            let len = base + usize::from(p < extra);
            tasks.push(RowTask { row, start, len });
            start += len;
        }
        debug_assert_eq!(start, dim);
        row_offsets.push(tasks.len());
    }
    Ok(PartitionPlan {
        num_rows,
        dim,
        k_by_bucket,
        tasks,
        row_offsets,
    })
}
