//! Regression and rank metrics for per-cell predictions.
//!
//! Spearman uses average ranks for ties; Kendall is the tau-b variant with
//! the standard tie corrections, computed by sorting plus merge-sort
//! inversion counting rather than the quadratic pair scan.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::SCHEMA_VERSION;

/// Scores of one prediction vector against its labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
    pub kendall_tau: f64,
    pub mae: f64,
    pub rmse: f64,
    /// True when either side was constant, which leaves the correlations
    /// undefined; they are reported as zero.
    pub degenerate: bool,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "metric inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(ModelError::TooFewSamples(x.len()));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(ModelError::ShapeMismatch(format!(
            "metric inputs must be finite, found {v}"
        )));
    }
    Ok(())
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, ModelError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Ranks with ties averaged: values `[3, 1, 3]` rank as `[2.5, 1, 2.5]`.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite inputs"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either rank vector is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, ModelError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Counts pairs `(i < j)` with `v[i] > v[j]` by iterative merge sort.
fn count_inversions(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    let mut buf = vec![0.0; n];
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo + width < n {
            let mid = lo + width;
            let hi = (mid + width).min(n);
            let (mut i, mut j, mut out) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[i] <= v[j] {
                    buf[out] = v[i];
                    i += 1;
                } else {
                    // v[i] > v[j]: everything left in the left run beats v[j].
                    inversions += (mid - i) as u64;
                    buf[out] = v[j];
                    j += 1;
                }
                out += 1;
            }
            buf[out..out + (mid - i)].copy_from_slice(&v[i..mid]);
            let out = out + (mid - i);
            buf[out..out + (hi - j)].copy_from_slice(&v[j..hi]);
            v[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    inversions
}

/// Sum over equal-value runs of `t * (t - 1) / 2`, the number of tied pairs.
fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as u64;
        total += t * (t - 1) / 2;
        i = j + 1;
    }
    total
}

/// Kendall tau-b; `None` when either side is fully tied.
///
/// With pairs sorted by `(x, y)`, the inversion count of the `y` sequence
/// is exactly the number of discordant pairs `Q`, since pairs tied in `x`
/// were pre-sorted by `y` and contribute nothing. With `n0` total pairs,
/// `n1`/`n2` pairs tied in `x`/`y` and `n3` tied in both,
/// `P - Q = n0 - n1 - n2 + n3 - 2 Q`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<Option<f64>, ModelError> {
    check_pair(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .expect("finite inputs")
            .then(y[a].partial_cmp(&y[b]).expect("finite inputs"))
    });

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let run: Vec<f64> = order[i..=j].iter().map(|&idx| y[idx]).collect();
        let t = (j - i + 1) as u64;
        n1 += t * (t - 1) / 2;
        n3 += tied_pairs(&run);
        i = j + 1;
    }

    let mut y_seq: Vec<f64> = order.iter().map(|&idx| y[idx]).collect();
    let q = count_inversions(&mut y_seq);
    // y_seq is now fully sorted, ready for the y-tie count.
    let n2 = tied_pairs(&y_seq);

    if n0 == n1 || n0 == n2 {
        return Ok(None);
    }
    let p_minus_q = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * q as i64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(Some(p_minus_q as f64 / denom))
}

/// Mean absolute error.
pub fn mae(prediction: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    check_pair(prediction, labels)?;
    Ok(prediction
        .iter()
        .zip(labels)
        .map(|(&p, &l)| (p - l).abs())
        .sum::<f64>()
        / prediction.len() as f64)
}

/// Root mean squared error.
pub fn rmse(prediction: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    check_pair(prediction, labels)?;
    Ok((prediction
        .iter()
        .zip(labels)
        .map(|(&p, &l)| (p - l) * (p - l))
        .sum::<f64>()
        / prediction.len() as f64)
        .sqrt())
}

/// All metrics of one prediction vector at once.
pub fn score(prediction: &[f64], labels: &[f64]) -> Result<MetricsReport, ModelError> {
    let p = pearson(prediction, labels)?;
    let s = spearman(prediction, labels)?;
    let k = kendall_tau_b(prediction, labels)?;
    let degenerate = p.is_none() || s.is_none() || k.is_none();
    Ok(MetricsReport {
        schema_version: SCHEMA_VERSION,
        n: prediction.len(),
        pearson: p.unwrap_or(0.0),
        spearman: s.unwrap_or(0.0),
        kendall_tau: k.unwrap_or(0.0),
        mae: mae(prediction, labels)?,
        rmse: rmse(prediction, labels)?,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic pair scan, the definition of tau-b.
    fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                } else if dx == 0.0 {
                    tx += 1;
                } else if dy == 0.0 {
                    ty += 1;
                } else if dx * dy > 0.0 {
                    p += 1;
                } else {
                    q += 1;
                }
            }
        }
        let da = (p + q + ty) as f64;
        let db = (p + q + tx) as f64;
        if da == 0.0 || db == 0.0 {
            return None;
        }
        Some((p - q) as f64 / (da * db).sqrt())
    }

    /// Quadratic rank assignment: a tied group of size `e` preceded by `b`
    /// smaller values occupies ranks `b+1 ..= b+e`, averaging `b + (e+1)/2`.
    fn ranks_oracle(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let below = x.iter().filter(|&&w| w < v).count() as f64;
                let equal = x.iter().filter(|&&w| w == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn noisy_pair(seed: u64, n: usize, quantize: bool) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b = 0.7 * a + rng.random_range(-1.0..1.0);
            if quantize {
                x.push((a * 2.0).round() / 2.0);
                y.push((b * 2.0).round() / 2.0);
            } else {
                x.push(a);
                y.push(b);
            }
        }
        (x, y)
    }

    #[test]
    fn pearson_matches_hand_computation() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let z = [-2.0, -4.0, -6.0, -8.0];
        assert!((pearson(&x, &z).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let c = [5.0, 5.0, 5.0, 5.0];
        assert_eq!(pearson(&x, &c).unwrap(), None);
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(
            average_ranks(&[10.0, 20.0, 20.0, 30.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        for seed in 0..5 {
            let (x, _) = noisy_pair(seed, 101, true);
            let fast = average_ranks(&x);
            let slow = ranks_oracle(&x);
            assert!(fast
                .iter()
                .zip(&slow)
                .all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn spearman_is_one_for_monotone_transforms() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 3.0 - 5.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_matches_quadratic_oracle_with_and_without_ties() {
        for seed in 0..8 {
            for quantize in [false, true] {
                let (x, y) = noisy_pair(seed, 157, quantize);
                let fast = kendall_tau_b(&x, &y).unwrap();
                let slow = kendall_oracle(&x, &y);
                match (fast, slow) {
                    (Some(a), Some(b)) => {
                        assert!((a - b).abs() < 1e-12, "seed {seed} quantize {quantize}")
                    }
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }

    #[test]
    fn kendall_known_small_cases() {
        let x = [1.0, 2.0, 3.0];
        assert!((kendall_tau_b(&x, &[1.0, 2.0, 3.0]).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((kendall_tau_b(&x, &[3.0, 2.0, 1.0]).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(kendall_tau_b(&x, &[7.0, 7.0, 7.0]).unwrap(), None);
    }

    #[test]
    fn error_metrics_match_hand_values() {
        let p = [1.0, 2.0, 3.0];
        let l = [2.0, 2.0, 1.0];
        assert!((mae(&p, &l).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&p, &l).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(
            score(&[1.0], &[1.0]),
            Err(ModelError::TooFewSamples(1))
        ));
        assert!(matches!(
            score(&[1.0, 2.0], &[1.0]),
            Err(ModelError::ShapeMismatch(_))
        ));
        assert!(score(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
        let r = score(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.pearson, 0.0);
    }
}
