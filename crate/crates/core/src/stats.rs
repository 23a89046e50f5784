//! Mann-Whitney U test.

use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("both samples must be nonempty")]
    EmptySample,
    #[error("samples must not contain NaN")]
    NaN,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
/// Also returns `sum(t^3 - t)` over tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Rank-sum U for `a` against `b` with a two-sided p-value from the normal
/// approximation, using tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(StatsError::NaN);
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let joined: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&joined);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;

    let n = n1 + n2;
    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney { u, p_value })
}
