//! Exact average-linkage agglomerative clustering over a dense
//! dissimilarity matrix.
//!
//! Clusters live in slots named after their smallest member index. Each
//! step merges the closest pair of active slots; among equally close pairs
//! the lexicographically smallest `(a, b)` slot pair wins. Merging `b` into
//! `a` (with `a < b`) keeps the slot naming invariant.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::scalar::Scalar;

/// When agglomeration stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule<T> {
    /// Merge until exactly this many clusters remain.
    ClusterCount(usize),
    /// Merge while the closest pair is at most this far apart.
    MaxDistance(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge<T> {
    /// Surviving slot (smallest member of the merged cluster).
    pub a: usize,
    /// Absorbed slot.
    pub b: usize,
    pub distance: T,
    /// Size of the merged cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration<T> {
    /// Clusters ordered by smallest member; members ascending.
    pub clusters: Vec<Vec<usize>>,
    pub merges: Vec<Merge<T>>,
}

/// Symmetric `n x n` matrix stored in full.
#[derive(Debug, Clone)]
pub struct DistanceMatrix<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Evaluates `f(i, j)` for every `i < j`. Rows are filled in parallel;
    /// the result does not depend on scheduling.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T + Sync) -> Self {
        let mut values = vec![T::zero(); n * n];
        values
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = match i.cmp(&j) {
                        std::cmp::Ordering::Less => f(i, j),
                        std::cmp::Ordering::Greater => f(j, i),
                        std::cmp::Ordering::Equal => T::zero(),
                    };
                }
            });
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }
}

/// Closest active slot after `i` (smallest index on ties).
fn row_nearest<T: Scalar>(
    dist: &DistanceMatrix<T>,
    active: &[bool],
    i: usize,
) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (j, _) in active.iter().enumerate().skip(i + 1).filter(|(_, &on)| on) {
        let d = dist.get(i, j);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Runs average-linkage agglomeration until `stop` says otherwise.
pub fn average_linkage<T: Scalar>(
    mut dist: DistanceMatrix<T>,
    stop: StopRule<T>,
) -> Agglomeration<T> {
    let n = dist.n;
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];
    let mut remaining = n;
    let mut merges = Vec::new();
    // nearest[i]: closest active slot j > i; scanning rows in order then
    // gives the same pair as scanning all (i, j) lexicographically.
    let mut nearest: Vec<Option<(usize, T)>> =
        (0..n).map(|i| row_nearest(&dist, &active, i)).collect();

    loop {
        if let StopRule::ClusterCount(k) = stop {
            if remaining <= k.max(1) {
                break;
            }
        }
        if remaining < 2 {
            break;
        }
        let mut best: Option<(usize, usize, T)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            if let Some((j, d)) = nearest[i] {
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (a, b, d) = best.expect("at least two active clusters");
        if let StopRule::MaxDistance(limit) = stop {
            if d > limit {
                break;
            }
        }

        let na = T::from_usize(members[a].len()).unwrap();
        let nb = T::from_usize(members[b].len()).unwrap();
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let (da, db) = (dist.get(k, a), dist.get(k, b));
            // The weighted mean lies between its inputs; clamping removes
            // rounding drift so merge distances stay exactly monotone.
            let mixed = ((na * da + nb * db) / (na + nb))
                .max(da.min(db))
                .min(da.max(db));
            dist.set(k, a, mixed);
        }
        let absorbed = std::mem::take(&mut members[b]);
        members[a].extend(absorbed);
        members[a].sort_unstable();
        active[b] = false;
        nearest[b] = None;
        remaining -= 1;
        merges.push(Merge {
            a,
            b,
            distance: d,
            size: members[a].len(),
        });

        nearest[a] = row_nearest(&dist, &active, a);
        for k in (0..n).filter(|&k| active[k] && k != a) {
            match nearest[k] {
                Some((j, _)) if j == a || j == b => nearest[k] = row_nearest(&dist, &active, k),
                Some((j, bd)) if k < a => {
                    let da = dist.get(k, a);
                    if da < bd || (da == bd && a < j) {
                        nearest[k] = Some((a, da));
                    }
                }
                _ => {}
            }
        }
    }

    Agglomeration {
        clusters: (0..n)
            .filter(|&s| active[s])
            .map(|s| members[s].clone())
            .collect(),
        merges,
    }
}

/// Tab-separated merge table: step, surviving slot, absorbed slot,
/// distance, merged size.
pub fn merge_table<T: Scalar>(merges: &[Merge<T>]) -> String {
    let mut out = String::from("step\ta\tb\tdistance\tsize\n");
    for (step, m) in merges.iter().enumerate() {
        let _ = writeln!(out, "{step}\t{}\t{}\t{}\t{}", m.a, m.b, m.distance, m.size);
    }
    out
}
