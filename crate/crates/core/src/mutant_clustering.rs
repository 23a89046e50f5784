//! Clusters generated mutants by where and how they mutate the model, then
//! picks one seeded random representative per cluster.
//!
//! Every mutant becomes a feature vector `[layer, neuron, w_1..w_K, bias]`
//! holding the mutated parameters, zero-padded to the model-wide maximum
//! fan-in `K`. Pairwise similarity is `1 / (1 + d)` with `d` the Euclidean
//! distance, so identical mutants have similarity 1. Agglomeration uses
//! average linkage over similarities and merges while the best pair is at
//! least as similar as the threshold.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hac::{self, DistanceMatrix, Merge, StopRule};
use crate::model::{Model, ModelError};
use crate::mutation::Mutant;
use crate::scalar::{euclidean, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutantClusteringError {
    #[error("mutant {id} targets {count} neurons; mutant clustering needs single-neuron mutants")]
    MultiNeuronTarget { id: usize, count: usize },
    #[error("feature lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("linkage threshold {0} must lie in (0, 1]")]
    Threshold(f64),
    #[error("similarity between {a} and {b} is {value}, outside (0, 1]")]
    BadSimilarity { a: usize, b: usize, value: f64 },
    #[error("partition is not a covering of 0..{0} by disjoint nonempty clusters")]
    BadPartition(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `[layer, neuron, weights (zero-padded), bias]` of a mutated neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct MutantFeature<T = f64>(pub Vec<T>);

impl<T> MutantFeature<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Feature vector of a single-neuron mutant, using post-mutation values.
pub fn mutant_feature<T: Scalar>(
    model: &Model<T>,
    mutant: &Mutant,
) -> Result<MutantFeature<T>, MutantClusteringError> {
    let target = &mutant.spec.target;
    let neuron = target
        .as_single()
        .ok_or(MutantClusteringError::MultiNeuronTarget {
            id: mutant.id,
            count: target.neurons().len(),
        })?;
    let layer = target.layer_idx();
    let mut params = model.neuron_param_vector(layer, neuron)?;
    let mutated = crate::mutation::materialize_params(&mutant.spec.kind, &mut params);
    let fan_in = mutated.len() - 1;
    let width = model.max_fan_in();
    let mut v = Vec::with_capacity(width + 3);
    v.push(T::from_usize(layer).unwrap());
    v.push(T::from_usize(neuron).unwrap());
    v.extend_from_slice(&mutated[..fan_in]);
    v.resize(2 + width, T::zero());
    v.push(mutated[fan_in]);
    Ok(MutantFeature(v))
}

/// `1 / (1 + euclidean(a, b))`.
pub fn similarity<T: Scalar>(
    a: &MutantFeature<T>,
    b: &MutantFeature<T>,
) -> Result<T, MutantClusteringError> {
    if a.0.len() != b.0.len() {
        return Err(MutantClusteringError::LengthMismatch(a.0.len(), b.0.len()));
    }
    Ok(T::one() / (T::one() + euclidean(&a.0, &b.0)))
}

/// Complete weighted graph over mutants.
#[derive(Debug, Clone)]
pub struct SimilarityGraph<T = f64> {
    sims: DistanceMatrix<T>,
}

impl<T: Scalar> SimilarityGraph<T> {
    pub fn from_features(features: &[MutantFeature<T>]) -> Result<Self, MutantClusteringError> {
        if let Some(f) = features.iter().find(|f| f.0.len() != features[0].0.len()) {
            return Err(MutantClusteringError::LengthMismatch(
                features[0].0.len(),
                f.0.len(),
            ));
        }
        Ok(Self {
            sims: DistanceMatrix::from_fn(features.len(), |i, j| {
                T::one() / (T::one() + euclidean(&features[i].0, &features[j].0))
            }),
        })
    }

    /// Graph from an explicit similarity function, evaluated for `i < j`.
    pub fn from_fn(
        n: usize,
        f: impl Fn(usize, usize) -> T + Sync,
    ) -> Result<Self, MutantClusteringError> {
        let sims = DistanceMatrix::from_fn(n, f);
        for a in 0..n {
            for b in a + 1..n {
                let v = sims.get(a, b);
                if !(v > T::zero() && v <= T::one()) {
                    return Err(MutantClusteringError::BadSimilarity {
                        a,
                        b,
                        value: v.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(Self { sims })
    }

    pub fn len(&self) -> usize {
        self.sims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sims.is_empty()
    }

    pub fn similarity(&self, a: usize, b: usize) -> T {
        if a == b {
            T::one()
        } else {
            self.sims.get(a, b)
        }
    }

    /// Largest similarity between two distinct nodes.
    pub fn max_similarity(&self) -> Option<T> {
        let n = self.len();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .map(|(a, b)| self.sims.get(a, b))
            .reduce(T::max)
    }
}

/// Result of [`cluster_mutants`].
#[derive(Debug, Clone, PartialEq)]
pub struct MutantPartition<T = f64> {
    /// Ordered by smallest member; members ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Merge trace; `distance` holds the merge similarity.
    pub merges: Vec<Merge<T>>,
}

/// Average-linkage agglomeration that merges the most similar pair of
/// clusters while that similarity is at least `threshold`.
pub fn cluster_mutants<T: Scalar>(
    graph: &SimilarityGraph<T>,
    threshold: f64,
) -> Result<MutantPartition<T>, MutantClusteringError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MutantClusteringError::Threshold(threshold));
    }
    // Negated similarities turn "most similar" into "closest"; negation is
    // exact so averages and ties are unchanged.
    let n = graph.len();
    let dissim = DistanceMatrix::from_fn(n, |i, j| -graph.sims.get(i, j));
    let agg = hac::average_linkage(dissim, StopRule::MaxDistance(-T::from_f64_lossy(threshold)));
    Ok(MutantPartition {
        clusters: agg.clusters,
        merges: agg
            .merges
            .into_iter()
            .map(|m| Merge {
                distance: -m.distance,
                ..m
            })
            .collect(),
    })
}

/// Clusters with one representative each.
#[derive(Debug, Clone, PartialEq)]
pub struct MutantClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub representatives: Vec<usize>,
    pub threshold: f64,
    pub seed: u64,
}

/// Picks one member of every cluster uniformly at random from a generator
/// seeded with `seed`. Singleton clusters consume no randomness.
pub fn select_representatives(
    clusters: Vec<Vec<usize>>,
    threshold: f64,
    seed: u64,
) -> Result<MutantClusterSet, MutantClusteringError> {
    let n: usize = clusters.iter().map(Vec::len).sum();
    if !crate::neuron_clustering::is_partition(&clusters, n) {
        return Err(MutantClusteringError::BadPartition(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let representatives = clusters
        .iter()
        .map(|c| match c.as_slice() {
            [only] => *only,
            _ => c[rng.random_range(0..c.len())],
        })
        .collect();
    Ok(MutantClusterSet {
        clusters,
        representatives,
        threshold,
        seed,
    })
}

impl MutantClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Audit table: cluster id, members (space separated), representative.
    pub fn dump(&self) -> String {
        let mut out = String::from("cluster\tmembers\trepresentative\n");
        for (i, (c, r)) in self.clusters.iter().zip(&self.representatives).enumerate() {
            let members: Vec<String> = c.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{i}\t{}\t{r}", members.join(" "));
        }
        out
    }
}
