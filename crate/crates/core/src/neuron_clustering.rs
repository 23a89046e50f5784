//! Groups the neurons of each mutable layer into `ceil(n / s)` clusters of
//! similar weight/bias vectors.

use rayon::prelude::*;

use crate::hac::{self, Agglomeration, DistanceMatrix, Merge, StopRule};
use crate::model::{Model, ModelError};
use crate::scalar::{euclidean, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusteringError {
    #[error("no neurons to cluster")]
    Empty,
    #[error("neurons per cluster must be at least 1")]
    ZeroPerCluster,
    #[error("feature vector {index} has length {actual}, expected {expected}")]
    Ragged {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("model has no mutable layers")]
    NoMutableLayers,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Clusters of one mutable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerClusters<T = f64> {
    pub layer_idx: usize,
    pub neuron_count: usize,
    /// Disjoint, covering; each sorted ascending, ordered by first member.
    pub clusters: Vec<Vec<usize>>,
    /// Merge trace that produced `clusters` (empty for hand-built values).
    pub merges: Vec<Merge<T>>,
}

/// Per-layer neuron partition.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronClustering<T = f64> {
    pub neurons_per_cluster: usize,
    pub layers: Vec<LayerClusters<T>>,
}

/// `ceil(n / s)`.
pub fn target_cluster_count(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

/// Euclidean average-linkage clustering of `features` into `ceil(n / s)`
/// clusters.
pub fn cluster_layer<T: Scalar>(
    features: &[Vec<T>],
    s: usize,
) -> Result<Agglomeration<T>, ClusteringError> {
    if s == 0 {
        return Err(ClusteringError::ZeroPerCluster);
    }
    let first = features.first().ok_or(ClusteringError::Empty)?;
    if let Some((index, f)) = features
        .iter()
        .enumerate()
        .find(|(_, f)| f.len() != first.len())
    {
        return Err(ClusteringError::Ragged {
            index,
            expected: first.len(),
            actual: f.len(),
        });
    }
    let dist =
        DistanceMatrix::from_fn(features.len(), |i, j| euclidean(&features[i], &features[j]));
    Ok(hac::average_linkage(
        dist,
        StopRule::ClusterCount(target_cluster_count(features.len(), s)),
    ))
}

/// Clusters every mutable layer of `model` on its neuron parameter vectors.
pub fn cluster_model<T: Scalar>(
    model: &Model<T>,
    s: usize,
) -> Result<NeuronClustering<T>, ClusteringError> {
    if s == 0 {
        return Err(ClusteringError::ZeroPerCluster);
    }
    let mutable = model.mutable_layers();
    if mutable.is_empty() {
        return Err(ClusteringError::NoMutableLayers);
    }
    let layers = mutable
        .par_iter()
        .map(|&(layer_idx, neuron_count)| {
            let features = (0..neuron_count)
                .map(|j| model.neuron_param_vector(layer_idx, j))
                .collect::<Result<Vec<_>, _>>()?;
            let agg = cluster_layer(&features, s)?;
            Ok(LayerClusters {
                layer_idx,
                neuron_count,
                clusters: agg.clusters,
                merges: agg.merges,
            })
        })
        .collect::<Result<Vec<_>, ClusteringError>>()?;
    Ok(NeuronClustering {
        neurons_per_cluster: s,
        layers,
    })
}

impl<T: Scalar> NeuronClustering<T> {
    pub fn total_clusters(&self) -> usize {
        self.layers.iter().map(|l| l.clusters.len()).sum()
    }

    /// Cluster count per layer, in layer order.
    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.clusters.len()).collect()
    }

    /// Debug dump: one merge table per layer.
    pub fn dendrogram_dump(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            out.push_str(&format!(
                "# layer {} ({} neurons)\n",
                l.layer_idx, l.neuron_count
            ));
            out.push_str(&hac::merge_table(&l.merges));
        }
        out
    }
}

/// True when `clusters` is a partition of `0..n` into nonempty parts.
pub fn is_partition(clusters: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for c in clusters {
        if c.is_empty() {
            return false;
        }
        for &i in c {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActivationKind, Dense, LayerSpec};
    use proptest::prelude::*;

    /// Smallest total within-cluster pairwise distance over all 2-partitions.
    fn best_two_partition(points: &[f64]) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut best = (f64::INFINITY, 0u32);
        // fix point 0 in the first part to skip mirrored masks
        for mask in 0..(1u32 << (n - 1)) {
            let mask = mask << 1;
            if mask == 0 {
                continue;
            }
            let mut cost = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    if (mask >> i) & 1 == (mask >> j) & 1 {
                        cost += (points[i] - points[j]).abs();
                    }
                }
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        let a: Vec<usize> = (0..n).filter(|i| (best.1 >> i) & 1 == 0).collect();
        let b: Vec<usize> = (0..n).filter(|i| (best.1 >> i) & 1 == 1).collect();
        vec![a, b]
    }

    #[test]
    fn one_dimensional_pairs() {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let oracle = best_two_partition(&pts);
        assert_eq!(oracle, vec![vec![0, 1], vec![2, 3]]);
        let features: Vec<Vec<f64>> = pts.iter().map(|&p| vec![p]).collect();
        assert_eq!(cluster_layer(&features, 2).unwrap().clusters, oracle);
    }

    #[test]
    fn counts_for_fifty_neurons() {
        let features: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin(), i as f64])
            .collect();
        let singles = cluster_layer(&features, 1).unwrap();
        assert_eq!(singles.clusters.len(), 50);
        assert!(singles.clusters.iter().all(|c| c.len() == 1));
        assert_eq!(cluster_layer(&features, 7).unwrap().clusters.len(), 8);
        assert_eq!(
            cluster_layer(&features, 60).unwrap().clusters,
            vec![(0..50).collect::<Vec<_>>()]
        );
    }

    #[test]
    fn input_errors() {
        assert_eq!(cluster_layer::<f64>(&[], 2), Err(ClusteringError::Empty));
        assert_eq!(
            cluster_layer(&[vec![1.0], vec![1.0, 2.0]], 1),
            Err(ClusteringError::Ragged {
                index: 1,
                expected: 1,
                actual: 2
            })
        );
        assert_eq!(
            cluster_layer(&[vec![1.0]], 0),
            Err(ClusteringError::ZeroPerCluster)
        );
    }

    #[test]
    fn model_without_mutable_layers() {
        let m = Model::<f64>::new(
            vec![3],
            3,
            vec![LayerSpec::Activation(ActivationKind::Softmax)],
        )
        .unwrap();
        assert_eq!(cluster_model(&m, 2), Err(ClusteringError::NoMutableLayers));
    }

    #[test]
    fn dump_lists_layers() {
        let m = Model::<f64>::new(
            vec![1],
            3,
            vec![
                LayerSpec::Dense(Dense::new(1, 3, vec![0.0, 1.0, 5.0], vec![0.0; 3])),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        let c = cluster_model(&m, 2).unwrap();
        assert_eq!(c.counts(), vec![2]);
        assert_eq!(c.layers[0].clusters, vec![vec![0, 1], vec![2]]);
        let dump = c.dendrogram_dump();
        assert!(
            dump.starts_with("# layer 0 (3 neurons)\nstep\ta\tb\tdistance\tsize\n0\t0\t1\t1\t2\n")
        );
    }

    proptest! {
        #[test]
        fn partition_laws(
            n in 1usize..40,
            dim in 1usize..5,
            s in 1usize..12,
            seed in any::<u64>(),
        ) {
            let mut x = seed | 1;
            let mut next = move || {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                (x % 2001) as f64 / 1000.0 - 1.0
            };
            let features: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| next()).collect()).collect();
            let agg = cluster_layer(&features, s).unwrap();
            let k = target_cluster_count(n, s);
            prop_assert_eq!(agg.clusters.len(), k);
            prop_assert!(is_partition(&agg.clusters, n));
            for c in &agg.clusters {
                prop_assert!(!c.is_empty() && c.len() <= n - k + 1);
            }
            for w in agg.merges.windows(2) {
                prop_assert!(w[0].distance <= w[1].distance);
            }
            prop_assert_eq!(&cluster_layer(&features, s).unwrap(), &agg);
        }
    }
}
