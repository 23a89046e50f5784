//! Model-level mutators and mutant generation.
//!
//! A mutant is stored as an `(id, spec)` pair and materialized on demand.

use std::fmt;

use crate::model::{Model, ModelError};
use crate::neuron_clustering::{is_partition, NeuronClustering};
use crate::scalar::Scalar;

/// Fraction used by [`MutatorKind::ChangeWeights`] unless overridden.
pub const DEFAULT_CHANGE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MutatorKind {
    /// Scales every targeted weight and bias by `1 + fraction`.
    ChangeWeights { fraction: f64 },
    /// Sets every targeted weight and bias to zero.
    NeuronBlock,
    /// Negates every targeted weight and bias.
    NeuronInverse,
}

impl MutatorKind {
    pub fn change_weights(fraction: f64) -> Result<Self, MutationError> {
        if !fraction.is_finite() || fraction <= -1.0 || fraction == 0.0 {
            return Err(MutationError::InvalidFraction(fraction));
        }
        Ok(Self::ChangeWeights { fraction })
    }

    /// The three operators in generation order.
    pub fn all(fraction: f64) -> Result<[Self; 3], MutationError> {
        Ok([
            Self::change_weights(fraction)?,
            Self::NeuronBlock,
            Self::NeuronInverse,
        ])
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ChangeWeights { .. } => "change_weights",
            Self::NeuronBlock => "neuron_block",
            Self::NeuronInverse => "neuron_inverse",
        }
    }

    fn apply<T: Scalar>(&self, v: T) -> T {
        match *self {
            Self::ChangeWeights { fraction } => v * T::from_f64_lossy(1.0 + fraction),
            Self::NeuronBlock => T::zero(),
            Self::NeuronInverse => -v,
        }
    }
}

impl fmt::Display for MutatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ChangeWeights { fraction } => write!(f, "change_weights({fraction})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A set of neurons in one mutable layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetGroup {
    layer_idx: usize,
    neuron_indices: Vec<usize>,
}

impl TargetGroup {
    /// Indices are sorted; duplicates and empty sets are rejected.
    pub fn new(layer_idx: usize, mut neuron_indices: Vec<usize>) -> Result<Self, MutationError> {
        if neuron_indices.is_empty() {
            return Err(MutationError::EmptyTarget);
        }
        neuron_indices.sort_unstable();
        if let Some(w) = neuron_indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(MutationError::DuplicateNeuron(w[0]));
        }
        Ok(Self {
            layer_idx,
            neuron_indices,
        })
    }

    pub fn single(layer_idx: usize, neuron: usize) -> Self {
        Self {
            layer_idx,
            neuron_indices: vec![neuron],
        }
    }

    pub fn layer_idx(&self) -> usize {
        self.layer_idx
    }

    pub fn neurons(&self) -> &[usize] {
        &self.neuron_indices
    }

    /// The neuron index when the group has exactly one member.
    pub fn as_single(&self) -> Option<usize> {
        match self.neuron_indices.as_slice() {
            [n] => Some(*n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationSpec {
    pub kind: MutatorKind,
    pub target: TargetGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutant {
    pub id: usize,
    pub spec: MutationSpec,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutationError {
    #[error("model has no mutable neurons")]
    NoMutableNeurons,
    #[error("change-weights fraction {0} must be finite, > -1 and nonzero")]
    InvalidFraction(f64),
    #[error("target group is empty")]
    EmptyTarget,
    #[error("neuron {0} listed twice in target group")]
    DuplicateNeuron(usize),
    #[error("clustering does not match model: {0}")]
    ClusteringMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn number(specs: impl Iterator<Item = MutationSpec>) -> Vec<Mutant> {
    specs
        .enumerate()
        .map(|(id, spec)| Mutant { id, spec })
        .collect()
}

/// Three mutants per mutable neuron with the default change fraction.
pub fn generate_vanilla_mutants<T: Scalar>(model: &Model<T>) -> Result<Vec<Mutant>, MutationError> {
    generate_vanilla_mutants_with(model, DEFAULT_CHANGE_FRACTION)
}

/// Three mutants per mutable neuron, ordered by layer, neuron, then
/// operator (change weights, block, inverse). Ids run `0..len`.
pub fn generate_vanilla_mutants_with<T: Scalar>(
    model: &Model<T>,
    fraction: f64,
) -> Result<Vec<Mutant>, MutationError> {
    let ops = MutatorKind::all(fraction)?;
    let layers = model.mutable_layers();
    if layers.iter().all(|&(_, n)| n == 0) {
        return Err(MutationError::NoMutableNeurons);
    }
    Ok(number(layers.into_iter().flat_map(|(layer, n)| {
        (0..n).flat_map(move |j| {
            ops.into_iter().map(move |kind| MutationSpec {
                kind,
                target: TargetGroup::single(layer, j),
            })
        })
    })))
}

/// Three mutants per neuron cluster with the default change fraction.
pub fn generate_cluster_mutants<T: Scalar, U>(
    model: &Model<T>,
    clustering: &NeuronClustering<U>,
) -> Result<Vec<Mutant>, MutationError> {
    generate_cluster_mutants_with(model, clustering, DEFAULT_CHANGE_FRACTION)
}

/// Three mutants per neuron cluster, each targeting the whole cluster.
/// Ordered by layer, cluster (in clustering order), then operator.
pub fn generate_cluster_mutants_with<T: Scalar, U>(
    model: &Model<T>,
    clustering: &NeuronClustering<U>,
    fraction: f64,
) -> Result<Vec<Mutant>, MutationError> {
    let ops = MutatorKind::all(fraction)?;
    let layers = model.mutable_layers();
    if layers.is_empty() {
        return Err(MutationError::NoMutableNeurons);
    }
    if layers.len() != clustering.layers.len() {
        return Err(MutationError::ClusteringMismatch(format!(
            "model has {} mutable layers, clustering covers {}",
            layers.len(),
            clustering.layers.len()
        )));
    }
    let mut specs = Vec::new();
    for (&(layer, n), lc) in layers.iter().zip(&clustering.layers) {
        if lc.layer_idx != layer || lc.neuron_count != n {
            return Err(MutationError::ClusteringMismatch(format!(
                "expected layer {layer} with {n} neurons, found layer {} with {}",
                lc.layer_idx, lc.neuron_count
            )));
        }
        if !is_partition(&lc.clusters, n) {
            return Err(MutationError::ClusteringMismatch(format!(
                "clusters of layer {layer} do not partition its {n} neurons"
            )));
        }
        for cluster in &lc.clusters {
            let target = TargetGroup::new(layer, cluster.clone())?;
            for kind in ops {
                specs.push(MutationSpec {
                    kind,
                    target: target.clone(),
                });
            }
        }
    }
    Ok(number(specs.into_iter()))
}

/// Copy of `model` with the mutation applied to every targeted neuron.
/// All other parameters are untouched.
pub fn materialize<T: Scalar>(
    model: &Model<T>,
    spec: &MutationSpec,
) -> Result<Model<T>, MutationError> {
    let mut out = model.clone();
    apply_in_place(&mut out, spec)?;
    Ok(out)
}

/// Applies `kind` to a neuron parameter vector (weights then bias) in place.
pub fn materialize_params<'a, T: Scalar>(kind: &MutatorKind, params: &'a mut [T]) -> &'a [T] {
    for v in params.iter_mut() {
        *v = kind.apply(*v);
    }
    params
}

/// Applies `spec` to `model` in place.
pub fn apply_in_place<T: Scalar>(
    model: &mut Model<T>,
    spec: &MutationSpec,
) -> Result<(), MutationError> {
    if let MutatorKind::ChangeWeights { fraction } = spec.kind {
        MutatorKind::change_weights(fraction)?;
    }
    let layer = spec.target.layer_idx;
    // validate every index before touching anything
    for &j in spec.target.neurons() {
        model.neuron_param_vector(layer, j)?;
    }
    for &j in spec.target.neurons() {
        model.map_neuron_params(layer, j, |v| spec.kind.apply(v))?;
    }
    Ok(())
}
