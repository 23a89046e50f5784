//! Runs the three analysis modes and computes kill records, mutation
//! scores, speedup and score error.
//!
//! A class `c` is killed by a mutant when some test point that the original
//! model classifies correctly as `c` is classified differently by the
//! mutant. The mutation score is the total number of killed classes over
//! all mutants divided by `mutants x classes`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::model::{argmax, Model, ModelError};
use crate::mutant_clustering::{
    cluster_mutants, mutant_feature, select_representatives, MutantClusterSet,
    MutantClusteringError, SimilarityGraph,
};
use crate::mutation::{
    generate_cluster_mutants_with, generate_vanilla_mutants_with, materialize, Mutant,
    MutationError, MutationSpec, DEFAULT_CHANGE_FRACTION,
};
use crate::neuron_clustering::{cluster_model, ClusteringError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("dataset records have shape {sample:?}, model expects {expected:?}")]
    Incompatible {
        sample: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("dataset has {dataset} classes, model has {model}")]
    ClassCount { dataset: usize, model: usize },
    #[error("cannot score zero mutants")]
    NoMutants,
    #[error("number of classes must be positive")]
    NoClasses,
    #[error("baseline value must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    MutantClustering(#[from] MutantClusteringError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Vanilla,
    Neuron,
    Mutant,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Neuron => "neuron",
            Self::Mutant => "mutant",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "neuron" => Ok(Self::Neuron),
            "mutant" => Ok(Self::Mutant),
            other => Err(format!(
                "unknown mode {other:?} (expected vanilla, neuron or mutant)"
            )),
        }
    }
}

/// How a mutant is scanned against the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// Stop scanning a class as soon as one of its points kills it.
    #[default]
    ShortCircuit,
    /// Classify every test point.
    Full,
}

/// Original-model prediction and correctness for every test point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselinePredictions {
    pub predicted: Vec<usize>,
    pub correct: Vec<bool>,
}

impl BaselinePredictions {
    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }
}

/// Killed classes per mutant id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KillRecord(pub BTreeMap<usize, BTreeSet<usize>>);

impl KillRecord {
    pub fn insert(&mut self, mutant: usize, classes: BTreeSet<usize>) {
        self.0.insert(mutant, classes);
    }

    pub fn get(&self, mutant: usize) -> Option<&BTreeSet<usize>> {
        self.0.get(&mutant)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sum of killed-class counts over all recorded mutants.
    pub fn total_killed(&self) -> usize {
        self.0.values().map(BTreeSet::len).sum()
    }
}

/// One timed execution of an analysis mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    /// Neurons per cluster (neuron mode) or linkage threshold (mutant mode).
    pub parameter: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    pub total_mutants: usize,
    pub tested_mutants: usize,
    pub mutation_score: f64,
    /// Total killed classes summed over all mutants.
    pub killed_classes: usize,
    /// Mutant-testing loop only.
    pub test_time_s: f64,
    /// Clustering time (zero for vanilla).
    pub cluster_time_s: f64,
}

/// Reshapes every dataset record to the model's input shape.
pub fn prepare_inputs<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledDataset<T>,
) -> Result<Vec<Tensor<T>>, EngineError> {
    let expected = model.input_shape().to_vec();
    let sample = dataset.sample_shape().to_vec();
    if sample.iter().product::<usize>() != expected.iter().product::<usize>() {
        return Err(EngineError::Incompatible { sample, expected });
    }
    if dataset.num_classes() != model.num_classes() {
        return Err(EngineError::ClassCount {
            dataset: dataset.num_classes(),
            model: model.num_classes(),
        });
    }
    (0..dataset.len())
        .map(|i| {
            dataset
                .sample(i)
                .reshape(expected.clone())
                .map_err(|_| EngineError::Incompatible {
                    sample: sample.clone(),
                    expected: expected.clone(),
                })
        })
        .collect()
}

pub fn baseline_predictions<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledDataset<T>,
) -> Result<BaselinePredictions, EngineError> {
    let inputs = prepare_inputs(model, dataset)?;
    let predicted = inputs
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>, _>>()?;
    let correct = predicted
        .iter()
        .zip(dataset.labels())
        .map(|(p, l)| p == l)
        .collect();
    Ok(BaselinePredictions { predicted, correct })
}

/// Classes killed by `mutant` on `dataset`, by full inference of every
/// point.
pub fn killed_classes<T: Scalar>(
    baseline: &BaselinePredictions,
    mutant: &Model<T>,
    dataset: &LabeledDataset<T>,
) -> Result<BTreeSet<usize>, EngineError> {
    let inputs = prepare_inputs(mutant, dataset)?;
    let mut killed = BTreeSet::new();
    for (i, x) in inputs.iter().enumerate() {
        if !baseline.correct[i] {
            continue;
        }
        let c = baseline.predicted[i];
        if mutant.predict(x)? != c {
            killed.insert(c);
        }
    }
    Ok(killed)
}

/// Total killed classes over `total_mutants x num_classes`.
pub fn mutation_score(
    records: &KillRecord,
    total_mutants: usize,
    num_classes: usize,
) -> Result<f64, EngineError> {
    if total_mutants == 0 {
        return Err(EngineError::NoMutants);
    }
    if num_classes == 0 {
        return Err(EngineError::NoClasses);
    }
    Ok(records.total_killed() as f64 / (total_mutants as f64 * num_classes as f64))
}

/// `(t_vanilla_avg - t) / t_vanilla_avg`.
pub fn speedup(t_vanilla_avg: f64, t: f64) -> Result<f64, EngineError> {
    if t_vanilla_avg.is_nan() || t_vanilla_avg <= 0.0 {
        return Err(EngineError::ZeroBaseline(t_vanilla_avg));
    }
    Ok((t_vanilla_avg - t) / t_vanilla_avg)
}

/// `(s_vanilla_avg - s) / s_vanilla_avg`; negative when `s` is higher.
pub fn score_error(s_vanilla_avg: f64, s: f64) -> Result<f64, EngineError> {
    if s_vanilla_avg.is_nan() || s_vanilla_avg <= 0.0 {
        return Err(EngineError::ZeroBaseline(s_vanilla_avg));
    }
    Ok((s_vanilla_avg - s) / s_vanilla_avg)
}

/// Seed for one `(mode, parameter, repetition)` cell, derived from the
/// master seed with a SplitMix64 finalizer.
pub fn derive_seed(master: u64, mode: Mode, parameter: Option<f64>, repetition: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut h = mix(master);
    h = mix(h ^ mode as u64);
    h = mix(h ^ parameter.map_or(u64::MAX, f64::to_bits));
    mix(h ^ repetition as u64)
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    /// Worker threads for mutant evaluation; 0 picks the rayon default.
    pub workers: usize,
    pub scan: ScanMode,
    /// Change-weights fraction.
    pub fraction: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            workers: 0,
            scan: ScanMode::ShortCircuit,
            fraction: DEFAULT_CHANGE_FRACTION,
        }
    }
}

/// Cached input and output of one mutable layer for one test point.
struct LayerCache<T: Scalar> {
    input: Tensor<T>,
    output: Tensor<T>,
}

/// Immutable evaluation context: model, prepared inputs, baseline and the
/// per-layer activations of the original model.
///
/// A mutant only differs from the original on its targeted neurons, so its
/// prediction is obtained by patching those neurons into the cached output
/// of the mutated layer and running the remaining layers. The patched
/// output is bit-identical to a full forward pass of the mutant.
pub struct Engine<T: Scalar = f64> {
    model: Model<T>,
    inputs: Vec<Tensor<T>>,
    baseline: BaselinePredictions,
    /// Indices of correctly classified points, per class.
    correct_by_class: Vec<Vec<usize>>,
    caches: BTreeMap<usize, Vec<LayerCache<T>>>,
    options: EngineOptions,
    pool: rayon::ThreadPool,
}

impl<T: Scalar> Engine<T> {
    pub fn new(
        model: Model<T>,
        dataset: &LabeledDataset<T>,
        options: EngineOptions,
    ) -> Result<Self, EngineError> {
        let inputs = prepare_inputs(&model, dataset)?;
        let mut predicted = Vec::with_capacity(inputs.len());
        let mut caches: BTreeMap<usize, Vec<LayerCache<T>>> = model
            .mutable_layers()
            .into_iter()
            .map(|(l, _)| (l, Vec::with_capacity(inputs.len())))
            .collect();
        for x in &inputs {
            let mut act = x.clone();
            for i in 0..model.layers().len() {
                let out = model.layer_output(i, &act);
                if let Some(c) = caches.get_mut(&i) {
                    c.push(LayerCache {
                        input: act,
                        output: out.clone(),
                    });
                }
                act = out;
            }
            predicted.push(argmax(act.data()));
        }
        let correct: Vec<bool> = predicted
            .iter()
            .zip(dataset.labels())
            .map(|(p, l)| p == l)
            .collect();
        let mut correct_by_class = vec![Vec::new(); model.num_classes()];
        for (i, (&p, &ok)) in predicted.iter().zip(&correct).enumerate() {
            if ok {
                correct_by_class[p].push(i);
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        Ok(Self {
            model,
            inputs,
            baseline: BaselinePredictions { predicted, correct },
            correct_by_class,
            caches,
            options,
            pool,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn baseline(&self) -> &BaselinePredictions {
        &self.baseline
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    fn predict_mutant(&self, mutant: &Model<T>, spec: &MutationSpec, point: usize) -> usize {
        let layer = spec.target.layer_idx();
        let cache = &self.caches[&layer][point];
        let mut out = cache.output.clone();
        mutant.recompute_neurons(layer, spec.target.neurons(), &cache.input, &mut out);
        argmax(mutant.forward_from(layer + 1, out).data())
    }

    /// Killed classes of one mutant.
    pub fn kill_set(&self, spec: &MutationSpec) -> Result<BTreeSet<usize>, EngineError> {
        let mutant = materialize(&self.model, spec)?;
        let mut killed = BTreeSet::new();
        match self.options.scan {
            ScanMode::ShortCircuit => {
                for (c, points) in self.correct_by_class.iter().enumerate() {
                    if points
                        .iter()
                        .any(|&t| self.predict_mutant(&mutant, spec, t) != c)
                    {
                        killed.insert(c);
                    }
                }
            }
            ScanMode::Full => {
                for t in 0..self.inputs.len() {
                    let p = self.predict_mutant(&mutant, spec, t);
                    if self.baseline.correct[t] && p != self.baseline.predicted[t] {
                        killed.insert(self.baseline.predicted[t]);
                    }
                }
            }
        }
        Ok(killed)
    }

    /// Kill sets for a batch of mutants, evaluated on the worker pool.
    pub fn kill_records(&self, mutants: &[Mutant]) -> Result<KillRecord, EngineError> {
        let sets: Vec<(usize, BTreeSet<usize>)> = self.pool.install(|| {
            mutants
                .par_iter()
                .map(|m| self.kill_set(&m.spec).map(|s| (m.id, s)))
                .collect::<Result<_, _>>()
        })?;
        Ok(KillRecord(sets.into_iter().collect()))
    }

    pub fn vanilla_mutants(&self) -> Result<Vec<Mutant>, EngineError> {
        Ok(generate_vanilla_mutants_with(
            &self.model,
            self.options.fraction,
        )?)
    }

    fn score(&self, records: &KillRecord, total: usize) -> Result<f64, EngineError> {
        mutation_score(records, total, self.model.num_classes())
    }

    /// One vanilla execution: every mutant is tested.
    pub fn vanilla_once(
        &self,
        repetition: usize,
        seed: u64,
    ) -> Result<(RunResult, KillRecord), EngineError> {
        let mutants = self.vanilla_mutants()?;
        let start = Instant::now();
        let records = self.kill_records(&mutants)?;
        let elapsed = start.elapsed().as_secs_f64();
        let r = RunResult {
            mode: Mode::Vanilla,
            parameter: None,
            repetition,
            seed,
            total_mutants: mutants.len(),
            tested_mutants: mutants.len(),
            mutation_score: self.score(&records, mutants.len())?,
            killed_classes: records.total_killed(),
            test_time_s: elapsed,
            cluster_time_s: 0.0,
        };
        Ok((r, records))
    }

    /// One neuron-clustering execution with `s` neurons per cluster.
    pub fn neuron_once(
        &self,
        s: usize,
        repetition: usize,
        seed: u64,
    ) -> Result<(RunResult, KillRecord), EngineError> {
        if s == 0 {
            return Err(EngineError::Parameter(
                "neurons per cluster must be at least 1".into(),
            ));
        }
        let start = Instant::now();
        let clustering = cluster_model(&self.model, s)?;
        let cluster_time = start.elapsed().as_secs_f64();
        let mutants =
            generate_cluster_mutants_with(&self.model, &clustering, self.options.fraction)?;
        let start = Instant::now();
        let records = self.kill_records(&mutants)?;
        let elapsed = start.elapsed().as_secs_f64();
        let r = RunResult {
            mode: Mode::Neuron,
            parameter: Some(s as f64),
            repetition,
            seed,
            total_mutants: mutants.len(),
            tested_mutants: mutants.len(),
            mutation_score: self.score(&records, mutants.len())?,
            killed_classes: records.total_killed(),
            test_time_s: elapsed,
            cluster_time_s: cluster_time,
        };
        Ok((r, records))
    }

    /// Clusters the vanilla mutants at `threshold` and picks representatives.
    pub fn mutant_clusters(
        &self,
        mutants: &[Mutant],
        threshold: f64,
        seed: u64,
    ) -> Result<MutantClusterSet, EngineError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(EngineError::Parameter(format!(
                "threshold {threshold} must lie in (0, 1)"
            )));
        }
        let features = mutants
            .iter()
            .map(|m| mutant_feature(&self.model, m))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = SimilarityGraph::from_features(&features)?;
        let partition = cluster_mutants(&graph, threshold)?;
        Ok(select_representatives(partition.clusters, threshold, seed)?)
    }

    /// One mutant-clustering execution: only representatives are tested and
    /// their kill sets are reused for every member of their cluster.
    pub fn mutant_once(
        &self,
        threshold: f64,
        repetition: usize,
        seed: u64,
    ) -> Result<(RunResult, KillRecord), EngineError> {
        let mutants = self.vanilla_mutants()?;
        let start = Instant::now();
        let set = self.mutant_clusters(&mutants, threshold, seed)?;
        let cluster_time = start.elapsed().as_secs_f64();
        let reps: Vec<Mutant> = set
            .representatives
            .iter()
            .map(|&i| mutants[i].clone())
            .collect();

        let start = Instant::now();
        let tested = self.kill_records(&reps)?;
        let mut records = KillRecord::default();
        for (cluster, &rep) in set.clusters.iter().zip(&set.representatives) {
            let killed = tested.get(rep).expect("representative tested");
            for &m in cluster {
                records.insert(mutants[m].id, killed.clone());
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        let r = RunResult {
            mode: Mode::Mutant,
            parameter: Some(threshold),
            repetition,
            seed,
            total_mutants: mutants.len(),
            tested_mutants: reps.len(),
            mutation_score: self.score(&records, mutants.len())?,
            killed_classes: records.total_killed(),
            test_time_s: elapsed,
            cluster_time_s: cluster_time,
        };
        Ok((r, records))
    }

    /// Runs one `(mode, parameter, repetition)` cell with the seed derived
    /// from `master_seed`.
    pub fn run_cell(
        &self,
        mode: Mode,
        parameter: Option<f64>,
        repetition: usize,
        master_seed: u64,
    ) -> Result<(RunResult, KillRecord), EngineError> {
        let seed = derive_seed(master_seed, mode, parameter, repetition);
        match (mode, parameter) {
            (Mode::Vanilla, _) => self.vanilla_once(repetition, seed),
            (Mode::Neuron, Some(s)) if s >= 1.0 && s.fract() == 0.0 => {
                self.neuron_once(s as usize, repetition, seed)
            }
            (Mode::Neuron, p) => Err(EngineError::Parameter(format!(
                "neuron mode needs a positive integer parameter, got {p:?}"
            ))),
            (Mode::Mutant, Some(p)) => self.mutant_once(p, repetition, seed),
            (Mode::Mutant, None) => Err(EngineError::Parameter(
                "mutant mode needs a threshold".into(),
            )),
        }
    }

    pub fn run_vanilla(
        &self,
        repetitions: usize,
        master_seed: u64,
    ) -> Result<Vec<RunResult>, EngineError> {
        (0..repetitions)
            .map(|r| {
                self.run_cell(Mode::Vanilla, None, r, master_seed)
                    .map(|x| x.0)
            })
            .collect()
    }

    pub fn run_neuron_mode(
        &self,
        s: usize,
        repetitions: usize,
        master_seed: u64,
    ) -> Result<Vec<RunResult>, EngineError> {
        (0..repetitions)
            .map(|r| {
                self.run_cell(Mode::Neuron, Some(s as f64), r, master_seed)
                    .map(|x| x.0)
            })
            .collect()
    }

    pub fn run_mutant_mode(
        &self,
        threshold: f64,
        master_seed: u64,
        repetitions: usize,
    ) -> Result<Vec<RunResult>, EngineError> {
        (0..repetitions)
            .map(|r| {
                self.run_cell(Mode::Mutant, Some(threshold), r, master_seed)
                    .map(|x| x.0)
            })
            .collect()
    }
}

/// Vanilla runs on a fresh engine with default options.
pub fn run_vanilla<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledDataset<T>,
    repetitions: usize,
) -> Result<Vec<RunResult>, EngineError> {
    Engine::new(model.clone(), dataset, EngineOptions::default())?.run_vanilla(repetitions, 0)
}

/// Neuron-clustering runs on a fresh engine with default options.
pub fn run_neuron_mode<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledDataset<T>,
    s: usize,
    repetitions: usize,
) -> Result<Vec<RunResult>, EngineError> {
    Engine::new(model.clone(), dataset, EngineOptions::default())?.run_neuron_mode(
        s,
        repetitions,
        0,
    )
}

/// Mutant-clustering runs on a fresh engine with default options.
pub fn run_mutant_mode<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledDataset<T>,
    threshold: f64,
    seed: u64,
    repetitions: usize,
) -> Result<Vec<RunResult>, EngineError> {
    Engine::new(model.clone(), dataset, EngineOptions::default())?.run_mutant_mode(
        threshold,
        seed,
        repetitions,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActivationKind, Dense, LayerSpec};
    use crate::mutation::{MutatorKind, TargetGroup};

    fn constant_model(class: usize, k: usize) -> Model<f64> {
        let mut bias = vec![0.0; k];
        bias[class] = 1.0;
        Model::new(
            vec![1],
            k,
            vec![
                LayerSpec::Dense(Dense::new(1, k, vec![0.0; k], bias)),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap()
    }

    fn dataset(xs: &[f64], labels: &[usize], k: usize) -> LabeledDataset<f64> {
        LabeledDataset::new(
            Tensor::new(vec![xs.len(), 1], xs.to_vec()).unwrap(),
            labels.to_vec(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn baseline_correctness_flags() {
        let m = constant_model(0, 2);
        let all0 = baseline_predictions(&m, &dataset(&[0.1, 0.2, 0.3], &[0, 0, 0], 2)).unwrap();
        assert_eq!(all0.correct, vec![true; 3]);
        let all1 = baseline_predictions(&m, &dataset(&[0.1, 0.2, 0.3], &[1, 1, 1], 2)).unwrap();
        assert_eq!(all1.correct, vec![false; 3]);
        let mixed =
            baseline_predictions(&m, &dataset(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1], 2)).unwrap();
        let recount = mixed
            .predicted
            .iter()
            .zip([0, 1, 0, 1])
            .filter(|(p, l)| **p == *l)
            .count();
        assert_eq!(mixed.accuracy(), recount as f64 / 4.0);
    }

    #[test]
    fn kill_rule() {
        let m = constant_model(1, 4);
        let ds = dataset(&[0.5, 0.5], &[1, 3], 4);
        let base = baseline_predictions(&m, &ds).unwrap();
        assert!(killed_classes(&base, &m, &ds).unwrap().is_empty());
        let flipped = constant_model(2, 4);
        assert_eq!(
            killed_classes(&base, &flipped, &ds).unwrap(),
            BTreeSet::from([1])
        );
        // point labelled 3 is misclassified by the original and never kills
        let to3 = constant_model(3, 4);
        assert_eq!(
            killed_classes(&base, &to3, &ds).unwrap(),
            BTreeSet::from([1])
        );
    }

    #[test]
    fn score_arithmetic() {
        let mut r = KillRecord::default();
        r.insert(0, BTreeSet::from([0, 1, 2]));
        assert_eq!(mutation_score(&r, 1, 3).unwrap(), 1.0);
        let mut r = KillRecord::default();
        r.insert(0, BTreeSet::from([0, 1]));
        r.insert(1, BTreeSet::new());
        assert_eq!(mutation_score(&r, 2, 3).unwrap(), 2.0 / 6.0);
        assert_eq!(mutation_score(&KillRecord::default(), 4, 3).unwrap(), 0.0);
        assert!(matches!(
            mutation_score(&r, 0, 3),
            Err(EngineError::NoMutants)
        ));
    }

    #[test]
    fn speedup_and_error() {
        assert!((speedup(100.0, 30.0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(speedup(100.0, 100.0).unwrap(), 0.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!((score_error(0.5, 0.49).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(score_error(0.5, 0.5).unwrap(), 0.0);
        assert!(score_error(0.5, 0.6).unwrap() < 0.0);
        assert!(score_error(0.0, 0.1).is_err());
    }

    #[test]
    fn derived_seeds_are_pure_and_distinct() {
        let a = derive_seed(7, Mode::Mutant, Some(0.5), 2);
        assert_eq!(a, derive_seed(7, Mode::Mutant, Some(0.5), 2));
        assert_ne!(a, derive_seed(7, Mode::Mutant, Some(0.5), 3));
        assert_ne!(a, derive_seed(7, Mode::Mutant, Some(0.6), 2));
        assert_ne!(a, derive_seed(8, Mode::Mutant, Some(0.5), 2));
        assert_ne!(a, derive_seed(7, Mode::Neuron, Some(0.5), 2));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("neuron".parse::<Mode>().unwrap(), Mode::Neuron);
        assert!("fast".parse::<Mode>().is_err());
        assert_eq!(Mode::Mutant.to_string(), "mutant");
    }

    fn two_layer() -> Model<f64> {
        Model::new(
            vec![2],
            3,
            vec![
                LayerSpec::Dense(Dense::new(
                    2,
                    3,
                    vec![1.0, -0.5, 0.3, 0.8, -0.7, 0.2],
                    vec![0.1, -0.2, 0.05],
                )),
                LayerSpec::Activation(ActivationKind::Tanh),
                LayerSpec::Dense(Dense::new(
                    3,
                    3,
                    vec![1.2, -0.4, 0.3, -0.6, 0.9, 0.1, 0.2, 0.3, -1.1],
                    vec![0.0, 0.1, -0.1],
                )),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap()
    }

    fn grid() -> LabeledDataset<f64> {
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        let m = two_layer();
        for i in 0..6 {
            for j in 0..6 {
                let p = [i as f64 / 2.5 - 1.0, j as f64 / 2.5 - 1.0];
                labels.push(m.predict(&Tensor::vector(p.to_vec()).unwrap()).unwrap());
                xs.extend(p);
            }
        }
        LabeledDataset::new(Tensor::new(vec![36, 2], xs).unwrap(), labels, 3).unwrap()
    }

    #[test]
    fn cached_path_matches_full_inference() {
        let ds = grid();
        let engine = Engine::new(two_layer(), &ds, EngineOptions::default()).unwrap();
        let base = baseline_predictions(&two_layer(), &ds).unwrap();
        assert_eq!(engine.baseline(), &base);
        for m in engine.vanilla_mutants().unwrap() {
            let full =
                killed_classes(&base, &materialize(&two_layer(), &m.spec).unwrap(), &ds).unwrap();
            assert_eq!(engine.kill_set(&m.spec).unwrap(), full);
        }
    }

    #[test]
    fn scan_modes_agree() {
        let ds = grid();
        let short = Engine::new(two_layer(), &ds, EngineOptions::default()).unwrap();
        let full = Engine::new(
            two_layer(),
            &ds,
            EngineOptions {
                scan: ScanMode::Full,
                ..Default::default()
            },
        )
        .unwrap();
        let ms = short.vanilla_mutants().unwrap();
        assert_eq!(
            short.kill_records(&ms).unwrap(),
            full.kill_records(&ms).unwrap()
        );
    }

    #[test]
    fn cluster_target_uses_patched_neurons() {
        let ds = grid();
        let engine = Engine::new(two_layer(), &ds, EngineOptions::default()).unwrap();
        let base = baseline_predictions(&two_layer(), &ds).unwrap();
        let spec = MutationSpec {
            kind: MutatorKind::NeuronInverse,
            target: TargetGroup::new(0, vec![0, 2]).unwrap(),
        };
        let full = killed_classes(&base, &materialize(&two_layer(), &spec).unwrap(), &ds).unwrap();
        assert_eq!(engine.kill_set(&spec).unwrap(), full);
    }

    #[test]
    fn modes_and_counts() {
        let ds = grid();
        let engine = Engine::new(two_layer(), &ds, EngineOptions::default()).unwrap();
        let v = engine.run_vanilla(2, 1).unwrap();
        assert_eq!(v[0].tested_mutants, 18);
        assert_eq!(v[0].mutation_score, v[1].mutation_score);
        let n1 = engine.run_neuron_mode(1, 1, 1).unwrap();
        assert_eq!(n1[0].mutation_score, v[0].mutation_score);
        let big = engine.run_neuron_mode(10, 1, 1).unwrap();
        assert_eq!(big[0].tested_mutants, 6);
        assert!(engine.run_mutant_mode(1.5, 1, 1).is_err());
        assert!(engine.run_neuron_mode(0, 1, 1).is_err());
        let mm = engine.run_mutant_mode(0.999, 1, 1).unwrap();
        assert_eq!(mm[0].total_mutants, 18);
        assert!(mm[0].tested_mutants <= 18);
    }

    #[test]
    fn incompatible_dataset() {
        let ds = dataset(&[0.1], &[0], 3);
        assert!(matches!(
            Engine::new(two_layer(), &ds, EngineOptions::default()),
            Err(EngineError::Incompatible { .. })
        ));
        let ds = LabeledDataset::new(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(), vec![0], 4)
            .unwrap();
        assert!(matches!(
            Engine::new(two_layer(), &ds, EngineOptions::default()),
            Err(EngineError::ClassCount {
                dataset: 4,
                model: 3
            })
        ));
    }
}
