//! Mutation analysis for small neural-network classifiers.
//!
//! Three analysis modes are provided: exhaustive ("vanilla") mutation
//! testing, neuron clustering (fewer mutants are generated) and mutant
//! clustering (fewer mutants are executed). All numeric code is generic over
//! [`Scalar`]; the aliases below fix the element type to `f64` or `f32`.

pub mod cli;
pub mod dataset;
pub mod engine;
pub mod hac;
pub mod model;
pub mod model_io;
pub mod mutant_clustering;
pub mod mutation;
pub mod neuron_clustering;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod synthetic;
pub mod tensor;

pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type LayerSpec = model::LayerSpec<f64>;
pub type LayerSpec32 = model::LayerSpec<f32>;
pub type LabeledDataset = dataset::LabeledDataset<f64>;
pub type LabeledDataset32 = dataset::LabeledDataset<f32>;
pub type NeuronClustering = neuron_clustering::NeuronClustering<f64>;
pub type NeuronClustering32 = neuron_clustering::NeuronClustering<f32>;
pub type MutantFeature = mutant_clustering::MutantFeature<f64>;
pub type SimilarityGraph = mutant_clustering::SimilarityGraph<f64>;
