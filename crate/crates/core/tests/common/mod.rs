#![allow(dead_code)]

use std::path::PathBuf;

use mutacc::dataset::LabeledDataset;
use mutacc::model::{ActivationKind, Conv2D, Dense, LayerSpec, Model, Pool, PoolKind};
use mutacc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn hidden_activation(rng: &mut ChaCha8Rng) -> LayerSpec<f64> {
    LayerSpec::Activation(if rng.random() {
        ActivationKind::Relu
    } else {
        ActivationKind::Tanh
    })
}

/// Dense-only classifier with 1 to 3 hidden layers.
pub fn random_fcnn(rng: &mut ChaCha8Rng) -> Model<f64> {
    let input = rng.random_range(2..=8);
    let classes = rng.random_range(2..=5);
    let mut layers = Vec::new();
    let mut width = input;
    for _ in 0..rng.random_range(1..=3) {
        let out = rng.random_range(1..=8);
        layers.push(LayerSpec::Dense(Dense::new(
            width,
            out,
            uniform(rng, width * out),
            uniform(rng, out),
        )));
        layers.push(hidden_activation(rng));
        width = out;
    }
    layers.push(LayerSpec::Dense(Dense::new(
        width,
        classes,
        uniform(rng, width * classes),
        uniform(rng, classes),
    )));
    layers.push(LayerSpec::Activation(ActivationKind::Softmax));
    Model::new(vec![input], classes, layers).unwrap()
}

/// Conv, optional pooling, then dense layers.
pub fn random_cnn(rng: &mut ChaCha8Rng) -> Model<f64> {
    let (c, h, w) = (
        rng.random_range(1..=2),
        rng.random_range(4..=7),
        rng.random_range(4..=7),
    );
    let classes = rng.random_range(2..=4);
    let (oc, k, padding) = (
        rng.random_range(1..=4),
        rng.random_range(2..=3),
        rng.random_range(0..=1),
    );
    let mut layers = vec![
        LayerSpec::Conv2D(Conv2D {
            in_channels: c,
            out_channels: oc,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding,
            weights: uniform(rng, oc * c * k * k),
            bias: uniform(rng, oc),
        }),
        hidden_activation(rng),
    ];
    let (mut oh, mut ow) = (h + 2 * padding - k + 1, w + 2 * padding - k + 1);
    if rng.random() {
        let kind = if rng.random() {
            PoolKind::Avg
        } else {
            PoolKind::Max
        };
        layers.push(LayerSpec::Pool(Pool {
            kind,
            window: 2,
            stride: 2,
        }));
        oh = (oh - 2) / 2 + 1;
        ow = (ow - 2) / 2 + 1;
    }
    layers.push(LayerSpec::Flatten);
    let flat = oc * oh * ow;
    let hidden = rng.random_range(1..=6);
    layers.push(LayerSpec::Dense(Dense::new(
        flat,
        hidden,
        uniform(rng, flat * hidden),
        uniform(rng, hidden),
    )));
    layers.push(hidden_activation(rng));
    layers.push(LayerSpec::Dense(Dense::new(
        hidden,
        classes,
        uniform(rng, hidden * classes),
        uniform(rng, classes),
    )));
    layers.push(LayerSpec::Activation(ActivationKind::Softmax));
    Model::new(vec![c, h, w], classes, layers).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng) -> Model<f64> {
    if rng.random_bool(0.6) {
        random_fcnn(rng)
    } else {
        random_cnn(rng)
    }
}

/// `n` uniform random inputs labelled by `model`, with a fraction `noise`
/// of labels moved to another class.
pub fn random_dataset(
    model: &Model<f64>,
    n: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> LabeledDataset<f64> {
    let shape = model.input_shape().to_vec();
    let size: usize = shape.iter().product();
    let k = model.num_classes();
    let mut data = Vec::with_capacity(n * size);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..size).map(|_| rng.random()).collect();
        let mut label = model
            .predict(&Tensor::new(shape.clone(), x.clone()).unwrap())
            .unwrap();
        if rng.random_bool(noise) {
            label = (label + rng.random_range(1..k)) % k;
        }
        data.extend(x);
        labels.push(label);
    }
    let mut dims = vec![n];
    dims.extend(&shape);
    LabeledDataset::new(Tensor::new(dims, data).unwrap(), labels, k).unwrap()
}

/// Every learnable parameter of `model`, layer by layer.
pub fn all_params(model: &Model<f64>) -> Vec<Vec<f64>> {
    model
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense(d) => d.weights.iter().chain(&d.bias).copied().collect(),
            LayerSpec::Conv2D(c) => c.weights.iter().chain(&c.bias).copied().collect(),
            _ => Vec::new(),
        })
        .collect()
}

/// Dense classifier with the given hidden widths and random parameters.
pub fn fcnn_with(
    input: usize,
    hidden: &[usize],
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Model<f64> {
    let mut layers = Vec::new();
    let mut width = input;
    for &out in hidden.iter().chain(std::iter::once(&classes)) {
        layers.push(LayerSpec::Dense(Dense::new(
            width,
            out,
            uniform(rng, width * out),
            uniform(rng, out),
        )));
        layers.push(hidden_activation(rng));
        width = out;
    }
    layers.pop();
    layers.push(LayerSpec::Activation(ActivationKind::Softmax));
    Model::new(vec![input], classes, layers).unwrap()
}

/// Output counts of the parameterised layers, read from the layer list.
pub fn neuron_counts(model: &Model<f64>) -> Vec<usize> {
    model
        .layers()
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Dense(d) => Some(d.out_dim),
            LayerSpec::Conv2D(c) => Some(c.out_channels),
            _ => None,
        })
        .collect()
}
