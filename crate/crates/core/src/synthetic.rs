//! Seeded synthetic models and teacher-labelled IDX data for demos and
//! tests. Nothing here is trained; the reference architectures only match
//! the layer layout of the real models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{encode_idx, LabeledDataset, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use crate::model::{ActivationKind, Conv2D, Dense, LayerSpec, Model, Pool, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
        .collect()
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn dense<T: Scalar>(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> LayerSpec<T> {
    LayerSpec::Dense(Dense::new(
        in_dim,
        out_dim,
        uniform(rng, in_dim * out_dim, glorot(in_dim, out_dim)),
        uniform(rng, out_dim, 0.1),
    ))
}

/// Flatten, then dense layers of the given widths with `activation`
/// between them, then a dense output layer and softmax.
pub fn fcnn<T: Scalar>(
    input: [usize; 2],
    hidden: &[usize],
    num_classes: usize,
    activation: ActivationKind,
    seed: u64,
) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![LayerSpec::Flatten];
    let mut width = input[0] * input[1];
    for &h in hidden {
        layers.push(dense(&mut rng, width, h));
        layers.push(LayerSpec::Activation(activation));
        width = h;
    }
    layers.push(dense(&mut rng, width, num_classes));
    layers.push(LayerSpec::Activation(ActivationKind::Softmax));
    Model::new(input.to_vec(), num_classes, layers).expect("fcnn layout is consistent")
}

/// The reference FCNN layout: three hidden layers of 50 ReLU units.
pub fn reference_fcnn<T: Scalar>(num_classes: usize, seed: u64) -> Model<T> {
    fcnn(
        [28, 28],
        &[50, 50, 50],
        num_classes,
        ActivationKind::Relu,
        seed,
    )
}

/// LeNet-5: conv(6, 5x5), avg-pool 2, conv(16, 5x5), avg-pool 2, dense
/// 120, dense 84, dense output; tanh on every hidden layer.
pub fn lenet5<T: Scalar>(input: [usize; 2], num_classes: usize, seed: u64) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |rng: &mut ChaCha8Rng, ic: usize, oc: usize| {
        let fan = ic * 25;
        LayerSpec::Conv2D(Conv2D {
            in_channels: ic,
            out_channels: oc,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            padding: 0,
            weights: uniform(rng, oc * fan, glorot(fan, oc * 25)),
            bias: uniform(rng, oc, 0.1),
        })
    };
    let pool = LayerSpec::Pool(Pool {
        kind: PoolKind::Avg,
        window: 2,
        stride: 2,
    });
    let tanh = LayerSpec::Activation(ActivationKind::Tanh);
    let side = |s: usize| ((s - 4) / 2 - 4) / 2;
    let flat = 16 * side(input[0]) * side(input[1]);
    let layers = vec![
        conv(&mut rng, 1, 6),
        tanh.clone(),
        pool.clone(),
        conv(&mut rng, 6, 16),
        tanh.clone(),
        pool,
        LayerSpec::Flatten,
        dense(&mut rng, flat, 120),
        tanh.clone(),
        dense(&mut rng, 120, 84),
        tanh,
        dense(&mut rng, 84, num_classes),
        LayerSpec::Activation(ActivationKind::Softmax),
    ];
    Model::new(vec![1, input[0], input[1]], num_classes, layers)
        .expect("lenet layout is consistent")
}

/// Raw IDX payloads: `n x h x w` pixel bytes and one label byte per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticData {
    pub dims: [usize; 3],
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl SyntheticData {
    pub fn images_idx(&self) -> Vec<u8> {
        encode_idx(IDX_IMAGES_MAGIC, &self.dims, &self.pixels)
    }

    pub fn labels_idx(&self) -> Vec<u8> {
        encode_idx(IDX_LABELS_MAGIC, &[self.dims[0]], &self.labels)
    }

    /// Same records as [`load_idx_pair`](crate::dataset::load_idx_pair)
    /// would produce from the encoded files.
    pub fn to_dataset<T: Scalar>(&self, num_classes: usize) -> LabeledDataset<T> {
        let scale = T::from_f64_lossy(255.0);
        let data = self
            .pixels
            .iter()
            .map(|&b| T::from_u8(b).unwrap() / scale)
            .collect();
        LabeledDataset::new(
            Tensor::new(self.dims.to_vec(), data).expect("dims match pixels"),
            self.labels.iter().map(|&l| l as usize).collect(),
            num_classes,
        )
        .expect("labels come from the model's classes")
    }
}

/// Images built from a handful of smooth random prototypes plus pixel
/// noise, labelled by `teacher`. A fraction `label_noise` of labels is then
/// replaced by a different class so the teacher is not perfectly accurate.
pub fn teacher_dataset<T: Scalar>(
    teacher: &Model<T>,
    n: usize,
    label_noise: f64,
    seed: u64,
) -> SyntheticData {
    let shape = teacher.input_shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let k = teacher.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // coarse 4x4 grids upsampled bilinearly give smooth prototypes
    let prototypes: Vec<Vec<f64>> = (0..2 * k)
        .map(|_| {
            let grid: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let mut img = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let gy = y as f64 / h.max(2) as f64 * 3.0;
                    let gx = x as f64 / w.max(2) as f64 * 3.0;
                    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                    let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
                    let at = |yy: usize, xx: usize| grid[yy.min(3) * 4 + xx.min(3)];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                    img.push(top * (1.0 - fy) + bot * fy);
                }
            }
            img
        })
        .collect();

    let mut pixels = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let proto = &prototypes[rng.random_range(0..prototypes.len())];
        let start = pixels.len();
        for &v in proto {
            let noisy = (v + rng.random_range(-0.25..0.25)).clamp(0.0, 1.0);
            pixels.push((noisy * 255.0).round() as u8);
        }
        let scale = T::from_f64_lossy(255.0);
        let x: Vec<T> = pixels[start..]
            .iter()
            .map(|&b| T::from_u8(b).unwrap() / scale)
            .collect();
        let x = Tensor::new(shape.to_vec(), x).expect("input shape");
        let mut label = teacher.predict(&x).expect("input shape matches teacher");
        if k > 1 && rng.random::<f64>() < label_noise {
            label = (label + rng.random_range(1..k)) % k;
        }
        labels.push(label as u8);
    }
    SyntheticData {
        dims: [n, h, w],
        pixels,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layouts() {
        let f: Model<f64> = reference_fcnn(10, 1);
        assert_eq!(f.mutable_layers(), vec![(1, 50), (3, 50), (5, 50), (7, 10)]);
        let l: Model<f32> = lenet5([28, 28], 10, 1);
        assert_eq!(
            l.mutable_layers().iter().map(|x| x.1).collect::<Vec<_>>(),
            vec![6, 16, 120, 84, 10]
        );
    }

    #[test]
    fn teacher_labels_are_mostly_model_predictions() {
        let m: Model<f64> = fcnn([6, 6], &[8], 3, ActivationKind::Relu, 3);
        let d = teacher_dataset(&m, 200, 0.1, 5);
        assert_eq!(d, teacher_dataset(&m, 200, 0.1, 5));
        let ds: LabeledDataset<f64> = d.to_dataset(3);
        let agree = (0..ds.len())
            .filter(|&i| m.predict(&ds.sample(i)).unwrap() == ds.labels()[i])
            .count();
        assert!((160..200).contains(&agree), "{agree}");
    }
}
