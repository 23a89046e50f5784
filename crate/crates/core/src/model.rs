//! Layers, models and forward inference for small FCNN / LeNet-style
//! classifiers.
//!
//! Tensors flowing between layers are either 1-D vectors (`[n]`) or
//! channel-major images (`[channels, height, width]`). A 2-D input
//! (`[height, width]`) is accepted by convolution and pooling layers as a
//! single-channel image.

use std::fmt;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Fully connected layer. `weights` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar = f64> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// 2-D convolution. `weights` is `out_channels x in_channels x kernel_h x kernel_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2D<T: Scalar = f64> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec<T: Scalar = f64> {
    Dense(Dense<T>),
    Conv2D(Conv2D<T>),
    Pool(Pool),
    Flatten,
    Activation(ActivationKind),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model has no layers")]
    Empty,
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("layer {layer}: expected input shape {expected}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("model input expects shape {expected:?}, got {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("final layer must be a softmax activation")]
    MissingSoftmax,
    #[error("model emits {actual} outputs but declares {expected} classes")]
    ClassCount { expected: usize, actual: usize },
    #[error("layer {0} does not exist")]
    LayerOutOfRange(usize),
    #[error("layer {0} is not a dense or convolutional layer")]
    NotMutable(usize),
    #[error("layer {layer} has {count} neurons, index {neuron} is out of range")]
    NeuronOutOfRange {
        layer: usize,
        neuron: usize,
        count: usize,
    },
    #[error("layer {layer}: parameter vector has length {actual}, expected {expected}")]
    ParamLength {
        layer: usize,
        expected: usize,
        actual: usize,
    },
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Softmax => "softmax",
        })
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Avg => "avg",
            Self::Max => "max",
        })
    }
}

fn fmt_shape(dims: &[usize]) -> String {
    format!("{dims:?}")
}

/// Interprets a shape as `(channels, height, width)`.
fn as_image(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w] => Some((1, h, w)),
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Self {
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    #[inline]
    fn neuron(&self, j: usize, x: &[T]) -> T {
        let row = &self.weights[j * self.in_dim..(j + 1) * self.in_dim];
        let mut acc = T::zero();
        for (&w, &v) in row.iter().zip(x) {
            acc = acc + w * v;
        }
        acc + self.bias[j]
    }
}

impl<T: Scalar> Conv2D<T> {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Writes the feature map of output channel `oc` into `out`.
    fn channel(&self, oc: usize, x: &[T], h: usize, w: usize, out: &mut [T]) {
        let (oh, ow) = self.out_dims(h, w).expect("shape checked at load");
        let k = &self.weights[oc * self.fan_in()..(oc + 1) * self.fan_in()];
        let pad = self.padding as isize;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ic in 0..self.in_channels {
                    let plane = &x[ic * h * w..(ic + 1) * h * w];
                    let kplane = &k[ic * self.kernel_h * self.kernel_w..];
                    for ky in 0..self.kernel_h {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel_w {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc = acc
                                + kplane[ky * self.kernel_w + kx]
                                    * plane[iy as usize * w + ix as usize];
                        }
                    }
                }
                out[oy * ow + ox] = acc + self.bias[oc];
            }
        }
    }
}

impl<T: Scalar> LayerSpec<T> {
    pub fn is_mutable(&self) -> bool {
        matches!(self, Self::Dense(_) | Self::Conv2D(_))
    }

    /// Number of neurons for mutable layers (dense units or conv filters).
    pub fn neuron_count(&self) -> Option<usize> {
        match self {
            Self::Dense(d) => Some(d.out_dim),
            Self::Conv2D(c) => Some(c.out_channels),
            _ => None,
        }
    }

    /// Weights per neuron, excluding the bias.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Self::Dense(d) => Some(d.in_dim),
            Self::Conv2D(c) => Some(c.fan_in()),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Dense(_) => "dense",
            Self::Conv2D(_) => "conv2d",
            Self::Pool(_) => "pool",
            Self::Flatten => "flatten",
            Self::Activation(_) => "activation",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Dense(d) => d.weights.len() + d.bias.len(),
            Self::Conv2D(c) => c.weights.len() + c.bias.len(),
            _ => 0,
        }
    }

    /// Checks internal consistency (array lengths, strides, windows).
    pub fn validate(&self, layer: usize) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::InvalidLayer { layer, reason });
        match self {
            Self::Dense(d) => {
                if d.in_dim == 0 || d.out_dim == 0 {
                    return bad("dense dimensions must be positive".into());
                }
                if d.weights.len() != d.in_dim * d.out_dim {
                    return bad(format!(
                        "dense weights have {} values, expected {}x{}",
                        d.weights.len(),
                        d.out_dim,
                        d.in_dim
                    ));
                }
                if d.bias.len() != d.out_dim {
                    return bad(format!(
                        "dense bias has {} values, expected {}",
                        d.bias.len(),
                        d.out_dim
                    ));
                }
                check_finite(layer, &d.weights)?;
                check_finite(layer, &d.bias)
            }
            Self::Conv2D(c) => {
                if c.in_channels == 0 || c.out_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                    return bad("conv2d dimensions must be positive".into());
                }
                if c.stride == 0 {
                    return bad("conv2d stride must be at least 1".into());
                }
                if c.weights.len() != c.out_channels * c.fan_in() {
                    return bad(format!(
                        "conv2d weights have {} values, expected {}x{}x{}x{}",
                        c.weights.len(),
                        c.out_channels,
                        c.in_channels,
                        c.kernel_h,
                        c.kernel_w
                    ));
                }
                if c.bias.len() != c.out_channels {
                    return bad(format!(
                        "conv2d bias has {} values, expected {}",
                        c.bias.len(),
                        c.out_channels
                    ));
                }
                check_finite(layer, &c.weights)?;
                check_finite(layer, &c.bias)
            }
            Self::Pool(p) => {
                if p.window == 0 || p.stride == 0 {
                    bad("pool window and stride must be at least 1".into())
                } else {
                    Ok(())
                }
            }
            Self::Flatten | Self::Activation(_) => Ok(()),
        }
    }

    /// Shape produced by this layer for a given input shape.
    pub fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        let mismatch = |expected: String| ModelError::ShapeMismatch {
            layer,
            expected,
            actual: input.to_vec(),
        };
        match self {
            Self::Dense(d) => {
                if input == [d.in_dim] {
                    Ok(vec![d.out_dim])
                } else {
                    Err(mismatch(fmt_shape(&[d.in_dim])))
                }
            }
            Self::Conv2D(c) => {
                let expected = || format!("[{}, H, W] with H, W >= kernel", c.in_channels);
                let (ch, h, w) = as_image(input).ok_or_else(|| mismatch(expected()))?;
                if ch != c.in_channels {
                    return Err(mismatch(expected()));
                }
                let (oh, ow) = c.out_dims(h, w).ok_or_else(|| mismatch(expected()))?;
                Ok(vec![c.out_channels, oh, ow])
            }
            Self::Pool(p) => {
                let expected = || format!("[C, H, W] with H, W >= {}", p.window);
                let (ch, h, w) = as_image(input).ok_or_else(|| mismatch(expected()))?;
                if h < p.window || w < p.window {
                    return Err(mismatch(expected()));
                }
                Ok(vec![
                    ch,
                    (h - p.window) / p.stride + 1,
                    (w - p.window) / p.stride + 1,
                ])
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Activation(ActivationKind::Softmax) => {
                if input.len() == 1 {
                    Ok(input.to_vec())
                } else {
                    Err(mismatch("[n]".into()))
                }
            }
            Self::Activation(_) => Ok(input.to_vec()),
        }
    }

    /// Applies the layer. `shape` has already been validated by
    /// [`output_shape`](Self::output_shape).
    fn apply(&self, shape: &[usize], x: &[T], out_shape: &[usize]) -> Vec<T> {
        match self {
            Self::Dense(d) => (0..d.out_dim).map(|j| d.neuron(j, x)).collect(),
            Self::Conv2D(c) => {
                let (_, h, w) = as_image(shape).expect("checked");
                let plane = out_shape[1] * out_shape[2];
                let mut out = vec![T::zero(); c.out_channels * plane];
                for (oc, chunk) in out.chunks_mut(plane).enumerate() {
                    c.channel(oc, x, h, w, chunk);
                }
                out
            }
            Self::Pool(p) => pool(p, shape, x, out_shape),
            Self::Flatten => x.to_vec(),
            Self::Activation(ActivationKind::Relu) => x.iter().map(|&v| v.max(T::zero())).collect(),
            Self::Activation(ActivationKind::Tanh) => x.iter().map(|&v| v.tanh()).collect(),
            Self::Activation(ActivationKind::Softmax) => softmax(x),
        }
    }
}

fn check_finite<T: Scalar>(layer: usize, values: &[T]) -> Result<(), ModelError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ModelError::InvalidLayer {
            layer,
            reason: format!("non-finite parameter at index {i}"),
        }),
        None => Ok(()),
    }
}

fn pool<T: Scalar>(p: &Pool, shape: &[usize], x: &[T], out_shape: &[usize]) -> Vec<T> {
    let (ch, h, w) = as_image(shape).expect("checked");
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let count = T::from_usize(p.window * p.window).expect("window fits scalar");
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = match p.kind {
                    PoolKind::Avg => T::zero(),
                    PoolKind::Max => T::neg_infinity(),
                };
                for ky in 0..p.window {
                    let row = (oy * p.stride + ky) * w;
                    for kx in 0..p.window {
                        let v = plane[row + ox * p.stride + kx];
                        acc = match p.kind {
                            PoolKind::Avg => acc + v,
                            PoolKind::Max => acc.max(v),
                        };
                    }
                }
                out.push(match p.kind {
                    PoolKind::Avg => acc / count,
                    PoolKind::Max => acc,
                });
            }
        }
    }
    out
}

pub(crate) fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &v| a + v);
    exps.into_iter().map(|v| v / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A validated, immutable-by-convention classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f64> {
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<LayerSpec<T>>,
}

impl<T: Scalar> Model<T> {
    /// Validates every layer and runs the shape-propagation pass.
    pub fn new(
        input_shape: Vec<usize>,
        num_classes: usize,
        layers: Vec<LayerSpec<T>>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Empty);
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(ModelError::InputShape {
                expected: vec![],
                actual: input_shape,
            });
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            shape = layer.output_shape(i, &shape)?;
        }
        if !matches!(
            layers.last(),
            Some(LayerSpec::Activation(ActivationKind::Softmax))
        ) {
            return Err(ModelError::MissingSoftmax);
        }
        if shape != [num_classes] {
            return Err(ModelError::ClassCount {
                expected: num_classes,
                actual: shape.iter().product(),
            });
        }
        Ok(Self {
            input_shape,
            num_classes,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerSpec<T>] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// `(layer_idx, neuron_count)` for every dense and conv layer, in order.
    pub fn mutable_layers(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.neuron_count().map(|n| (i, n)))
            .collect()
    }

    /// Largest per-neuron fan-in over all mutable layers.
    pub fn max_fan_in(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::fan_in)
            .max()
            .unwrap_or(0)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(ModelError::InputShape {
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(self.forward_from(0, input.clone()).into_data())
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<usize, ModelError> {
        self.forward(input).map(|p| argmax(&p))
    }

    /// Runs layers `start..` on an activation already known to have the
    /// shape expected by layer `start`.
    pub fn forward_from(&self, start: usize, mut x: Tensor<T>) -> Tensor<T> {
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let out_shape = layer
                .output_shape(i, x.shape())
                .expect("shapes validated at construction");
            let data = layer.apply(x.shape(), x.data(), &out_shape);
            x = Tensor::from_parts(out_shape, data);
        }
        x
    }

    /// Output of a single layer for an activation of the right shape.
    pub fn layer_output(&self, layer: usize, x: &Tensor<T>) -> Tensor<T> {
        let l = &self.layers[layer];
        let out_shape = l.output_shape(layer, x.shape()).expect("validated");
        let data = l.apply(x.shape(), x.data(), &out_shape);
        Tensor::from_parts(out_shape, data)
    }

    /// Recomputes only the listed neurons of a mutable layer into `output`,
    /// which must hold this layer's output for `input`. Every other neuron
    /// is left untouched, so the result equals `layer_output` whenever the
    /// remaining neurons share parameters with the model that produced
    /// `output`.
    pub fn recompute_neurons(
        &self,
        layer: usize,
        neurons: &[usize],
        input: &Tensor<T>,
        output: &mut Tensor<T>,
    ) {
        match &self.layers[layer] {
            LayerSpec::Dense(d) => {
                for &j in neurons {
                    output.data_mut()[j] = d.neuron(j, input.data());
                }
            }
            LayerSpec::Conv2D(c) => {
                let (_, h, w) = as_image(input.shape()).expect("validated");
                let plane = output.shape()[1] * output.shape()[2];
                for &oc in neurons {
                    let chunk = &mut output.data_mut()[oc * plane..(oc + 1) * plane];
                    c.channel(oc, input.data(), h, w, chunk);
                }
            }
            _ => panic!("layer {layer} is not mutable"),
        }
    }

    fn check_neuron(&self, layer: usize, neuron: usize) -> Result<(), ModelError> {
        let l = self
            .layers
            .get(layer)
            .ok_or(ModelError::LayerOutOfRange(layer))?;
        let count = l.neuron_count().ok_or(ModelError::NotMutable(layer))?;
        if neuron >= count {
            return Err(ModelError::NeuronOutOfRange {
                layer,
                neuron,
                count,
            });
        }
        Ok(())
    }

    /// Weights feeding a neuron followed by its bias.
    pub fn neuron_param_vector(&self, layer: usize, neuron: usize) -> Result<Vec<T>, ModelError> {
        self.check_neuron(layer, neuron)?;
        Ok(match &self.layers[layer] {
            LayerSpec::Dense(d) => {
                let mut v = d.weights[neuron * d.in_dim..(neuron + 1) * d.in_dim].to_vec();
                v.push(d.bias[neuron]);
                v
            }
            LayerSpec::Conv2D(c) => {
                let k = c.fan_in();
                let mut v = c.weights[neuron * k..(neuron + 1) * k].to_vec();
                v.push(c.bias[neuron]);
                v
            }
            _ => unreachable!(),
        })
    }

    /// Writes back a vector in the layout returned by
    /// [`neuron_param_vector`](Self::neuron_param_vector).
    pub fn set_neuron_params(
        &mut self,
        layer: usize,
        neuron: usize,
        params: &[T],
    ) -> Result<(), ModelError> {
        self.check_neuron(layer, neuron)?;
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidLayer {
                layer,
                reason: format!("non-finite parameter at index {i}"),
            });
        }
        let (weights, bias, k) = match &mut self.layers[layer] {
            LayerSpec::Dense(d) => (&mut d.weights, &mut d.bias, d.in_dim),
            LayerSpec::Conv2D(c) => {
                let k = c.fan_in();
                (&mut c.weights, &mut c.bias, k)
            }
            _ => unreachable!(),
        };
        if params.len() != k + 1 {
            return Err(ModelError::ParamLength {
                layer,
                expected: k + 1,
                actual: params.len(),
            });
        }
        weights[neuron * k..(neuron + 1) * k].copy_from_slice(&params[..k]);
        bias[neuron] = params[k];
        Ok(())
    }

    /// Applies `f` to every weight and bias of one neuron in place.
    pub(crate) fn map_neuron_params(
        &mut self,
        layer: usize,
        neuron: usize,
        f: impl Fn(T) -> T,
    ) -> Result<(), ModelError> {
        self.check_neuron(layer, neuron)?;
        let (weights, bias, k) = match &mut self.layers[layer] {
            LayerSpec::Dense(d) => (&mut d.weights, &mut d.bias, d.in_dim),
            LayerSpec::Conv2D(c) => {
                let k = c.fan_in();
                (&mut c.weights, &mut c.bias, k)
            }
            _ => unreachable!(),
        };
        for w in &mut weights[neuron * k..(neuron + 1) * k] {
            *w = f(*w);
        }
        bias[neuron] = f(bias[neuron]);
        Ok(())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dense(d) => LayerSpec::Dense(Dense {
                    in_dim: d.in_dim,
                    out_dim: d.out_dim,
                    weights: conv(&d.weights),
                    bias: conv(&d.bias),
                }),
                LayerSpec::Conv2D(c) => LayerSpec::Conv2D(Conv2D {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel_h: c.kernel_h,
                    kernel_w: c.kernel_w,
                    stride: c.stride,
                    padding: c.padding,
                    weights: conv(&c.weights),
                    bias: conv(&c.bias),
                }),
                LayerSpec::Pool(p) => LayerSpec::Pool(*p),
                LayerSpec::Flatten => LayerSpec::Flatten,
                LayerSpec::Activation(a) => LayerSpec::Activation(*a),
            })
            .collect();
        Model {
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(in_dim: usize, out_dim: usize, w: &[f64], b: &[f64]) -> LayerSpec<f64> {
        LayerSpec::Dense(Dense::new(in_dim, out_dim, w.to_vec(), b.to_vec()))
    }

    #[test]
    fn identity_relu_softmax_on_zero_is_uniform() {
        let m = Model::new(
            vec![2],
            2,
            vec![
                dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]),
                LayerSpec::Activation(ActivationKind::Relu),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        let p = m.forward(&Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn single_class_softmax_is_one() {
        let m = Model::new(
            vec![1],
            1,
            vec![
                dense(1, 1, &[2.0], &[1.0]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        let x = Tensor::vector(vec![3.0]).unwrap();
        assert_eq!(m.forward_from(0, x.clone()).data(), &[1.0]);
        assert_eq!(m.layer_output(0, &x).data(), &[7.0]);
    }

    #[test]
    fn conv_all_ones_kernel_sums_input() {
        let conv = LayerSpec::Conv2D(Conv2D {
            in_channels: 1,
            out_channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
            weights: vec![1.0; 4],
            bias: vec![0.0],
        });
        let m = Model::new(
            vec![1, 2, 2],
            1,
            vec![
                conv,
                LayerSpec::Flatten,
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let feat = m.layer_output(0, &x);
        assert_eq!(feat.shape(), &[1, 1, 1]);
        assert_eq!(feat.data(), &[10.0]);
    }

    #[test]
    fn padding_and_stride_shapes() {
        let conv = Conv2D::<f64> {
            in_channels: 1,
            out_channels: 2,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
            weights: vec![0.0; 18],
            bias: vec![0.0; 2],
        };
        let l = LayerSpec::Conv2D(conv);
        assert_eq!(l.output_shape(0, &[1, 5, 5]).unwrap(), vec![2, 3, 3]);
        assert_eq!(l.output_shape(0, &[5, 5]).unwrap(), vec![2, 3, 3]);
        assert!(matches!(
            l.output_shape(4, &[2, 5, 5]),
            Err(ModelError::ShapeMismatch { layer: 4, .. })
        ));
    }

    #[test]
    fn avg_and_max_pool() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let avg = Pool {
            kind: PoolKind::Avg,
            window: 2,
            stride: 2,
        };
        let max = Pool {
            kind: PoolKind::Max,
            ..avg
        };
        assert_eq!(pool(&avg, &[1, 2, 2], &x, &[1, 1, 1]), vec![2.5]);
        assert_eq!(pool(&max, &[1, 2, 2], &x, &[1, 1, 1]), vec![4.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = Model::new(
            vec![3],
            2,
            vec![
                dense(3, 4, &[0.0; 12], &[0.0; 4]),
                dense(5, 2, &[0.0; 10], &[0.0; 2]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap_err();
        assert_eq!(
            err,
            ModelError::ShapeMismatch {
                layer: 1,
                expected: "[5]".into(),
                actual: vec![4]
            }
        );
    }

    #[test]
    fn requires_softmax_and_class_count() {
        let no_softmax = Model::new(vec![2], 2, vec![dense(2, 2, &[0.0; 4], &[0.0; 2])]);
        assert_eq!(no_softmax.unwrap_err(), ModelError::MissingSoftmax);
        let wrong = Model::new(
            vec![2],
            3,
            vec![
                dense(2, 2, &[0.0; 4], &[0.0; 2]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        );
        assert_eq!(
            wrong.unwrap_err(),
            ModelError::ClassCount {
                expected: 3,
                actual: 2
            }
        );
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let m = Model::new(
            vec![2],
            2,
            vec![
                dense(2, 2, &[0.0; 4], &[0.0; 2]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        let err = m
            .forward(&Tensor::vector(vec![0.0; 3]).unwrap())
            .unwrap_err();
        assert!(matches!(err, ModelError::InputShape { .. }));
    }

    #[test]
    fn param_vector_extraction() {
        let m = Model::new(
            vec![3],
            2,
            vec![
                dense(3, 2, &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0], &[4.0, 8.0]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        assert_eq!(
            m.neuron_param_vector(0, 0).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            m.neuron_param_vector(0, 1).unwrap(),
            vec![5.0, 6.0, 7.0, 8.0]
        );
        assert_eq!(m.neuron_param_vector(1, 0), Err(ModelError::NotMutable(1)));
        assert!(matches!(
            m.neuron_param_vector(0, 2),
            Err(ModelError::NeuronOutOfRange { .. })
        ));

        let conv = Model::new(
            vec![1, 2, 2],
            1,
            vec![
                LayerSpec::Conv2D(Conv2D {
                    in_channels: 1,
                    out_channels: 1,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride: 1,
                    padding: 0,
                    weights: vec![0.5, -1.0, 2.0, 3.0],
                    bias: vec![9.0],
                }),
                LayerSpec::Flatten,
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        assert_eq!(
            conv.neuron_param_vector(0, 0).unwrap(),
            vec![0.5, -1.0, 2.0, 3.0, 9.0]
        );
    }

    #[test]
    fn set_params_length_checked() {
        let mut m = Model::new(
            vec![2],
            2,
            vec![
                dense(2, 2, &[0.0; 4], &[0.0; 2]),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        assert!(matches!(
            m.set_neuron_params(0, 0, &[1.0, 2.0]),
            Err(ModelError::ParamLength {
                expected: 3,
                actual: 2,
                ..
            })
        ));
        m.set_neuron_params(0, 1, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.neuron_param_vector(0, 1).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
