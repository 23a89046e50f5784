//! Model file format, version 1.
//!
//! ```text
//! MUTACC-MODEL\n
//! {json header}\n
//! <payload: little-endian f32 values>
//! ```
//!
//! The header is a single line of JSON holding `format_version`,
//! `input_shape`, `num_classes`, `metadata` (string to string) and `layers`.
//! Each parameterised layer declares how many weight and bias values it
//! owns; the payload concatenates, for every such layer in order, its
//! weights followed by its bias. See `docs/model-format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ActivationKind, Conv2D, Dense, LayerSpec, Model, ModelError, Pool, PoolKind};
use crate::scalar::Scalar;

pub const MAGIC_LINE: &str = "MUTACC-MODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format version {0}, expected {FORMAT_VERSION}")]
    Version(u32),
    #[error("layer {layer}: unsupported layer kind {kind:?}")]
    UnsupportedLayer { layer: usize, kind: String },
    #[error("layer {layer}: {field} has {declared} values, expected {expected}")]
    DimensionMismatch {
        layer: usize,
        field: &'static str,
        declared: usize,
        expected: usize,
    },
    #[error("payload has {actual} bytes, header declares {expected}")]
    Payload { expected: usize, actual: usize },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
}

/// A model together with the free-form metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T: Scalar = f64> {
    pub model: Model<T>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    input_shape: Vec<usize>,
    num_classes: usize,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    layers: Vec<LayerDescriptor>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct LayerDescriptor {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pool: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    function: Option<String>,
    /// Number of weight values in the payload.
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<usize>,
    /// Number of bias values in the payload.
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<usize>,
}

fn describe<T: Scalar>(layer: &LayerSpec<T>) -> LayerDescriptor {
    let kind = layer.kind_name().to_string();
    match layer {
        LayerSpec::Dense(d) => LayerDescriptor {
            kind,
            in_dim: Some(d.in_dim),
            out_dim: Some(d.out_dim),
            weights: Some(d.weights.len()),
            bias: Some(d.bias.len()),
            ..Default::default()
        },
        LayerSpec::Conv2D(c) => LayerDescriptor {
            kind,
            in_channels: Some(c.in_channels),
            out_channels: Some(c.out_channels),
            kernel_h: Some(c.kernel_h),
            kernel_w: Some(c.kernel_w),
            stride: Some(c.stride),
            padding: Some(c.padding),
            weights: Some(c.weights.len()),
            bias: Some(c.bias.len()),
            ..Default::default()
        },
        LayerSpec::Pool(p) => LayerDescriptor {
            kind,
            pool: Some(p.kind.to_string()),
            window: Some(p.window),
            stride: Some(p.stride),
            ..Default::default()
        },
        LayerSpec::Flatten => LayerDescriptor {
            kind,
            ..Default::default()
        },
        LayerSpec::Activation(a) => LayerDescriptor {
            kind,
            function: Some(a.to_string()),
            ..Default::default()
        },
    }
}

/// Serialises a model with metadata into the version-1 byte layout.
pub fn encode_model<T: Scalar>(
    model: &Model<T>,
    metadata: &BTreeMap<String, String>,
) -> Result<Vec<u8>, ModelIoError> {
    if model.layers().is_empty() {
        return Err(ModelError::Empty.into());
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        input_shape: model.input_shape().to_vec(),
        num_classes: model.num_classes(),
        metadata: metadata.clone(),
        layers: model.layers().iter().map(describe).collect(),
    };
    let json = serde_json::to_string(&header).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 16 + model.param_count() * 4);
    out.extend_from_slice(MAGIC_LINE.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for layer in model.layers() {
        let (w, b) = match layer {
            LayerSpec::Dense(d) => (&d.weights, &d.bias),
            LayerSpec::Conv2D(c) => (&c.weights, &c.bias),
            _ => continue,
        };
        for v in w.iter().chain(b) {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

fn field(layer: usize, name: &'static str, v: Option<usize>) -> Result<usize, ModelIoError> {
    v.ok_or_else(|| ModelIoError::Parse(format!("layer {layer}: missing field {name:?}")))
}

fn take_f32<T: Scalar>(payload: &mut &[u8], n: usize) -> Vec<T> {
    let (head, rest) = payload.split_at(n * 4);
    *payload = rest;
    head.chunks_exact(4)
        .map(|c| T::from_f32_lossless(f32::from_le_bytes(c.try_into().unwrap())))
        .collect()
}

fn check_count(
    layer: usize,
    field: &'static str,
    declared: Option<usize>,
    expected: usize,
) -> Result<usize, ModelIoError> {
    let declared = declared
        .ok_or_else(|| ModelIoError::Parse(format!("layer {layer}: missing field {field:?}")))?;
    if declared != expected {
        return Err(ModelIoError::DimensionMismatch {
            layer,
            field,
            declared,
            expected,
        });
    }
    Ok(declared)
}

/// Parses the version-1 byte layout.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<ModelFile<T>, ModelIoError> {
    let (magic, rest) =
        split_line(bytes).ok_or_else(|| ModelIoError::Parse("missing magic line".into()))?;
    if magic != MAGIC_LINE.as_bytes() {
        return Err(ModelIoError::Parse("not a mutacc model file".into()));
    }
    let (json, mut payload) =
        split_line(rest).ok_or_else(|| ModelIoError::Parse("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelIoError::Version(header.format_version));
    }

    let expected_payload: usize = header
        .layers
        .iter()
        .map(|l| l.weights.unwrap_or(0) + l.bias.unwrap_or(0))
        .sum::<usize>()
        * 4;

    // Descriptors are validated before touching the payload so that a
    // wrong declared length is reported as such rather than as truncation.
    for (i, d) in header.layers.iter().enumerate() {
        match d.kind.as_str() {
            "dense" => {
                let (ind, outd) = (
                    field(i, "in_dim", d.in_dim)?,
                    field(i, "out_dim", d.out_dim)?,
                );
                check_count(i, "weights", d.weights, ind * outd)?;
                check_count(i, "bias", d.bias, outd)?;
            }
            "conv2d" => {
                let ic = field(i, "in_channels", d.in_channels)?;
                let oc = field(i, "out_channels", d.out_channels)?;
                let kh = field(i, "kernel_h", d.kernel_h)?;
                let kw = field(i, "kernel_w", d.kernel_w)?;
                check_count(i, "weights", d.weights, oc * ic * kh * kw)?;
                check_count(i, "bias", d.bias, oc)?;
            }
            "pool" | "flatten" | "activation" => {}
            other => {
                return Err(ModelIoError::UnsupportedLayer {
                    layer: i,
                    kind: other.to_string(),
                })
            }
        }
    }
    if payload.len() != expected_payload {
        return Err(ModelIoError::Payload {
            expected: expected_payload,
            actual: payload.len(),
        });
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, d) in header.layers.iter().enumerate() {
        let layer = match d.kind.as_str() {
            "dense" => {
                let weights = take_f32(&mut payload, d.weights.unwrap());
                let bias = take_f32(&mut payload, d.bias.unwrap());
                LayerSpec::Dense(Dense::new(
                    d.in_dim.unwrap(),
                    d.out_dim.unwrap(),
                    weights,
                    bias,
                ))
            }
            "conv2d" => {
                let weights = take_f32(&mut payload, d.weights.unwrap());
                let bias = take_f32(&mut payload, d.bias.unwrap());
                LayerSpec::Conv2D(Conv2D {
                    in_channels: d.in_channels.unwrap(),
                    out_channels: d.out_channels.unwrap(),
                    kernel_h: d.kernel_h.unwrap(),
                    kernel_w: d.kernel_w.unwrap(),
                    stride: d.stride.unwrap_or(1),
                    padding: d.padding.unwrap_or(0),
                    weights,
                    bias,
                })
            }
            "pool" => {
                let kind = match d.pool.as_deref() {
                    Some("avg") => PoolKind::Avg,
                    Some("max") => PoolKind::Max,
                    other => {
                        return Err(ModelIoError::UnsupportedLayer {
                            layer: i,
                            kind: format!("pool/{}", other.unwrap_or("?")),
                        })
                    }
                };
                let window = field(i, "window", d.window)?;
                LayerSpec::Pool(Pool {
                    kind,
                    window,
                    stride: d.stride.unwrap_or(window),
                })
            }
            "flatten" => LayerSpec::Flatten,
            "activation" => LayerSpec::Activation(match d.function.as_deref() {
                Some("relu") => ActivationKind::Relu,
                Some("tanh") => ActivationKind::Tanh,
                Some("softmax") => ActivationKind::Softmax,
                other => {
                    return Err(ModelIoError::UnsupportedLayer {
                        layer: i,
                        kind: format!("activation/{}", other.unwrap_or("?")),
                    })
                }
            }),
            _ => unreachable!("kinds checked above"),
        };
        layers.push(layer);
    }

    let model = Model::new(header.input_shape, header.num_classes, layers)?;
    Ok(ModelFile {
        model,
        metadata: header.metadata,
    })
}

pub fn load_model_file<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelFile<T>, ModelIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>, ModelIoError> {
    load_model_file(path).map(|f| f.model)
}

/// Writes the model, replacing any existing file at `path`.
pub fn save_model<T: Scalar>(
    model: &Model<T>,
    metadata: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<(), ModelIoError> {
    let path = path.as_ref();
    let bytes = encode_model(model, metadata)?;
    fs::write(path, bytes).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `(layer_idx, neuron_count)` of every dense and conv layer, in order.
pub fn mutable_layers<T: Scalar>(model: &Model<T>) -> Vec<(usize, usize)> {
    model.mutable_layers()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model<f64> {
        Model::new(
            vec![1, 4, 4],
            3,
            vec![
                LayerSpec::Conv2D(Conv2D {
                    in_channels: 1,
                    out_channels: 2,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    padding: 1,
                    weights: (0..18).map(|i| i as f64 * 0.1 - 0.7).collect(),
                    bias: vec![0.25, -0.5],
                }),
                LayerSpec::Activation(ActivationKind::Tanh),
                LayerSpec::Pool(Pool {
                    kind: PoolKind::Avg,
                    window: 2,
                    stride: 2,
                }),
                LayerSpec::Flatten,
                LayerSpec::Dense(Dense::new(
                    8,
                    3,
                    (0..24).map(|i| (i as f64).sin()).collect(),
                    vec![0.1, 0.2, 0.3],
                )),
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap()
    }

    fn header_of(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
        let (_, rest) = split_line(bytes).unwrap();
        let (json, payload) = split_line(rest).unwrap();
        (serde_json::from_slice(json).unwrap(), payload.to_vec())
    }

    fn with_header(header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
        let mut out = format!("{MAGIC_LINE}\n{header}\n").into_bytes();
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let m = small();
        let mut meta = BTreeMap::new();
        meta.insert("dataset".into(), "synthetic, v2".into());
        meta.insert("seed".into(), "42".into());
        let bytes = encode_model(&m, &meta).unwrap();
        let back: ModelFile<f64> = decode_model(&bytes).unwrap();
        assert_eq!(back.metadata, meta);
        let expected: Model<f64> = m.cast::<f32>().cast();
        assert_eq!(back.model, expected);
        // second pass is exact
        assert_eq!(encode_model(&back.model, &back.metadata).unwrap(), bytes);
    }

    #[test]
    fn wrong_dense_length_names_layer() {
        let bytes = encode_model(&small(), &BTreeMap::new()).unwrap();
        let (mut h, payload) = header_of(&bytes);
        h["layers"][4]["weights"] = 23.into();
        let err = decode_model::<f64>(&with_header(&h, &payload)).unwrap_err();
        assert!(matches!(
            err,
            ModelIoError::DimensionMismatch {
                layer: 4,
                field: "weights",
                declared: 23,
                expected: 24
            }
        ));
    }

    #[test]
    fn unknown_kind_and_version() {
        let bytes = encode_model(&small(), &BTreeMap::new()).unwrap();
        let (mut h, payload) = header_of(&bytes);
        h["layers"][3]["kind"] = "batchnorm".into();
        let err = decode_model::<f64>(&with_header(&h, &payload)).unwrap_err();
        assert!(matches!(
            err,
            ModelIoError::UnsupportedLayer { layer: 3, .. }
        ));

        let (mut h, payload) = header_of(&bytes);
        h["format_version"] = 2.into();
        let err = decode_model::<f64>(&with_header(&h, &payload)).unwrap_err();
        assert!(matches!(err, ModelIoError::Version(2)));

        assert!(matches!(
            decode_model::<f64>(b"garbage"),
            Err(ModelIoError::Parse(_))
        ));
        let err = decode_model::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, ModelIoError::Payload { .. }));
    }

    #[test]
    fn shape_incompatibility_is_model_error() {
        let bytes = encode_model(&small(), &BTreeMap::new()).unwrap();
        let (mut h, payload) = header_of(&bytes);
        h["input_shape"] = serde_json::json!([2, 4, 4]);
        let err = decode_model::<f64>(&with_header(&h, &payload)).unwrap_err();
        assert!(matches!(
            err,
            ModelIoError::Model(ModelError::ShapeMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn save_overwrites_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mutacc");
        fs::write(&path, b"old contents").unwrap();
        save_model(&small(), &BTreeMap::new(), &path).unwrap();
        let m: Model<f32> = load_model(&path).unwrap();
        assert_eq!(m.mutable_layers(), vec![(0, 2), (4, 3)]);
    }

    #[test]
    fn empty_model_cannot_be_built() {
        assert_eq!(
            Model::<f64>::new(vec![1], 1, vec![]).unwrap_err(),
            ModelError::Empty
        );
    }

    #[test]
    fn mutable_layers_of_non_parametric_model() {
        let m = Model::<f64>::new(
            vec![2, 2],
            4,
            vec![
                LayerSpec::Flatten,
                LayerSpec::Activation(ActivationKind::Softmax),
            ],
        )
        .unwrap();
        assert!(mutable_layers(&m).is_empty());
    }
}
