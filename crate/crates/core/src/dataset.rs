//! IDX (MNIST-family) ingestion and seeded subsetting.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, need {expected} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {actual} bytes, but the header describes {expected}")]
    TrailingBytes {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("record {index} has label {label}, outside 0..{num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("subset size {k} outside 1..={n}")]
    SubsetSize { k: usize, n: usize },
}

/// Images in `[0, 1]` with one class label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T: Scalar = f64> {
    inputs: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    /// `inputs` must have shape `[N, ...]` with `N == labels.len()`.
    pub fn new(
        inputs: Tensor<T>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        let n = inputs.shape()[0];
        if labels.is_empty() || n == 0 {
            return Err(DatasetError::Empty);
        }
        if n != labels.len() {
            return Err(DatasetError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        check_labels(&labels, num_classes)?;
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    /// Shape of one record (the input shape without the leading `N`).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> Tensor<T> {
        let shape = self.sample_shape().to_vec();
        let size: usize = shape.iter().product();
        Tensor::from_parts(shape, self.inputs.data()[i * size..(i + 1) * size].to_vec())
    }

    /// `k` records drawn uniformly without replacement, kept in their
    /// original order. The same seed always yields the same subset.
    pub fn subset(&self, k: usize, seed: u64) -> Result<Self, DatasetError> {
        let n = self.len();
        if k == 0 || k > n {
            return Err(DatasetError::SubsetSize { k, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        let size: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(k * size);
        for &i in &picked {
            data.extend_from_slice(&self.inputs.data()[i * size..(i + 1) * size]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = k;
        Ok(Self {
            inputs: Tensor::from_parts(shape, data),
            labels: picked.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<(), DatasetError> {
    match labels.iter().position(|&l| l >= num_classes) {
        Some(index) => Err(DatasetError::LabelOutOfRange {
            index,
            label: labels[index],
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Parsed IDX file: dimension sizes and the raw unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes an IDX buffer whose magic must equal `magic`.
pub fn parse_idx(path: &Path, bytes: &[u8], magic: u32) -> Result<IdxArray, DatasetError> {
    let truncated = |expected: usize| DatasetError::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(truncated(header + payload));
    }
    if bytes.len() > header + payload {
        return Err(DatasetError::TrailingBytes {
            path: path.to_path_buf(),
            expected: header + payload,
            actual: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..header + payload].to_vec(),
    })
}

/// Encodes an unsigned-byte IDX buffer. The magic's low byte gives the
/// number of dimensions.
pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    assert_eq!((magic & 0xff) as usize, dims.len());
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Writes an `N x H x W` image file and a matching label file.
pub fn write_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    dims: [usize; 3],
    pixels: &[u8],
    labels: &[u8],
) -> io::Result<()> {
    fs::write(images_path, encode_idx(IDX_IMAGES_MAGIC, &dims, pixels))?;
    fs::write(
        labels_path,
        encode_idx(IDX_LABELS_MAGIC, &[labels.len()], labels),
    )
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]` by `/255`.
pub fn load_idx_pair<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<LabeledDataset<T>, DatasetError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = parse_idx(images_path, &read_file(images_path)?, IDX_IMAGES_MAGIC)?;
    let labels = parse_idx(labels_path, &read_file(labels_path)?, IDX_LABELS_MAGIC)?;
    let n = images.dims[0];
    if n != labels.dims[0] {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: labels.dims[0],
        });
    }
    if n == 0 || images.dims.contains(&0) {
        return Err(DatasetError::Empty);
    }
    let scale = T::from_f64_lossy(255.0);
    let data = images
        .data
        .iter()
        .map(|&b| T::from_u8(b).unwrap() / scale)
        .collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    check_labels(&labels, num_classes)?;
    Ok(LabeledDataset {
        inputs: Tensor::from_parts(images.dims, data),
        labels,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dir: &Path, n_img: usize, n_lab: usize, px: u8, label: u8) -> (PathBuf, PathBuf) {
        let img = dir.join("img.idx");
        let lab = dir.join("lab.idx");
        fs::write(
            &img,
            encode_idx(IDX_IMAGES_MAGIC, &[n_img, 2, 2], &vec![px; n_img * 4]),
        )
        .unwrap();
        fs::write(
            &lab,
            encode_idx(IDX_LABELS_MAGIC, &[n_lab], &vec![label; n_lab]),
        )
        .unwrap();
        (img, lab)
    }

    #[test]
    fn pixel_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = pair(dir.path(), 2, 2, 255, 1);
        let ds: LabeledDataset<f64> = load_idx_pair(&img, &lab, 2).unwrap();
        assert_eq!(ds.inputs().shape(), &[2, 2, 2]);
        assert!(ds.inputs().data().iter().all(|&v| v == 1.0));
        let (img, lab) = pair(dir.path(), 2, 2, 0, 1);
        let ds: LabeledDataset<f64> = load_idx_pair(&img, &lab, 2).unwrap();
        assert!(ds.inputs().data().iter().all(|&v| v == 0.0));
        assert_eq!(ds.sample(1).shape(), &[2, 2]);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = pair(dir.path(), 3, 4, 7, 0);
        let err = load_idx_pair::<f64>(&img, &lab, 10).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::CountMismatch {
                images: 3,
                labels: 4
            }
        ));
    }

    #[test]
    fn bad_magic_truncation_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = pair(dir.path(), 2, 2, 7, 5);
        // swapped files
        let err = load_idx_pair::<f64>(&lab, &img, 10).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::BadMagic {
                expected: IDX_IMAGES_MAGIC,
                found: IDX_LABELS_MAGIC,
                ..
            }
        ));

        let err = load_idx_pair::<f64>(&img, &lab, 5).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::LabelOutOfRange {
                index: 0,
                label: 5,
                num_classes: 5
            }
        ));

        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        let err = load_idx_pair::<f64>(&img, &lab, 10).unwrap_err();
        assert!(matches!(err, DatasetError::Truncated { .. }));

        fs::write(&img, [0u8, 0]).unwrap();
        assert!(matches!(
            load_idx_pair::<f64>(&img, &lab, 10).unwrap_err(),
            DatasetError::Truncated { expected: 4, .. }
        ));
        assert!(matches!(
            load_idx_pair::<f64>(dir.path().join("missing"), &lab, 10).unwrap_err(),
            DatasetError::Io { .. }
        ));
    }

    #[test]
    fn round_trip_bytes() {
        let pixels: Vec<u8> = (0..24).collect();
        let buf = encode_idx(IDX_IMAGES_MAGIC, &[2, 3, 4], &pixels);
        let parsed = parse_idx(Path::new("x"), &buf, IDX_IMAGES_MAGIC).unwrap();
        assert_eq!(parsed.dims, vec![2, 3, 4]);
        assert_eq!(
            encode_idx(IDX_IMAGES_MAGIC, &parsed.dims, &parsed.data),
            buf
        );
    }

    fn toy(n: usize) -> LabeledDataset<f64> {
        let data = (0..n * 2).map(|v| v as f64 / 100.0).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        LabeledDataset::new(Tensor::new(vec![n, 2], data).unwrap(), labels, 3).unwrap()
    }

    #[test]
    fn subset_full_and_deterministic() {
        let ds = toy(10);
        let all = ds.subset(10, 99).unwrap();
        assert_eq!(all, ds);
        let a = ds.subset(1, 7).unwrap();
        let b = ds.subset(1, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            ds.subset(0, 1),
            Err(DatasetError::SubsetSize { .. })
        ));
        assert!(matches!(
            ds.subset(11, 1),
            Err(DatasetError::SubsetSize { .. })
        ));
    }

    #[test]
    fn subset_labels_are_sub_multiset() {
        let ds = toy(30);
        for seed in 0..20 {
            let sub = ds.subset(12, seed).unwrap();
            let mut counts = [0i32; 3];
            for &l in ds.labels() {
                counts[l] += 1;
            }
            for &l in sub.labels() {
                counts[l] -= 1;
            }
            assert!(counts.iter().all(|&c| c >= 0));
            for i in 0..sub.len() {
                let s = sub.sample(i);
                let found =
                    (0..ds.len()).any(|j| ds.sample(j) == s && ds.labels()[j] == sub.labels()[i]);
                assert!(found);
            }
        }
    }
}
