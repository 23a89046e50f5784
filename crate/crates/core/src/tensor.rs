use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero or missing dimension")]
    EmptyShape(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::EmptyShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor from a vector.
    pub fn vector(data: Vec<T>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a tensor without validating finiteness. Used on the hot
    /// inference path where the shape is known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::EmptyShape(shape));
        }
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}
