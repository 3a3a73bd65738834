use std::fmt;

use super::DiffError;

/// Dense row-major array of `f64` values.
///
/// Arrays are immutable once they enter a [`Tape`](super::Tape); every op
/// produces a fresh value.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.contains(&0) {
            return Err(DiffError::InvalidArgument(format!("array extents must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::InvalidArgument(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Build from parts the caller has already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// One-dimensional array. Panics on an empty vector.
    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empty vector");
        Self::from_parts(vec![values.len()], values)
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix rows");
        Self::from_parts(vec![r, c], rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, DiffError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.ndim(), 2, "row() needs a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub(crate) fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}
