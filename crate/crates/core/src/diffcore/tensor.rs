use std::fmt;

use crate::error::{Error, Result};

/// Extents of a dense tensor. Matrices are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Shape::Vector(1))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix { rows, cols } => write!(f, "[{rows}x{cols}]"),
        }
    }
}

/// Dense real vector or matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    values: Vec<f64>,
}

impl Tensor {
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(values.len()),
            values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::vector(vec![value])
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims(
                "Tensor::matrix",
                Shape::Matrix { rows, cols },
                format!("{} values", values.len()),
            ));
        }
        Ok(Tensor {
            shape: Shape::Matrix { rows, cols },
            values,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Tensor {
            shape: Shape::Matrix { rows: n, cols: n },
            values,
        }
    }

    /// Builds a tensor of the given shape from `f(flat_index)`.
    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape,
            values: (0..shape.len()).map(f).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row count; a vector counts as a single column.
    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix { rows, .. } => rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix { cols, .. } => cols,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `out = w · x (+ b)` for a row-major `rows x cols` matrix.
pub(crate) fn matvec_into(w: &[f64], cols: usize, x: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = dot(row, x) + b.map_or(0.0, |b| b[i]);
    }
}

/// Dot product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rejects_wrong_value_count() {
        assert!(Tensor::matrix(2, 3, vec![0.0; 5]).is_err());
        let m = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3);
        assert_eq!(m.shape().to_string(), "[2x3]");
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
