use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::numerics::scalar::Scalar;

/// Dense row-major tensor. Rank 1 tensors behave as a single row wherever a
/// matrix is expected.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            ));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; n],
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<T>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    /// I.i.d. uniform samples in `[low, high)` from the seeded stream.
    pub fn init_uniform(shape: &[usize], low: f64, high: f64, seed: u64) -> Result<Self> {
        Self::init_uniform_stream(shape, low, high, seed, 0)
    }

    pub fn init_uniform_stream(
        shape: &[usize],
        low: f64,
        high: f64,
        seed: u64,
        stream_id: u64,
    ) -> Result<Self> {
        if !(low < high) {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires low < high, got ({low}, {high})"
            )));
        }
        let mut r = rng::stream(seed, stream_id);
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| T::of(rng::uniform(&mut r, low, high))).collect();
        Self::new(shape.to_vec(), values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::shape(
                "set_grad",
                format!("gradient has {} values, tensor has {}", grad.len(), self.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Row count when viewed as a matrix (rank 1 → 1 row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
            grad: None,
        }
    }

    /// Plain matrix product (no gradient record).
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, n) = (self.rows(), self.cols());
        let (n2, p) = (other.rows(), other.cols());
        if n != n2 {
            return Err(Error::shape(
                "matmul",
                format!("{m}x{n} · {n2}x{p}: inner dimensions differ"),
            ));
        }
        let mut out = vec![T::zero(); m * p];
        T::gemm(
            m,
            n,
            p,
            T::one(),
            &self.values,
            n as isize,
            1,
            &other.values,
            p as isize,
            1,
            T::zero(),
            &mut out,
            p as isize,
            1,
        );
        Tensor::matrix(m, p, out)
    }

    pub fn transpose(&self) -> Tensor<T> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.values[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            values: out,
            grad: None,
        }
    }

    pub fn squared_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }
}
