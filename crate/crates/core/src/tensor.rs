//! Dense row-major tensor.

use std::ops::{Index, IndexMut};

use rand::Rng;

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;

/// Dense row-major tensor. `data.len()` always equals the product of `shape`;
/// an empty shape is a scalar holding one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(RsanError::dim(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(RsanError::dim(
                "tensor",
                format!(
                    "shape {shape:?} needs {numel} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds from `f64` values, rounding into the storage type.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::from_acc(x)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "extents must be positive, got {shape:?}"
        );
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        t
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for x in t.data.iter_mut() {
            *x = T::from_acc(rng.random_range(-bound..bound));
        }
        t
    }

    /// Standard-normal entries scaled by `std`.
    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let mut t = Self::zeros(shape);
        for x in t.data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = T::from_acc(std * z);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_acc()).collect()
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    /// Multi-index of a row-major flat offset.
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            idx[axis] = offset % self.shape[axis];
            offset /= self.shape[axis];
        }
        idx
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Leading-axis slice `self[i]` as an owned tensor.
    pub fn slice_outer(&self, i: usize) -> Tensor<T> {
        assert!(!self.shape.is_empty() && i < self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|x| x * factor)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(RsanError::dim(
                "axpy",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.to_acc()).sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        if self.numel() != other.numel() {
            return Err(RsanError::dim(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_acc() * b.to_acc())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.to_acc();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors with `op` as the culprit if any entry is NaN or infinite.
    pub fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(RsanError::NonFinite { op })
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_acc(x.to_acc())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_acc() - b.to_acc()).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the shape has exactly three extents and returns them.
    pub(crate) fn dims3(&self, op: &'static str, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(RsanError::dim(
                op,
                format!("{what} must be rank 3, got shape {:?}", self.shape),
            )),
        }
    }

    pub(crate) fn dims2(&self, op: &'static str, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(RsanError::dim(
                op,
                format!("{what} must be rank 2, got shape {:?}", self.shape),
            )),
        }
    }
}

impl<T: Scalar> Index<&[usize]> for Tensor<T> {
    type Output = T;

    fn index(&self, index: &[usize]) -> &T {
        &self.data[self.offset(index)]
    }
}

impl<T: Scalar> IndexMut<&[usize]> for Tensor<T> {
    fn index_mut(&mut self, index: &[usize]) -> &mut T {
        let off = self.offset(index);
        &mut self.data[off]
    }
}
