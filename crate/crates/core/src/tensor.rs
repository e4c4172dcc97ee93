//! Dense row-major `f64` tensor used for latents and noise predictions.
//!
//! Every public constructor and operation checks that the result is finite,
//! so a `LatentTensor` value never holds NaN or infinity.

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
}

impl ElementOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementOp::Add => a + b,
            ElementOp::Sub => a - b,
            ElementOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl LatentTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape(shape));
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor holding `data`.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; len])
    }

    /// Tensor of i.i.d. standard normal draws; see [`RngState::fill_normal`].
    pub fn normal_sample(rng: &mut RngState, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut data = vec![0.0; len];
        rng.fill_normal(&mut data);
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        check_finite(&data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn elementwise(op: ElementOp, a: &Self, b: &Self) -> Result<Self> {
        a.same_shape(b)?;
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        a.with_data(data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::elementwise(ElementOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::elementwise(ElementOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::elementwise(ElementOp::Mul, self, other)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.map(|v| v * factor)
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &Self, factor: f64) -> Result<Self> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| x + factor * y)
            .collect();
        self.with_data(data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// `then[i]` where `a[i] - b[i] < threshold`, otherwise `else_val`.
    pub fn where_lt(
        a: &Self,
        b: &Self,
        threshold: f64,
        then: &Self,
        else_val: f64,
    ) -> Result<Self> {
        a.same_shape(b)?;
        a.same_shape(then)?;
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .zip(&then.data)
            .map(|((&x, &y), &t)| if x - y < threshold { t } else { else_val })
            .collect();
        a.with_data(data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Element-wise comparison of the bit patterns (distinguishes `0.0` and `-0.0`).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
