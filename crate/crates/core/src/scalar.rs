//! Scalar abstraction and the dense parameter vector used everywhere in the
//! simulator.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Deref, Index};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar the simulator is generic over.
pub trait Scalar:
    'static
    + Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A point in parameter space. Every stored coordinate is finite.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Param<T> {
    values: Vec<T>,
}

impl<T: Scalar> Param<T> {
    /// Wraps `values`, rejecting NaN or infinite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter coordinate {idx}"),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }

    pub fn norm_sq(&self) -> T {
        norm_sq(&self.values)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        )
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }

    /// `self + alpha * x`, checked for finiteness.
    pub fn axpy(&self, alpha: T, x: &Self) -> Result<Self> {
        check_dim(self.dim(), x.dim())?;
        Self::new(
            self.values
                .iter()
                .zip(&x.values)
                .map(|(&a, &b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        check_dim(expected, self.dim())
    }
}

impl<T> Deref for Param<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.values
    }
}

impl<T> Index<usize> for Param<T> {
    type Output = T;

    fn index(&self, idx: usize) -> &T {
        &self.values[idx]
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm_sq<T: Scalar>(a: &[T]) -> T {
    a.iter().map(|&x| x * x).sum()
}

/// `acc += alpha * x`
pub(crate) fn add_scaled<T: Scalar>(acc: &mut [T], alpha: T, x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

pub(crate) fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Param::<f64>::new(vec![1.0, f64::NAN]).is_err());
        assert!(Param::<f32>::new(vec![f32::INFINITY]).is_err());
        assert!(Param::<f64>::new(vec![0.0, -3.5]).is_ok());
    }

    #[test]
    fn arithmetic() {
        let a = Param::<f64>::from_f64(&[3.0, 4.0]).unwrap();
        let b = Param::<f64>::from_f64(&[1.0, 1.0]).unwrap();
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.sub(&b).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(a.axpy(-2.0, &b).unwrap().as_slice(), &[1.0, 2.0]);
        assert!(matches!(
            a.sub(&Param::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(a.scaled(f64::MAX).is_err());
        assert!(b.axpy(f64::MAX, &a).is_err());
    }
}
