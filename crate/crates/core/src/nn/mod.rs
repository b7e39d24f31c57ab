//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Forward passes take `&self` and return the cache needed by `backward`,
//! so a frozen model can be differentiated with respect to its input
//! without ever being borrowed mutably. Parameter gradients go into a
//! caller-owned [`Grads`] buffer that mirrors the model's parameter order.

mod activation;
mod adam;
mod conv;
mod embedding;
mod linear;
mod norm;
mod pool;

pub use activation::{Dropout, LeakyRelu, Sigmoid};
pub use adam::Adam;
pub use conv::{col2im, im2col, Conv2d, Conv2dCache, ConvGeometry, ConvTranspose2d, ConvTranspose2dCache};
pub use embedding::Embedding;
pub use linear::Linear;
pub use norm::{BatchNorm2d, BatchNormCache, BatchStats};
pub use pool::{MaxPool2d, MaxPoolCache};

use rand::Rng;

use crate::scalar::Scalar;

/// Train mode uses batch statistics and active dropout; eval mode is a pure function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            shape: shape.to_vec(),
            value: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Param {
            shape: shape.to_vec(),
            value: vec![v; shape.iter().product()],
        }
    }

    /// Uniform in `[-bound, bound]`, drawn from `rng` in element order.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Param {
            shape: shape.to_vec(),
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Gradient buffers, one per parameter, in the owning model's parameter order.
#[derive(Debug, Clone)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Scalar> Grads<T> {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Param<T>>) -> Self {
        Grads(params.into_iter().map(|p| vec![T::zero(); p.len()]).collect())
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Mutable view of the `count` buffers starting at `offset`.
    pub fn slot(&mut self, offset: usize, count: usize) -> &mut [Vec<T>] {
        &mut self.0[offset..offset + count]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Splits an optional gradient buffer into a layer's slot, advancing nothing.
pub(crate) fn slot<'a, T: Scalar>(
    grads: &'a mut Option<&mut Grads<T>>,
    offset: usize,
    count: usize,
) -> Option<&'a mut [Vec<T>]> {
    grads.as_deref_mut().map(|g| g.slot(offset, count))
}
