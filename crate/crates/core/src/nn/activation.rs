use rand::Rng;

use super::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyRelu {
    pub slope: f64,
}

impl LeakyRelu {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = T::lit(self.slope);
        x.map(|v| if v > T::zero() { v } else { v * s })
    }

    /// `x` is the forward input (its sign is all the derivative needs).
    pub fn backward<T: Scalar>(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let s = T::lit(self.slope);
        let mut dx = dy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            if v <= T::zero() {
                *d *= s;
            }
        }
        dx
    }
}

/// Logistic squashing onto `[0, 1]`.
pub struct Sigmoid;

impl Sigmoid {
    pub fn forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| T::one() / (T::one() + (-v).exp()))
    }

    /// `y` is the forward output.
    pub fn backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = dy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
            *d *= v * (T::one() - v);
        }
        dx
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Returns the output and the applied mask (`None` when inactive).
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        if mode == Mode::Eval || self.rate <= 0.0 {
            return (x.clone(), None);
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, Some(mask))
    }

    pub fn backward<T: Scalar>(mask: Option<&Vec<T>>, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = dy.clone();
        if let Some(mask) = mask {
            for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                *d *= m;
            }
        }
        dx
    }
}
