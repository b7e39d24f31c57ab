use rand::Rng;

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::{matmul, matmul_nt, matmul_tn, Scalar};
use crate::tensor::Tensor;

/// Affine map `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub const PARAMS: usize = 2;

    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Linear {
            weight: Param::uniform(&[out_dim, in_dim], bound, rng),
            bias: Param::uniform(&[out_dim], bound, rng),
        }
    }

    pub fn from_parts(weight: Param<T>, bias: Param<T>) -> Result<Self> {
        if weight.shape.len() != 2 || bias.shape != [weight.shape[0]] {
            return Err(Error::Shape(format!(
                "linear weight {:?} incompatible with bias {:?}",
                weight.shape, bias.shape
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// `x` is `[N, in]`; returns `[N, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d_in, d_out) = (x.rows(), self.in_dim(), self.out_dim());
        if x.row_len() != d_in {
            return Err(Error::Shape(format!(
                "linear layer expects width {d_in}, got {:?}",
                x.shape()
            )));
        }
        let mut y = Tensor::zeros(&[n, d_out]);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(&self.bias.value);
        }
        matmul_nt(n, d_in, d_out, x.data(), &self.weight.value, T::one(), y.data_mut());
        Ok(y)
    }

    /// Returns `dL/dx`; accumulates `dL/dW`, `dL/db` into `grads` when given.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: Option<&mut [Vec<T>]>) -> Tensor<T> {
        let (n, d_in, d_out) = (x.rows(), self.in_dim(), self.out_dim());
        if let Some(g) = grads {
            let (gw, gb) = g.split_at_mut(1);
            matmul_tn(d_out, n, d_in, dy.data(), x.data(), T::one(), &mut gw[0]);
            for i in 0..n {
                for (b, &d) in gb[0].iter_mut().zip(dy.row(i)) {
                    *b += d;
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, d_in]);
        matmul(n, d_out, d_in, dy.data(), &self.weight.value, T::zero(), dx.data_mut());
        dx
    }
}
