use rand::Rng;

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable lookup table `[n, d]` indexed by integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub table: Param<T>,
}

impl<T: Scalar> Embedding<T> {
    pub const PARAMS: usize = 1;

    /// Standard-normal initialization.
    pub fn new<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        let value = (0..n * dim)
            .map(|_| T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        Embedding {
            table: Param {
                shape: vec![n, dim],
                value,
            },
        }
    }

    pub fn from_table(table: Param<T>) -> Result<Self> {
        if table.shape.len() != 2 {
            return Err(Error::Shape(format!("embedding table must be 2-D, got {:?}", table.shape)));
        }
        Ok(Embedding { table })
    }

    pub fn rows(&self) -> usize {
        self.table.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn forward(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let (n, d) = (self.rows(), self.dim());
        let mut out = Vec::with_capacity(labels.len() * d);
        for &l in labels {
            if l >= n {
                return Err(Error::Domain(format!("label {l} outside [0, {n})")));
            }
            out.extend_from_slice(&self.table.value[l * d..(l + 1) * d]);
        }
        Tensor::from_vec(&[labels.len(), d], out)
    }

    /// Scatter-adds `dy` rows into the looked-up table rows.
    pub fn backward(&self, labels: &[usize], dy: &Tensor<T>, grads: &mut [Vec<T>]) {
        let d = self.dim();
        for (i, &l) in labels.iter().enumerate() {
            for (g, &v) in grads[0][l * d..(l + 1) * d].iter_mut().zip(dy.row(i)) {
                *g += v;
            }
        }
    }
}
