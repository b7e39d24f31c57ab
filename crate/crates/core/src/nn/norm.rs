use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Batch moments observed during a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into the running estimate.
    pub var: Vec<T>,
}

pub struct BatchNormCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    pub stats: Option<BatchStats<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const PARAMS: usize = 2;

    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::zeros(&[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let c = self.channels();
        let (n, plane) = match x.shape() {
            [n, xc, h, w] if *xc == c => (*n, h * w),
            s => return Err(Error::Shape(format!("batch norm over {c} channels got {s:?}"))),
        };
        let eps = T::lit(EPS);
        let count = n * plane;
        let (mean, inv_std, stats) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::Domain(
                        "batch normalization in train mode needs at least two values per channel".into(),
                    ));
                }
                let m = T::from_usize_lossy(count);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for i in 0..n {
                    for (ch, chunk) in x.row(i).chunks(plane).enumerate() {
                        mean[ch] += chunk.iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for i in 0..n {
                    for (ch, chunk) in x.row(i).chunks(plane).enumerate() {
                        let mu = mean[ch];
                        var[ch] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                }
                let biased: Vec<T> = var.iter().map(|&v| v / m).collect();
                let unbiased: Vec<T> = var.iter().map(|&v| v / (m - T::one())).collect();
                let inv: Vec<T> = biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (
                    mean.clone(),
                    inv,
                    Some(BatchStats {
                        mean,
                        var: unbiased,
                    }),
                )
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect(),
                None,
            ),
        };
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            let xr = x.row(i);
            let hr = x_hat.row_mut(i);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (h, &v) in hr[r.clone()].iter_mut().zip(&xr[r]) {
                    *h = (v - mean[ch]) * inv_std[ch];
                }
            }
            let yr = y.row_mut(i);
            let hr = x_hat.row(i);
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let r = ch * plane..(ch + 1) * plane;
                for (o, &h) in yr[r.clone()].iter_mut().zip(&hr[r]) {
                    *o = g * h + b;
                }
            }
        }
        Ok((
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                mode,
                stats,
            },
        ))
    }

    /// Folds batch moments into the running estimates.
    pub fn commit(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(MOMENTUM);
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dy: &Tensor<T>, grads: Option<&mut [Vec<T>]>) -> Tensor<T> {
        let c = self.channels();
        let n = dy.rows();
        let plane = dy.row_len() / c;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..n {
            let (d, h) = (dy.row(i), cache.x_hat.row(i));
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (&dv, &hv) in d[r.clone()].iter().zip(&h[r]) {
                    sum_dy[ch] += dv;
                    sum_dy_xhat[ch] += dv * hv;
                }
            }
        }
        if let Some(g) = grads {
            for ch in 0..c {
                g[0][ch] += sum_dy_xhat[ch];
                g[1][ch] += sum_dy[ch];
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        let m = T::from_usize_lossy(n * plane);
        for i in 0..n {
            let (d, h) = (dy.row(i), cache.x_hat.row(i));
            let out = dx.row_mut(i);
            for ch in 0..c {
                let scale = self.gamma.value[ch] * cache.inv_std[ch];
                let r = ch * plane..(ch + 1) * plane;
                match cache.mode {
                    Mode::Eval => {
                        for (o, &dv) in out[r.clone()].iter_mut().zip(&d[r]) {
                            *o = dv * scale;
                        }
                    }
                    Mode::Train => {
                        let (sd, sdh) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                        for ((o, &dv), &hv) in out[r.clone()].iter_mut().zip(&d[r.clone()]).zip(&h[r]) {
                            *o = scale * (dv - sd - hv * sdh);
                        }
                    }
                }
            }
        }
        dx
    }
}
