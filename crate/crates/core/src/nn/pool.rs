use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool2d;

pub struct MaxPoolCache {
    /// Flat input index of each output's winner.
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
        let [n, c, h, w] = match x.shape() {
            &[n, c, h, w] => [n, c, h, w],
            s => return Err(Error::Shape(format!("max pool expects [N, C, H, W], got {s:?}"))),
        };
        let (oh, ow) = Self::output_hw(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::Config(format!("{h}x{w} feature map is too small to pool")));
        }
        let mut y = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0; n * c * oh * ow];
        let xd = x.data();
        let out = y.data_mut();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
        Ok((
            y,
            MaxPoolCache {
                argmax,
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, cache: &MaxPoolCache, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(&cache.in_shape);
        let d = dx.data_mut();
        for (&src, &g) in cache.argmax.iter().zip(dy.data()) {
            d[src] += g;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maxima_and_routes_gradient() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![1.0f32, 5.0, 2.0, 2.0, 3.0, 0.0, 9.0, 2.0],
        )
        .unwrap();
        let (y, cache) = MaxPool2d.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = MaxPool2d.backward(&cache, &Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn one_by_one_map_cannot_pool() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        assert!(matches!(MaxPool2d.forward(&x), Err(Error::Config(_))));
    }
}
