//! 2-D convolution and transposed convolution via im2col + GEMM.

use rand::Rng;

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::{matmul, matmul_nt, matmul_tn, Scalar};
use crate::tensor::Tensor;

/// Geometry of a square-kernel convolution from `[c, h, w]` to `[*, out_h, out_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < kernel || w + 2 * pad < kernel || stride == 0 {
            return Err(Error::Config(format!(
                "kernel {kernel} (stride {stride}, pad {pad}) does not fit a {h}x{w} input"
            )));
        }
        Ok(ConvGeometry {
            channels,
            h,
            w,
            kernel,
            stride,
            pad,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Rows of the column matrix: `channels * kernel^2`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.h * self.w
    }
}

/// Unfolds one image `[c, h, w]` into a `[c*k*k, out_h*out_w]` column matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let k = g.kernel;
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ol;
                let dst = &mut cols[row..row + ol];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let k = g.kernel;
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ol;
                let src = &cols[row..row + ol];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, c: usize, h: usize, w: usize, what: &str) -> Result<usize> {
    match x.shape() {
        [n, xc, xh, xw] if *xc == c && *xh == h && *xw == w => Ok(*n),
        s => Err(Error::Shape(format!(
            "{what} expects [N, {c}, {h}, {w}], got {s:?}"
        ))),
    }
}

/// Convolution with weight `[out_c, in_c, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeometry,
}

pub struct Conv2dCache<T> {
    cols: Vec<T>,
    n: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub const PARAMS: usize = 2;

    pub fn new<R: Rng + ?Sized>(geom: ConvGeometry, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (geom.patch_len() as f64).sqrt();
        let k = geom.kernel;
        Conv2d {
            weight: Param::uniform(&[out_channels, geom.channels, k, k], bound, rng),
            bias: Param::uniform(&[out_channels], bound, rng),
            geom,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
        let g = &self.geom;
        let n = check_input(x, g.channels, g.h, g.w, "conv2d")?;
        let (oc, pl, ol) = (self.out_channels(), g.patch_len(), g.out_len());
        let mut cols = vec![T::zero(); n * pl * ol];
        let mut y = Tensor::zeros(&[n, oc, g.out_h, g.out_w]);
        for i in 0..n {
            let c = &mut cols[i * pl * ol..(i + 1) * pl * ol];
            im2col(x.row(i), g, c);
            let yi = y.row_mut(i);
            for (o, chunk) in yi.chunks_mut(ol).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            matmul(oc, pl, ol, &self.weight.value, c, T::one(), yi);
        }
        Ok((y, Conv2dCache { cols, n }))
    }

    /// Returns `dL/dx` when `need_dx`; accumulates parameter gradients when given.
    pub fn backward(
        &self,
        cache: &Conv2dCache<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let g = &self.geom;
        let (n, oc, pl, ol) = (cache.n, self.out_channels(), g.patch_len(), g.out_len());
        if let Some(gs) = grads {
            let (gw, gb) = gs.split_at_mut(1);
            for i in 0..n {
                let c = &cache.cols[i * pl * ol..(i + 1) * pl * ol];
                let d = dy.row(i);
                matmul_nt(oc, ol, pl, d, c, T::one(), &mut gw[0]);
                for (o, chunk) in d.chunks(ol).enumerate() {
                    gb[0][o] += chunk.iter().copied().sum::<T>();
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(&[n, g.channels, g.h, g.w]);
        let mut dcols = vec![T::zero(); pl * ol];
        for i in 0..n {
            matmul_tn(pl, oc, ol, &self.weight.value, dy.row(i), T::zero(), &mut dcols);
            col2im(&dcols, g, dx.row_mut(i));
        }
        Some(dx)
    }
}

/// Transposed convolution with weight `[in_c, out_c, k, k]`.
///
/// `geom` describes the adjoint convolution, i.e. from the *output* image
/// `[out_c, H, W]` down to the input `[in_c, geom.out_h, geom.out_w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeometry,
}

pub struct ConvTranspose2dCache<T> {
    input: Tensor<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub const PARAMS: usize = 2;

    /// Upsamples `[in_c, h, w]` to `[out_c, (h-1)*stride - 2*pad + k, ...]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let oh = ((h - 1) * stride + kernel)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Config("transposed convolution output collapses".into()))?;
        let ow = ((w - 1) * stride + kernel)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Config("transposed convolution output collapses".into()))?;
        let geom = ConvGeometry::new(out_channels, oh, ow, kernel, stride, pad)?;
        if geom.out_h != h || geom.out_w != w {
            return Err(Error::Config(format!(
                "transposed convolution {h}x{w} -> {oh}x{ow} is not invertible with stride {stride}"
            )));
        }
        let bound = 1.0 / (geom.patch_len() as f64).sqrt();
        Ok(ConvTranspose2d {
            weight: Param::uniform(&[in_channels, out_channels, kernel, kernel], bound, rng),
            bias: Param::uniform(&[out_channels], bound, rng),
            geom,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[1]
    }

    /// Output spatial size `(h, w)`.
    pub fn out_hw(&self) -> (usize, usize) {
        (self.geom.h, self.geom.w)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTranspose2dCache<T>)> {
        let g = &self.geom;
        let ic = self.in_channels();
        let n = check_input(x, ic, g.out_h, g.out_w, "transposed conv2d")?;
        let (pl, il) = (g.patch_len(), g.out_len());
        let mut y = Tensor::zeros(&[n, g.channels, g.h, g.w]);
        let mut cols = vec![T::zero(); pl * il];
        let plane = g.h * g.w;
        for i in 0..n {
            matmul_tn(pl, ic, il, &self.weight.value, x.row(i), T::zero(), &mut cols);
            let yi = y.row_mut(i);
            for (o, chunk) in yi.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            col2im(&cols, g, yi);
        }
        Ok((y, ConvTranspose2dCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        cache: &ConvTranspose2dCache<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
    ) -> Tensor<T> {
        let g = &self.geom;
        let x = &cache.input;
        let (n, ic, pl, il) = (x.rows(), self.in_channels(), g.patch_len(), g.out_len());
        let mut dx = Tensor::zeros(x.shape());
        let mut dcols = vec![T::zero(); pl * il];
        let plane = g.h * g.w;
        let mut grads = grads;
        for i in 0..n {
            im2col(dy.row(i), g, &mut dcols);
            matmul(ic, pl, il, &self.weight.value, &dcols, T::zero(), dx.row_mut(i));
            if let Some(gs) = grads.as_deref_mut() {
                let (gw, gb) = gs.split_at_mut(1);
                matmul_nt(ic, il, pl, x.row(i), &dcols, T::one(), &mut gw[0]);
                for (o, chunk) in dy.row(i).chunks(plane).enumerate() {
                    gb[0][o] += chunk.iter().copied().sum::<T>();
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &[f64], g: &ConvGeometry, w: &[f64], b: &[f64], oc: usize) -> Vec<f64> {
        let k = g.kernel;
        let mut y = vec![0.0; oc * g.out_len()];
        for o in 0..oc {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut s = b[o];
                    for c in 0..g.channels {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += w[((o * g.channels + c) * k + ki) * k + kj]
                                        * x[(c * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(o * g.out_h + oy) * g.out_w + ox] = s;
                }
            }
        }
        y
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::new(2, 5, 6, 3, 2, 1).unwrap();
        let conv = Conv2d::<f64>::new(g, 3, &mut rng);
        let x = random_tensor(&[1, 2, 5, 6], &mut rng);
        let (y, _) = conv.forward(&x).unwrap();
        let want = naive_conv(x.data(), &g, &conv.weight.value, &conv.bias.value, 3);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeometry::new(2, 7, 7, 4, 2, 1).unwrap();
        let x = random_tensor(&[g.in_len()], &mut rng);
        let c = random_tensor(&[g.patch_len() * g.out_len()], &mut rng);
        let mut ax = vec![0.0; c.len()];
        im2col(x.data(), &g, &mut ax);
        let mut atc = vec![0.0; x.len()];
        col2im(c.data(), &g, &mut atc);
        let lhs: f64 = ax.iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&atc).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = ConvGeometry::new(2, 5, 5, 3, 1, 1).unwrap();
        let conv = Conv2d::<f64>::new(g, 3, &mut rng);
        let x = random_tensor(&[2, 2, 5, 5], &mut rng);
        let dy = random_tensor(&[2, 3, 5, 5], &mut rng);
        let (_, cache) = conv.forward(&x).unwrap();
        let mut grads = vec![vec![0.0; conv.weight.len()], vec![0.0; 3]];
        let dx = conv.backward(&cache, &dy, Some(&mut grads), true).unwrap();
        let eps = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (dot(&conv.forward(&xp).unwrap().0, &dy) - dot(&conv.forward(&xm).unwrap().0, &dy)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-7, "dx[{i}]");
        }
        for i in (0..conv.weight.len()).step_by(5) {
            let mut cp = conv.clone();
            cp.weight.value[i] += eps;
            let mut cm = conv.clone();
            cm.weight.value[i] -= eps;
            let fd = (dot(&cp.forward(&x).unwrap().0, &dy) - dot(&cm.forward(&x).unwrap().0, &dy)) / (2.0 * eps);
            assert!((fd - grads[0][i]).abs() < 1e-7, "dw[{i}]");
        }
    }

    #[test]
    fn transposed_conv_doubles_resolution_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = ConvTranspose2d::<f64>::new(3, 2, 4, 4, 4, 2, 1, &mut rng).unwrap();
        assert_eq!(t.out_hw(), (8, 8));
        let x = random_tensor(&[2, 3, 4, 4], &mut rng);
        let (y, cache) = t.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 8, 8]);
        let dy = random_tensor(y.shape(), &mut rng);
        let mut grads = vec![vec![0.0; t.weight.len()], vec![0.0; 2]];
        let dx = t.backward(&cache, &dy, Some(&mut grads));
        let eps = 1e-6;
        for i in (0..x.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (dot(&t.forward(&xp).unwrap().0, &dy) - dot(&t.forward(&xm).unwrap().0, &dy)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
        for i in (0..t.weight.len()).step_by(4) {
            let mut tp = t.clone();
            tp.weight.value[i] += eps;
            let mut tm = t.clone();
            tm.weight.value[i] -= eps;
            let fd = (dot(&tp.forward(&x).unwrap().0, &dy) - dot(&tm.forward(&x).unwrap().0, &dy)) / (2.0 * eps);
            assert!((fd - grads[0][i]).abs() < 1e-7);
        }
        let db0: f64 = (0..2).map(|n| dy.row(n)[..64].iter().sum::<f64>()).sum();
        assert!((grads[1][0] - db0).abs() < 1e-10);
    }

    #[test]
    fn oversized_kernel_is_config_error() {
        assert!(matches!(ConvGeometry::new(1, 1, 1, 3, 1, 0), Err(Error::Config(_))));
    }
}
