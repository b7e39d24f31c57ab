use std::path::Path;

use crate::conditioning::conditioning_for_labels;
use crate::error::{Error, Result};
use crate::generator::sample_latents;
use crate::inversion::{FrozenClassifier, InvertibleGenerator};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::tensor::Tensor;

use super::plot::write_gray_png;

const TILE: usize = 28;

/// Admitted images, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub cols: usize,
    /// `rows[r][c]` is a 28x28 image in `[0, 1]`, row-major.
    pub rows: Vec<Vec<Vec<f64>>>,
    /// Candidates generated per class, admitted or not.
    pub attempts: Vec<usize>,
}

impl SampleGrid {
    /// 8-bit grayscale raster of the tiled grid.
    pub fn raster(&self) -> (usize, usize, Vec<u8>) {
        let (w, h) = (self.cols * TILE, self.rows.len() * TILE);
        let mut px = vec![0u8; w * h];
        for (r, row) in self.rows.iter().enumerate() {
            for (c, img) in row.iter().enumerate() {
                for y in 0..TILE {
                    for x in 0..TILE {
                        let v = (img[y * TILE + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                        px[(r * TILE + y) * w + c * TILE + x] = v;
                    }
                }
            }
        }
        (w, h, px)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h, px) = self.raster();
        write_gray_png(path, w, h, &px)
    }
}

/// Generates `cols` images per class, keeping only those the classifier assigns to that class.
///
/// Each class may draw at most `50 * cols` candidates.
pub fn render_sample_grid<T, C, G>(
    generator: &G,
    classifier: &C,
    cols: usize,
    temperature: f64,
    seed: u64,
) -> Result<SampleGrid>
where
    T: Scalar,
    C: FrozenClassifier<T>,
    G: InvertibleGenerator<T>,
{
    if cols == 0 {
        return Err(Error::Config("sample grid needs at least one column".into()));
    }
    let n_classes = classifier.n_classes();
    let budget = 50 * cols;
    let mut rng = stream_rng(seed, Stream::SampleGrid);
    let mut unused = stream_rng(seed, Stream::SampleGrid);
    let mut rows = Vec::with_capacity(n_classes);
    let mut attempts = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let mut admitted: Vec<Vec<f64>> = Vec::with_capacity(cols);
        let mut tried = 0;
        while admitted.len() < cols && tried < budget {
            let n = cols.min(budget - tried);
            let cond = conditioning_for_labels::<T, _>(
                generator.conditioning_mode(),
                &vec![class; n],
                n_classes,
                temperature,
                &mut rng,
            )?;
            let latents: Tensor<T> = sample_latents(n, generator.latent_dim(), &mut rng);
            let (images, _) = generator.forward_traced(&latents, cond.signal(), Mode::Eval, &mut unused)?;
            let (pred, _, _) = classifier.forward_traced(&images)?;
            for (i, &label) in pred.labels.iter().enumerate() {
                if label == class && admitted.len() < cols {
                    admitted.push(images.row(i).iter().map(|v| v.as_f64()).collect());
                }
            }
            tried += n;
        }
        if admitted.len() < cols {
            return Err(Error::Generation { class, admitted: admitted.len(), wanted: cols, attempts: tried });
        }
        rows.push(admitted);
        attempts.push(tried);
    }
    Ok(SampleGrid { cols, rows, attempts })
}
