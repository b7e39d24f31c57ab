//! Class maps over a 2-D penultimate feature space.

use std::path::Path;

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

use super::plot::{class_color, write_rgb_png};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    /// Row-major `[rows, cols]`; row 0 is the top (largest y).
    pub grid: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl BoundaryMap {
    pub fn class_at(&self, row: usize, col: usize) -> usize {
        self.grid[row * self.cols + col]
    }

    /// Centre of a cell in feature coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let dx = (self.x_range.1 - self.x_range.0) / self.cols as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.rows as f64;
        [self.x_range.0 + (col as f64 + 0.5) * dx, self.y_range.1 - (row as f64 + 0.5) * dy]
    }

    /// Cell containing `point`, clamped to the grid.
    pub fn cell_of(&self, point: [f64; 2]) -> (usize, usize) {
        let fx = (point[0] - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (self.y_range.1 - point[1]) / (self.y_range.1 - self.y_range.0);
        let col = ((fx * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        let row = ((fy * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        (row, col)
    }

    pub fn distinct_classes(&self) -> Vec<usize> {
        let mut v = self.grid.clone();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Argmax of the final layer at one 2-D point.
pub fn classify_point<T: Scalar>(layer: &Linear<T>, point: [f64; 2]) -> Result<usize> {
    let x = Tensor::from_vec(&[1, 2], vec![T::lit(point[0]), T::lit(point[1])])?;
    Ok(argmax(layer.forward(&x)?.row(0)))
}

/// Classifies the centre of every cell of a `rows x cols` grid spanning the
/// bounding box of `reference` (`[N, 2]`) widened by `margin` of its extent on each side.
pub fn decision_boundary<T: Scalar>(
    layer: &Linear<T>,
    reference: &Tensor<T>,
    rows: usize,
    cols: usize,
    margin: f64,
) -> Result<BoundaryMap> {
    if layer.in_dim() != 2 {
        return Err(Error::Config(format!("final layer takes {} inputs, not 2", layer.in_dim())));
    }
    if reference.shape().len() != 2 || reference.row_len() != 2 || reference.rows() == 0 {
        return Err(Error::Shape(format!("reference features must be [N>0, 2], got {:?}", reference.shape())));
    }
    if rows == 0 || cols == 0 || !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Config("grid needs positive resolution and a nonnegative margin".into()));
    }
    if !reference.is_finite() {
        return Err(Error::Domain("non-finite reference feature".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..reference.rows() {
        for k in 0..2 {
            let v = reference.row(i)[k].as_f64();
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let range = |k: usize| {
        // A degenerate extent still yields a nonempty range.
        let span = (hi[k] - lo[k]).max(1e-6);
        (lo[k] - margin * span, hi[k] + margin * span)
    };
    let mut map = BoundaryMap {
        grid: vec![0; rows * cols],
        rows,
        cols,
        x_range: range(0),
        y_range: range(1),
    };
    // One batched pass per grid row.
    for r in 0..rows {
        let mut pts = Vec::with_capacity(cols * 2);
        for c in 0..cols {
            let p = map.cell_center(r, c);
            pts.push(T::lit(p[0]));
            pts.push(T::lit(p[1]));
        }
        let logits = layer.forward(&Tensor::from_vec(&[cols, 2], pts)?)?;
        for c in 0..cols {
            map.grid[r * cols + c] = argmax(logits.row(c));
        }
    }
    Ok(map)
}

/// Boundary map of a classifier built with a 2-unit penultimate layer.
pub fn decision_boundary_for<T: Scalar>(
    classifier: &Classifier<T>,
    reference: &Tensor<T>,
    rows: usize,
    cols: usize,
    margin: f64,
) -> Result<BoundaryMap> {
    if !classifier.config().penultimate_2d {
        return Err(Error::Config(
            "decision boundaries need a classifier trained with penultimate_2d = true".into(),
        ));
    }
    decision_boundary(classifier.final_layer(), reference, rows, cols, margin)
}

/// Class colors, lightened, with reference points drawn in full color.
pub fn write_boundary_png(path: impl AsRef<Path>, map: &BoundaryMap, reference: &[[f64; 2]], labels: &[usize]) -> Result<()> {
    let (w, h) = (map.cols, map.rows);
    let mut img = vec![0u8; w * h * 3];
    for r in 0..h {
        for c in 0..w {
            let col = class_color(map.class_at(r, c));
            let o = (r * w + c) * 3;
            for k in 0..3 {
                img[o + k] = ((col[k] as u16 + 2 * 255) / 3) as u8;
            }
        }
    }
    for (p, &l) in reference.iter().zip(labels) {
        let (r, c) = map.cell_of(*p);
        let col = class_color(l);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if (0..h as i64).contains(&rr) && (0..w as i64).contains(&cc) {
                    let o = (rr as usize * w + cc as usize) * 3;
                    img[o..o + 3].copy_from_slice(&col);
                }
            }
        }
    }
    write_rgb_png(path, w, h, &img)
}

/// `row,col,x,y,class` per cell.
pub fn write_boundary_csv(path: impl AsRef<Path>, map: &BoundaryMap) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Encode(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["row", "col", "x", "y", "class"]).map_err(csv_err)?;
    for r in 0..map.rows {
        for c in 0..map.cols {
            let p = map.cell_center(r, c);
            w.write_record([r.to_string(), c.to_string(), p[0].to_string(), p[1].to_string(), map.class_at(r, c).to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
