use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Ten well-separated class colors; further classes cycle.
const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn class_color(class: usize) -> [u8; 3] {
    PALETTE[class % PALETTE.len()]
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| Error::Encode(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(data).map_err(encode)?;
    writer.finish().map_err(encode)
}

pub fn write_gray_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path.as_ref(), width, height, png::ColorType::Grayscale, data)
}

pub fn write_rgb_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path.as_ref(), width, height, png::ColorType::Rgb, data)
}

/// Square scatter plot of labelled 2-D points on a white canvas.
pub fn write_scatter_png(path: impl AsRef<Path>, coords: &[[f64; 2]], labels: &[usize], side: usize) -> Result<()> {
    let mut img = vec![255u8; side * side * 3];
    if !coords.is_empty() {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in coords {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let pad = 4.0;
        let usable = side as f64 - 2.0 * pad - 1.0;
        let to_px = |v: f64, k: usize| {
            let span = (hi[k] - lo[k]).max(1e-12);
            (pad + (v - lo[k]) / span * usable).round() as isize
        };
        for (p, &l) in coords.iter().zip(labels) {
            let (cx, cy) = (to_px(p[0], 0), side as isize - 1 - to_px(p[1], 1));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (cx + dx, cy + dy);
                    if (0..side as isize).contains(&x) && (0..side as isize).contains(&y) {
                        let o = (y as usize * side + x as usize) * 3;
                        img[o..o + 3].copy_from_slice(&class_color(l));
                    }
                }
            }
        }
    }
    write_rgb_png(path, side, side, &img)
}
