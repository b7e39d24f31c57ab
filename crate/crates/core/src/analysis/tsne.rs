//! Exact t-SNE (O(N^2) per iteration).

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMethod {
    Tsne,
    Penultimate2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub method: EmbeddingMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// Defaults to `N / 12`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-conditional Gaussian affinities with entropy `ln(perplexity)`, found by bisection on the precision.
fn conditional_affinities(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let e = (-beta * row[j]).exp();
                p[i * n + j] = e;
                sum += e;
                weighted += e * row[j];
            }
            let sum = sum.max(f64::MIN_POSITIVE);
            let entropy = sum.ln() + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let gap = entropy - target;
            if gap.abs() < 1e-5 {
                break;
            }
            if gap > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    p
}

/// Embeds the rows of `features` in the plane.
pub fn tsne_embed<T: Scalar>(features: &Tensor<T>, labels: &[usize], config: &TsneConfig, seed: u64) -> Result<Embedding2D> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} feature rows", labels.len())));
    }
    if features.shape().len() != 2 || features.row_len() < 2 {
        return Err(Error::Domain(format!("t-SNE needs features of width >= 2, got {:?}", features.shape())));
    }
    if !(config.perplexity > 0.0 && (n as f64) > 3.0 * config.perplexity) {
        return Err(Error::Domain(format!(
            "perplexity {} too large for {n} points (need N > 3 * perplexity)",
            config.perplexity
        )));
    }
    if !features.is_finite() {
        return Err(Error::Domain("non-finite feature value".into()));
    }
    let x: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).iter().map(|v| v.as_f64()).collect()).collect();
    let cond = conditional_affinities(&squared_distances(&x), n, config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = stream_rng(seed, Stream::Tsne);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [1e-2 * rng.sample::<f64, _>(StandardNormal), 1e-2 * rng.sample::<f64, _>(StandardNormal)])
        .collect();
    let lr = config.learning_rate.unwrap_or(n as f64 / 12.0);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iterations { config.exaggeration } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in (0..n).filter(|&j| j != i) {
                let q = num[i * n + j];
                let m = (exag * p[i * n + j] - q / z) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { (gains[i][k] * 0.8).max(0.01) } else { gains[i][k] + 0.2 };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]]);
        for p in &mut y {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { epoch: 0, batch: config.iterations, what: "t-SNE coordinate".into() });
    }
    Ok(Embedding2D { coords: y, labels: labels.to_vec(), method: EmbeddingMethod::Tsne })
}

/// `x,y,label` per point.
pub fn write_embedding_csv(path: impl AsRef<Path>, emb: &Embedding2D) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Encode(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "label"]).map_err(csv_err)?;
    for (p, l) in emb.coords.iter().zip(&emb.labels) {
        w.write_record([p[0].to_string(), p[1].to_string(), l.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
