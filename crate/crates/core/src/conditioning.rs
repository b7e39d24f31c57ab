//! Conditioning signals for the generator.
//!
//! Every batch carries the simplex vectors `P` and their argmax labels. Only
//! [`ConditioningBatch::signal`] is handed to the generator, and in the vector
//! modes it exposes the vectors alone.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear};
use crate::scalar::Scalar;
use crate::tensor::{argmax, softmax_row, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditioningMode {
    #[serde(rename = "label")]
    LabelEmbed,
    #[serde(rename = "onehot")]
    OneHot,
    #[serde(rename = "soft")]
    SoftVector,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 3] = [
        ConditioningMode::LabelEmbed,
        ConditioningMode::OneHot,
        ConditioningMode::SoftVector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::LabelEmbed => "label",
            ConditioningMode::OneHot => "onehot",
            ConditioningMode::SoftVector => "soft",
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditioningMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown conditioning mode `{s}` (expected label, onehot or soft)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBatch<T> {
    /// `[N, n]` rows on the probability simplex.
    pub vectors: Tensor<T>,
    /// Argmax of each row.
    pub labels: Vec<usize>,
    pub mode: ConditioningMode,
}

/// What the generator is allowed to see.
#[derive(Debug, Clone, Copy)]
pub enum ConditioningSignal<'a, T> {
    Vectors(&'a Tensor<T>),
    /// Label-embedding baseline only.
    Labels(&'a [usize]),
}

impl<'a, T: Scalar> ConditioningSignal<'a, T> {
    pub fn len(&self) -> usize {
        match self {
            ConditioningSignal::Vectors(v) => v.shape()[0],
            ConditioningSignal::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> ConditioningBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.vectors.row_len()
    }

    pub fn signal(&self) -> ConditioningSignal<'_, T> {
        match self.mode {
            ConditioningMode::LabelEmbed => ConditioningSignal::Labels(&self.labels),
            ConditioningMode::OneHot | ConditioningMode::SoftVector => ConditioningSignal::Vectors(&self.vectors),
        }
    }

    /// Size of the argmax coordinate of each row.
    pub fn intensities(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.vectors.row(i)[self.labels[i]]).collect()
    }
}

/// Softmax of iid standard-normal scores at temperature 1.
pub fn sample_soft_vectors<T: Scalar, R: Rng + ?Sized>(n: usize, n_classes: usize, rng: &mut R) -> Result<ConditioningBatch<T>> {
    sample_soft_vectors_tempered(n, n_classes, 1.0, rng)
}

/// Softmax of `z / temperature` with `z` iid standard normal.
pub fn sample_soft_vectors_tempered<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    n_classes: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<ConditioningBatch<T>> {
    if n_classes < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {n_classes}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let scores = (0..n * n_classes)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) / temperature))
        .collect();
    soft_vectors_from_scores(Tensor::from_vec(&[n, n_classes], scores)?)
}

/// Row-wise softmax of given scores, labelled by argmax.
pub fn soft_vectors_from_scores<T: Scalar>(scores: Tensor<T>) -> Result<ConditioningBatch<T>> {
    if scores.shape().len() != 2 {
        return Err(Error::Shape(format!("scores must be [N, n], got {:?}", scores.shape())));
    }
    if scores.row_len() < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {}", scores.row_len())));
    }
    if !scores.is_finite() {
        return Err(Error::Domain("non-finite conditioning score".into()));
    }
    let mut vectors = Tensor::zeros(scores.shape());
    let mut labels = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        softmax_row(scores.row(i), vectors.row_mut(i));
        labels.push(argmax(vectors.row(i)));
    }
    Ok(ConditioningBatch {
        vectors,
        labels,
        mode: ConditioningMode::SoftVector,
    })
}

pub fn one_hot_vectors<T: Scalar>(labels: &[usize], n_classes: usize) -> Result<ConditioningBatch<T>> {
    let mut vectors = Tensor::zeros(&[labels.len(), n_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Domain(format!("label {l} outside [0, {n_classes})")));
        }
        vectors.row_mut(i)[l] = T::one();
    }
    Ok(ConditioningBatch {
        vectors,
        labels: labels.to_vec(),
        mode: ConditioningMode::OneHot,
    })
}

/// Row lookup in a trainable table.
pub fn embed_labels<T: Scalar>(labels: &[usize], table: &Embedding<T>) -> Result<Tensor<T>> {
    table.forward(labels)
}

/// Affine map of the conditioning vectors to the generator's hidden width.
pub fn project_conditioning<T: Scalar>(vectors: &Tensor<T>, projection: &Linear<T>) -> Result<Tensor<T>> {
    projection.forward(vectors)
}

/// Draws a batch for `mode`: soft vectors, or uniformly drawn labels as one-hot rows.
pub fn sample_conditioning<T: Scalar, R: Rng + ?Sized>(
    mode: ConditioningMode,
    n: usize,
    n_classes: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<ConditioningBatch<T>> {
    if n_classes < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {n_classes}")));
    }
    match mode {
        ConditioningMode::SoftVector => sample_soft_vectors_tempered(n, n_classes, temperature, rng),
        ConditioningMode::OneHot | ConditioningMode::LabelEmbed => {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
            let mut batch = one_hot_vectors(&labels, n_classes)?;
            batch.mode = mode;
            Ok(batch)
        }
    }
}

/// Same as [`sample_conditioning`] but with the de-facto labels fixed.
pub fn conditioning_for_labels<T: Scalar, R: Rng + ?Sized>(
    mode: ConditioningMode,
    labels: &[usize],
    n_classes: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<ConditioningBatch<T>> {
    match mode {
        ConditioningMode::SoftVector => {
            // Rejection sampling would waste ~90% of draws; swapping the
            // winning score into place gives the same conditional law.
            let mut batch: ConditioningBatch<T> = sample_soft_vectors_tempered(labels.len(), n_classes, temperature, rng)?;
            for (i, &l) in labels.iter().enumerate() {
                if l >= n_classes {
                    return Err(Error::Domain(format!("label {l} outside [0, {n_classes})")));
                }
                let row = batch.vectors.row_mut(i);
                let top = batch.labels[i];
                row.swap(top, l);
                batch.labels[i] = l;
            }
            Ok(batch)
        }
        ConditioningMode::OneHot | ConditioningMode::LabelEmbed => {
            let mut batch = one_hot_vectors(labels, n_classes)?;
            batch.mode = mode;
            Ok(batch)
        }
    }
}
