//! The three inversion objectives and their weighted sum.
//!
//! Every loss has a value-only form used for reporting and testing, and a
//! `*_with_grad` form returning the gradient with respect to classifier
//! logits and hooked features.

use serde::{Deserialize, Serialize};

use crate::classifier::FeatureSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_sum_exp, softmax_row, Tensor};

/// Lower clamp applied to `Q` inside the KL logarithm.
pub const KL_EPS: f64 = 1e-8;
/// Feature rows shorter than this contribute zero similarity.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Which hooked layers and which sample pairs enter the cosine term.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineSpec<'a> {
    /// Leave out the logits layer (the last entry of the feature set).
    pub exclude_logits: bool,
    /// Restrict pairs to samples sharing a label.
    pub same_label: Option<&'a [usize]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents<T> {
    pub total: T,
    pub kl: T,
    pub ce: T,
    pub cosine: T,
}

fn check_matrix_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    if a.shape().len() != 2 || a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((a.shape()[0], a.shape()[1]))
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!("label {l} outside [0, {classes})")));
    }
    Ok(())
}

/// Batch mean of `sum_j p_j log(p_j / max(q_j, eps))`, with `0 log 0 = 0`.
pub fn kl_loss<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>) -> Result<T> {
    let (n, _) = check_matrix_pair(p, q)?;
    if !p.is_finite() || !q.is_finite() {
        return Err(Error::Domain("KL divergence of non-finite distributions".into()));
    }
    if n == 0 {
        return Err(Error::Domain("KL divergence of an empty batch".into()));
    }
    let eps = T::lit(KL_EPS);
    let mut total = T::zero();
    for i in 0..n {
        for (&pj, &qj) in p.row(i).iter().zip(q.row(i)) {
            if pj > T::zero() {
                total += pj * (pj.ln() - qj.max(eps).ln());
            }
        }
    }
    Ok(total / T::from_usize_lossy(n))
}

/// KL divergence against `Q = softmax(logits)` and its gradient w.r.t. the logits.
pub fn kl_loss_with_grad<T: Scalar>(p: &Tensor<T>, logits: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, k) = check_matrix_pair(p, logits)?;
    if !p.is_finite() || !logits.is_finite() {
        return Err(Error::Domain("KL divergence of non-finite inputs".into()));
    }
    if n == 0 {
        return Err(Error::Domain("KL divergence of an empty batch".into()));
    }
    let eps = T::lit(KL_EPS);
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut q = vec![T::zero(); k];
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    for i in 0..n {
        let (pr, zr) = (p.row(i), logits.row(i));
        softmax_row(zr, &mut q);
        let lse = log_sum_exp(zr);
        // Gradient of -sum_j p_j log(max(q_j, eps)): the clamp is flat below eps.
        let mut active_mass = T::zero();
        for j in 0..k {
            let unclamped = q[j] > eps;
            if pr[j] > T::zero() {
                let log_q = if unclamped { zr[j] - lse } else { eps.ln() };
                total += pr[j] * (pr[j].ln() - log_q);
            }
            if unclamped {
                active_mass += pr[j];
            }
        }
        let g = grad.row_mut(i);
        for j in 0..k {
            let own = if q[j] > eps { pr[j] } else { T::zero() };
            g[j] = (q[j] * active_mass - own) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn ce_loss<T: Scalar>(labels: &[usize], logits: &Tensor<T>) -> Result<T> {
    Ok(ce_loss_with_grad(labels, logits)?.0)
}

pub fn ce_loss_with_grad<T: Scalar>(labels: &[usize], logits: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!("logits must be [N, n], got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    check_labels(labels, n, k)?;
    if n == 0 {
        return Err(Error::Domain("cross entropy of an empty batch".into()));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let zr = logits.row(i);
        total += log_sum_exp(zr) - zr[y];
        let g = grad.row_mut(i);
        softmax_row(zr, g);
        g[y] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok((total * inv_n, grad))
}

/// Mean pairwise cosine similarity of one layer's rows, plus its gradient.
///
/// Returns `(value, grad, pair_count)`; a layer with no eligible pairs
/// contributes zero.
fn layer_cosine<T: Scalar>(f: &Tensor<T>, same_label: Option<&[usize]>) -> (T, Tensor<T>, usize) {
    let (n, d) = (f.rows(), f.row_len());
    let min_norm = T::lit(MIN_FEATURE_NORM);
    let mut units = Tensor::zeros(&[n, d]);
    let mut norms = vec![T::zero(); n];
    for (i, slot) in norms.iter_mut().enumerate() {
        let row = f.row(i);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        *slot = norm;
        if norm >= min_norm {
            for (u, &v) in units.row_mut(i).iter_mut().zip(row) {
                *u = v / norm;
            }
        }
    }
    // Each sample's group: every pair, or pairs sharing a label.
    let group_of = |i: usize| same_label.map_or(0, |l| l[i]);
    let n_groups = same_label.map_or(1, |l| l.iter().copied().max().map_or(1, |m| m + 1));
    let mut sums = vec![vec![T::zero(); d]; n_groups];
    let mut sizes = vec![0usize; n_groups];
    for i in 0..n {
        let g = group_of(i);
        sizes[g] += 1;
        for (s, &u) in sums[g].iter_mut().zip(units.row(i)) {
            *s += u;
        }
    }
    let pairs: usize = sizes.iter().map(|&s| s * s.saturating_sub(1)).sum();
    let mut grad = Tensor::zeros(&[n, d]);
    if pairs == 0 {
        return (T::zero(), grad, 0);
    }
    let inv_pairs = T::one() / T::from_usize_lossy(pairs);
    let mut total = T::zero();
    for s in &sums {
        total += s.iter().map(|&v| v * v).sum::<T>();
    }
    for i in 0..n {
        total -= units.row(i).iter().map(|&v| v * v).sum::<T>();
    }
    let two = T::lit(2.0);
    for i in 0..n {
        if norms[i] < min_norm {
            continue;
        }
        let u = units.row(i);
        let s = &sums[group_of(i)];
        // dL/du_i = 2 (S - u_i) / pairs, projected onto the tangent space of u_i.
        let gu: Vec<T> = s.iter().zip(u).map(|(&sv, &uv)| two * (sv - uv) * inv_pairs).collect();
        let radial = gu.iter().zip(u).map(|(&a, &b)| a * b).sum::<T>();
        for ((g, &gv), &uv) in grad.row_mut(i).iter_mut().zip(&gu).zip(u) {
            *g = (gv - uv * radial) / norms[i];
        }
    }
    (total * inv_pairs, grad, pairs)
}

fn selected_layers<T: Scalar>(features: &FeatureSet<T>, spec: &CosineSpec) -> Result<Vec<usize>> {
    let n = features.batch_size();
    if n < 2 {
        return Err(Error::Domain(format!("cosine diversity needs a batch of at least 2, got {n}")));
    }
    if let Some(l) = spec.same_label {
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", l.len())));
        }
    }
    let count = features.per_layer.len();
    let layers: Vec<usize> = if spec.exclude_logits && count > 1 {
        (0..count - 1).collect()
    } else {
        (0..count).collect()
    };
    if layers.is_empty() {
        return Err(Error::Domain("no hooked layers to compare".into()));
    }
    Ok(layers)
}

/// Layer-averaged mean cosine similarity over ordered pairs `i != j`.
pub fn cosine_diversity_loss<T: Scalar>(features: &FeatureSet<T>, spec: &CosineSpec) -> Result<T> {
    Ok(cosine_diversity_loss_with_grad(features, spec)?.0)
}

/// Value and per-layer feature gradients (`None` for layers left out).
pub fn cosine_diversity_loss_with_grad<T: Scalar>(
    features: &FeatureSet<T>,
    spec: &CosineSpec,
) -> Result<(T, Vec<Option<Tensor<T>>>)> {
    let layers = selected_layers(features, spec)?;
    let scale = T::one() / T::from_usize_lossy(layers.len());
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; features.per_layer.len()];
    let mut total = T::zero();
    for &l in &layers {
        let (v, mut g, _) = layer_cosine(&features.per_layer[l], spec.same_label);
        total += v;
        g.scale(scale);
        grads[l] = Some(g);
    }
    let value = (total * scale).max(-T::one()).min(T::one());
    Ok((value, grads))
}

/// `alpha * KL(P || Q) + beta * CE + gamma * cosine`, plus each component.
pub fn combined_loss<T: Scalar>(
    w: &LossWeights,
    p: &Tensor<T>,
    q: &Tensor<T>,
    labels: &[usize],
    logits: &Tensor<T>,
    features: &FeatureSet<T>,
    spec: &CosineSpec,
) -> Result<LossComponents<T>> {
    w.validate()?;
    let kl = kl_loss(p, q)?;
    let ce = ce_loss(labels, logits)?;
    let cosine = cosine_diversity_loss(features, spec)?;
    Ok(weigh(w, kl, ce, cosine))
}

fn weigh<T: Scalar>(w: &LossWeights, kl: T, ce: T, cosine: T) -> LossComponents<T> {
    LossComponents {
        total: T::lit(w.alpha) * kl + T::lit(w.beta) * ce + T::lit(w.gamma) * cosine,
        kl,
        ce,
        cosine,
    }
}

/// Gradients of the combined loss.
pub struct LossGrads<T> {
    pub logits: Tensor<T>,
    /// Extra gradient at each hooked feature; `None` where nothing flows.
    pub features: Vec<Option<Tensor<T>>>,
}

/// Combined loss with `Q = softmax(logits)`, and its gradient.
///
/// Terms with zero weight are still evaluated for reporting but contribute
/// no gradient.
pub fn combined_loss_with_grad<T: Scalar>(
    w: &LossWeights,
    p: &Tensor<T>,
    labels: &[usize],
    logits: &Tensor<T>,
    features: &FeatureSet<T>,
    spec: &CosineSpec,
) -> Result<(LossComponents<T>, LossGrads<T>)> {
    w.validate()?;
    let (kl, mut g_kl) = kl_loss_with_grad(p, logits)?;
    let (ce, mut g_ce) = ce_loss_with_grad(labels, logits)?;
    let (cosine, mut g_cos) = cosine_diversity_loss_with_grad(features, spec)?;

    g_kl.scale(T::lit(w.alpha));
    g_ce.scale(T::lit(w.beta));
    g_kl.add_assign(&g_ce)?;
    let gamma = T::lit(w.gamma);
    for g in g_cos.iter_mut().flatten() {
        g.scale(gamma);
    }
    if w.gamma == 0.0 {
        g_cos.iter_mut().for_each(|g| *g = None);
    }
    Ok((
        weigh(w, kl, ce, cosine),
        LossGrads {
            logits: g_kl,
            features: g_cos,
        },
    ))
}
