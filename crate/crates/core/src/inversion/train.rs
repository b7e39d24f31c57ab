//! Generator training against a frozen classifier, and inversion accuracy.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss_with_grad, CosineSpec, LossComponents, LossWeights, MIN_FEATURE_NORM};
use crate::classifier::{Classifier, ClassifierTrace, FeatureSet, PredictionBatch};
use crate::conditioning::{conditioning_for_labels, sample_conditioning, ConditioningMode, ConditioningSignal};
use crate::error::{Error, Result};
use crate::generator::{sample_latents, Generator, GeneratorTrace};
use crate::nn::{Adam, Grads, Mode, Param};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::tensor::Tensor;

/// A classifier that can be evaluated and differentiated but never updated.
pub trait FrozenClassifier<T: Scalar> {
    type Trace;

    fn n_classes(&self) -> usize;

    /// Eval-mode forward pass keeping what `input_gradient` needs.
    fn forward_traced(&self, images: &Tensor<T>) -> Result<(PredictionBatch<T>, FeatureSet<T>, Self::Trace)>;

    fn input_gradient(
        &self,
        trace: &Self::Trace,
        dlogits: &Tensor<T>,
        dfeatures: &[Option<Tensor<T>>],
    ) -> Result<Tensor<T>>;

    fn checksum(&self) -> String;
}

impl<T: Scalar> FrozenClassifier<T> for Classifier<T> {
    type Trace = ClassifierTrace<T>;

    fn n_classes(&self) -> usize {
        Classifier::n_classes(self)
    }

    fn forward_traced(&self, images: &Tensor<T>) -> Result<(PredictionBatch<T>, FeatureSet<T>, Self::Trace)> {
        let pass = self.forward_eval(images)?;
        Ok((pass.prediction, pass.features, pass.trace))
    }

    fn input_gradient(
        &self,
        trace: &Self::Trace,
        dlogits: &Tensor<T>,
        dfeatures: &[Option<Tensor<T>>],
    ) -> Result<Tensor<T>> {
        let dx = self.backward(trace, dlogits, dfeatures, None, true)?;
        Ok(dx.expect("input gradient requested"))
    }

    fn checksum(&self) -> String {
        Classifier::checksum(self)
    }
}

/// The trainable side of inversion.
pub trait InvertibleGenerator<T: Scalar> {
    type Trace;

    fn latent_dim(&self) -> usize;

    fn conditioning_mode(&self) -> ConditioningMode;

    fn forward_traced(
        &self,
        latents: &Tensor<T>,
        signal: ConditioningSignal<'_, T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Self::Trace)>;

    fn backward(&self, trace: &Self::Trace, dimages: &Tensor<T>, grads: &mut Grads<T>) -> Result<()>;

    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Folds train-mode statistics into the model after an optimizer step.
    fn commit(&mut self, trace: &Self::Trace);
}

impl<T: Scalar> InvertibleGenerator<T> for Generator<T> {
    type Trace = GeneratorTrace<T>;

    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn conditioning_mode(&self) -> ConditioningMode {
        self.config().conditioning
    }

    fn forward_traced(
        &self,
        latents: &Tensor<T>,
        signal: ConditioningSignal<'_, T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Self::Trace)> {
        let trace = self.forward(latents, signal, mode, rng)?;
        Ok((trace.images().clone(), trace))
    }

    fn backward(&self, trace: &Self::Trace, dimages: &Tensor<T>, grads: &mut Grads<T>) -> Result<()> {
        Generator::backward(self, trace, dimages, grads)
    }

    fn params(&self) -> Vec<&Param<T>> {
        Generator::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Generator::params_mut(self)
    }

    fn commit(&mut self, trace: &Self::Trace) {
        self.commit_batch_stats(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Softmax temperature of soft conditioning vectors.
    pub temperature: f64,
    /// Leave the logits layer out of the cosine term.
    pub cosine_exclude_logits: bool,
    /// Pair only samples sharing a de-facto label in the cosine term.
    pub cosine_per_class: bool,
    /// Eval-mode samples behind each epoch's inversion accuracy.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            weights: LossWeights::default(),
            epochs: 30,
            batches_per_epoch: 200,
            batch_size: 64,
            lr: 1e-3,
            temperature: 1.0,
            cosine_exclude_logits: false,
            cosine_per_class: false,
            eval_samples: 10_000,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for the cosine term".into()));
        }
        if self.batches_per_epoch == 0 || self.eval_samples == 0 {
            return Err(Error::Config("batches_per_epoch and eval_samples must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionEpoch {
    pub epoch: usize,
    /// Batch means over the epoch.
    pub loss: f64,
    pub kl: f64,
    pub ce: f64,
    pub cosine: f64,
    pub inversion_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionMetrics {
    pub epochs: Vec<InversionEpoch>,
    pub classifier_checksum_before: String,
    pub classifier_checksum_after: String,
}

impl InversionMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.inversion_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionAccuracy {
    pub overall: f64,
    /// Accuracy per de-facto label; `NaN` for labels never drawn.
    pub per_class: Vec<f64>,
    pub per_class_counts: Vec<usize>,
}

/// Combined loss of `images` under the classifier and its gradient with respect to `images`.
pub fn loss_and_input_gradient<T: Scalar, C: FrozenClassifier<T>>(
    classifier: &C,
    images: &Tensor<T>,
    p: &Tensor<T>,
    labels: &[usize],
    weights: &LossWeights,
    spec: &CosineSpec,
) -> Result<(LossComponents<T>, Tensor<T>)> {
    let (pred, features, trace) = classifier.forward_traced(images)?;
    let (loss, grads) = combined_loss_with_grad(weights, p, labels, &pred.logits, &features, spec)?;
    let dx = classifier.input_gradient(&trace, &grads.logits, &grads.features)?;
    Ok((loss, dx))
}

/// Trains `generator` so that the frozen classifier assigns its images the conditioning targets.
///
/// `on_epoch` receives each epoch's record as soon as it is complete.
pub fn train_generator<T, C, G>(
    classifier: &C,
    generator: &mut G,
    config: &InversionConfig,
    mut on_epoch: impl FnMut(&InversionEpoch),
) -> Result<InversionMetrics>
where
    T: Scalar,
    C: FrozenClassifier<T>,
    G: InvertibleGenerator<T>,
{
    config.validate()?;
    let before = classifier.checksum();
    let n_classes = classifier.n_classes();
    let mode = generator.conditioning_mode();
    let mut cond_rng = stream_rng(config.seed, Stream::Conditioning);
    let mut latent_rng = stream_rng(config.seed, Stream::Latent);
    let mut dropout_rng = stream_rng(config.seed, Stream::GeneratorDropout);
    let mut adam = Adam::new(config.lr, generator.params());
    let mut grads = Grads::zeros_like(generator.params());
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 4];
        for batch in 0..config.batches_per_epoch {
            let cond = sample_conditioning::<T, _>(mode, config.batch_size, n_classes, config.temperature, &mut cond_rng)?;
            let latents = sample_latents(config.batch_size, generator.latent_dim(), &mut latent_rng);
            let (images, gtrace) = generator.forward_traced(&latents, cond.signal(), Mode::Train, &mut dropout_rng)?;
            let spec = CosineSpec {
                exclude_logits: config.cosine_exclude_logits,
                same_label: config.cosine_per_class.then_some(cond.labels.as_slice()),
            };
            let (loss, dimages) =
                loss_and_input_gradient(classifier, &images, &cond.vectors, &cond.labels, &config.weights, &spec)?;
            let parts = [loss.total, loss.kl, loss.ce, loss.cosine].map(|v| v.as_f64());
            if parts.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, batch, what: "inversion loss".into() });
            }
            grads.zero();
            generator.backward(&gtrace, &dimages, &mut grads)?;
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch, what: "generator gradient".into() });
            }
            adam.step(generator.params_mut(), &grads)?;
            generator.commit(&gtrace);
            for (s, v) in sums.iter_mut().zip(parts) {
                *s += v;
            }
        }
        let acc = inversion_accuracy(classifier, generator, config.eval_samples, config.temperature, config.seed)?;
        let k = config.batches_per_epoch as f64;
        let record = InversionEpoch {
            epoch,
            loss: sums[0] / k,
            kl: sums[1] / k,
            ce: sums[2] / k,
            cosine: sums[3] / k,
            inversion_accuracy: acc.overall,
            per_class_accuracy: acc.per_class,
        };
        on_epoch(&record);
        epochs.push(record);
    }

    let after = classifier.checksum();
    if after != before {
        return Err(Error::ContractViolation(format!(
            "classifier parameters changed during inversion ({before} -> {after})"
        )));
    }
    Ok(InversionMetrics {
        epochs,
        classifier_checksum_before: before,
        classifier_checksum_after: after,
    })
}

const EVAL_BATCH: usize = 500;

/// Fraction of eval-mode generations the classifier assigns their de-facto label.
pub fn inversion_accuracy<T, C, G>(
    classifier: &C,
    generator: &G,
    n_samples: usize,
    temperature: f64,
    seed: u64,
) -> Result<InversionAccuracy>
where
    T: Scalar,
    C: FrozenClassifier<T>,
    G: InvertibleGenerator<T>,
{
    if n_samples < 1 {
        return Err(Error::Domain("inversion accuracy needs at least one sample".into()));
    }
    let n_classes = classifier.n_classes();
    let mode = generator.conditioning_mode();
    let mut rng = stream_rng(seed, Stream::Evaluation);
    let mut unused = stream_rng(seed, Stream::Evaluation);
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut done = 0;
    while done < n_samples {
        let n = EVAL_BATCH.min(n_samples - done);
        let cond = sample_conditioning::<T, _>(mode, n, n_classes, temperature, &mut rng)?;
        let latents = sample_latents(n, generator.latent_dim(), &mut rng);
        let (images, _) = generator.forward_traced(&latents, cond.signal(), Mode::Eval, &mut unused)?;
        let (pred, _, _) = classifier.forward_traced(&images)?;
        for (&want, &got) in cond.labels.iter().zip(&pred.labels) {
            counts[want] += 1;
            hits[want] += usize::from(want == got);
        }
        done += n;
    }
    let per_class = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 })
        .collect();
    Ok(InversionAccuracy {
        overall: hits.iter().sum::<usize>() as f64 / n_samples as f64,
        per_class,
        per_class_counts: counts,
    })
}

/// Mean cosine similarity over ordered pairs `i != j` of the rows of `features`.
///
/// Rows with norm below the feature floor contribute zero similarity.
pub fn mean_pairwise_cosine<T: Scalar>(features: &Tensor<T>) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 rows, got {n}")));
    }
    let units: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = features.row(i).iter().map(|v| v.as_f64()).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < MIN_FEATURE_NORM {
                vec![0.0; r.len()]
            } else {
                r.iter().map(|v| v / norm).collect()
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Within-class mean pairwise cosine of penultimate features, `per_class` eval-mode images per class.
pub fn within_class_similarity<T, C, G>(
    classifier: &C,
    generator: &G,
    per_class: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<f64>>
where
    T: Scalar,
    C: FrozenClassifier<T>,
    G: InvertibleGenerator<T>,
{
    let n_classes = classifier.n_classes();
    let mut rng = stream_rng(seed, Stream::Analysis);
    let mut unused = stream_rng(seed, Stream::Analysis);
    let mut out = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let labels = vec![class; per_class];
        let cond =
            conditioning_for_labels::<T, _>(generator.conditioning_mode(), &labels, n_classes, temperature, &mut rng)?;
        let latents = sample_latents(per_class, generator.latent_dim(), &mut rng);
        let (images, _) = generator.forward_traced(&latents, cond.signal(), Mode::Eval, &mut unused)?;
        let (_, features, _) = classifier.forward_traced(&images)?;
        let pen = features
            .penultimate()
            .ok_or_else(|| Error::Config("classifier has no penultimate layer".into()))?;
        out.push(mean_pairwise_cosine(pen)?);
    }
    Ok(out)
}
