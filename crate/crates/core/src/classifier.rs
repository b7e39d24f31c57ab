//! Convolutional classifier: trained on labeled images, then frozen and inverted.
//!
//! Every fully connected layer is hooked: its post-activation output (raw
//! output for the logits layer) is returned in a [`FeatureSet`] and can
//! receive an extra gradient during backpropagation.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data_io::{Checkpoint, CheckpointKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::inversion::ce_loss_with_grad;
use crate::nn::{
    slot, Adam, BatchNorm2d, BatchNormCache, Conv2d, Conv2dCache, ConvGeometry, Dropout, Grads, LeakyRelu, Linear,
    MaxPool2d, MaxPoolCache, Mode, Param,
};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::state::{self, NamedState, StateVisitor, StateVisitorMut};
use crate::tensor::{argmax, softmax_rows, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Output channels of each conv block; empty for a plain FC network.
    pub conv_channels: Vec<usize>,
    /// FC widths, ending in `n_classes`.
    pub fc_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub n_classes: usize,
    /// Insert a 2-unit layer just before the logits.
    pub penultimate_2d: bool,
    /// Side length of the square single-channel input.
    pub input_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            conv_channels: vec![32, 64],
            fc_dims: vec![128, 10],
            leaky_slope: 0.01,
            dropout_rate: 0.3,
            n_classes: 10,
            penultimate_2d: false,
            input_size: 28,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.fc_dims.last() != Some(&self.n_classes) || self.fc_dims.contains(&0) {
            return Err(Error::Config(format!(
                "fc_dims {:?} must be positive and end in n_classes = {}",
                self.fc_dims, self.n_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        let mut side = self.input_size;
        for (i, _) in self.conv_channels.iter().enumerate() {
            side = MaxPool2d::output_hw(side, side).0;
            if side < 1 {
                return Err(Error::Config(format!(
                    "a {0}x{0} input collapses below 1x1 at conv block {i}",
                    self.input_size
                )));
            }
        }
        Ok(())
    }

    /// FC widths actually built, including the 2-unit layer when requested.
    pub fn resolved_fc_dims(&self) -> Vec<usize> {
        let mut dims = self.fc_dims.clone();
        if self.penultimate_2d {
            let last = dims.len() - 1;
            dims.insert(last, 2);
        }
        dims
    }

    pub fn flat_dim(&self) -> usize {
        let side = self
            .conv_channels
            .iter()
            .fold(self.input_size, |s, _| MaxPool2d::output_hw(s, s).0);
        side * side * self.conv_channels.last().copied().unwrap_or(1)
    }
}

/// Classifier outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> PredictionBatch<T> {
    pub fn from_logits(logits: Tensor<T>) -> Self {
        let probs = softmax_rows(&logits);
        let labels = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
        PredictionBatch { logits, probs, labels }
    }
}

/// Hooked FC activations, one `[N, d_k]` matrix per FC layer in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    pub per_layer: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn batch_size(&self) -> usize {
        self.per_layer.first().map_or(0, Tensor::rows)
    }

    /// Output of the layer feeding the logits.
    pub fn penultimate(&self) -> Option<&Tensor<T>> {
        let n = self.per_layer.len();
        (n >= 2).then(|| &self.per_layer[n - 2])
    }

    pub fn logits(&self) -> Option<&Tensor<T>> {
        self.per_layer.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    config: ClassifierConfig,
    blocks: Vec<ConvBlock<T>>,
    fcs: Vec<Linear<T>>,
}

struct BlockTrace<T> {
    conv: Conv2dCache<T>,
    bn: BatchNormCache<T>,
    normed: Tensor<T>,
    pool: MaxPoolCache,
}

struct FcTrace<T> {
    input: Tensor<T>,
    pre_act: Tensor<T>,
    mask: Option<Vec<T>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ClassifierTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    conv_out_shape: Vec<usize>,
    fcs: Vec<FcTrace<T>>,
}

/// Result of a traced forward pass.
pub struct ForwardPass<T> {
    pub prediction: PredictionBatch<T>,
    pub features: FeatureSet<T>,
    pub trace: ClassifierTrace<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::ClassifierInit);
        let mut blocks = Vec::new();
        let (mut channels, mut side) = (1, config.input_size);
        for &out in &config.conv_channels {
            let geom = ConvGeometry::new(channels, side, side, 3, 1, 1)?;
            blocks.push(ConvBlock {
                conv: Conv2d::new(geom, out, &mut rng),
                bn: BatchNorm2d::new(out),
            });
            channels = out;
            side = MaxPool2d::output_hw(side, side).0;
        }
        let mut fcs = Vec::new();
        let mut width = config.flat_dim();
        for d in config.resolved_fc_dims() {
            fcs.push(Linear::new(width, d, &mut rng));
            width = d;
        }
        Ok(Classifier { config, blocks, fcs })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn fc_layer_count(&self) -> usize {
        self.fcs.len()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.conv.params());
            out.extend(b.bn.params());
        }
        for f in &self.fcs {
            out.extend(f.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.conv.params_mut());
            out.extend(b.bn.params_mut());
        }
        for f in &mut self.fcs {
            out.extend(f.params_mut());
        }
        out
    }

    /// The logits layer, mapping the penultimate features to class scores.
    pub fn final_layer(&self) -> &Linear<T> {
        self.fcs.last().expect("validated config has an FC layer")
    }

    fn fc_param_offset(&self, j: usize) -> usize {
        self.blocks.len() * (Conv2d::<T>::PARAMS + BatchNorm2d::<T>::PARAMS) + j * Linear::<T>::PARAMS
    }

    /// Forward pass recording features and the backward trace.
    ///
    /// `rng` drives dropout and is untouched in eval mode.
    pub fn forward_with_features(&self, images: &Tensor<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<ForwardPass<T>> {
        let side = self.config.input_size;
        match images.shape() {
            [_, 1, h, w] if *h == side && *w == side => {}
            s => return Err(Error::Shape(format!("classifier expects [N, 1, {side}, {side}], got {s:?}"))),
        }
        let act = LeakyRelu { slope: self.config.leaky_slope };
        let drop = Dropout { rate: self.config.dropout_rate };

        let mut x = images.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (c, conv) = b.conv.forward(&x)?;
            let (normed, bn) = b.bn.forward(&c, mode)?;
            let a = act.forward(&normed);
            let (p, pool) = MaxPool2d.forward(&a)?;
            blocks.push(BlockTrace { conv, bn, normed, pool });
            x = p;
        }
        let conv_out_shape = x.shape().to_vec();
        let n = x.rows();
        x = x.reshape(&[n, self.config.flat_dim()])?;

        let last = self.fcs.len() - 1;
        let mut fcs = Vec::with_capacity(self.fcs.len());
        let mut features = Vec::with_capacity(self.fcs.len());
        for (j, layer) in self.fcs.iter().enumerate() {
            let z = layer.forward(&x)?;
            if j == last {
                features.push(z.clone());
                fcs.push(FcTrace { input: x, pre_act: z.clone(), mask: None });
                x = z;
                break;
            }
            let a = act.forward(&z);
            features.push(a.clone());
            let (d, mask) = drop.forward(&a, mode, rng);
            fcs.push(FcTrace { input: x, pre_act: z, mask });
            x = d;
        }
        Ok(ForwardPass {
            prediction: PredictionBatch::from_logits(x),
            features: FeatureSet { per_layer: features },
            trace: ClassifierTrace { blocks, conv_out_shape, fcs },
        })
    }

    /// Eval-mode prediction.
    pub fn predict(&self, images: &Tensor<T>) -> Result<PredictionBatch<T>> {
        Ok(self.forward_eval(images)?.prediction)
    }

    pub fn forward_eval(&self, images: &Tensor<T>) -> Result<ForwardPass<T>> {
        // Eval mode draws nothing from the generator.
        let mut unused = stream_rng(0, Stream::Evaluation);
        self.forward_with_features(images, Mode::Eval, &mut unused)
    }

    /// Backpropagates `dlogits` plus optional per-feature gradients.
    ///
    /// Parameter gradients accumulate into `grads` when given; the input
    /// gradient is computed only when `need_input_grad`.
    pub fn backward(
        &self,
        trace: &ClassifierTrace<T>,
        dlogits: &Tensor<T>,
        dfeatures: &[Option<Tensor<T>>],
        mut grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let act = LeakyRelu { slope: self.config.leaky_slope };
        let last = self.fcs.len() - 1;
        let extra = |j: usize| dfeatures.get(j).and_then(Option::as_ref);

        let mut g = dlogits.clone();
        if let Some(df) = extra(last) {
            g.add_assign(df)?;
        }
        for j in (0..self.fcs.len()).rev() {
            let t = &trace.fcs[j];
            if j != last {
                let mut ga = Dropout::backward(t.mask.as_ref(), &g);
                if let Some(df) = extra(j) {
                    ga.add_assign(df)?;
                }
                g = act.backward(&t.pre_act, &ga);
            }
            let off = self.fc_param_offset(j);
            g = self.fcs[j].backward(&t.input, &g, slot(&mut grads, off, Linear::<T>::PARAMS));
        }

        let mut g = g.reshape(&trace.conv_out_shape)?;
        let per_block = Conv2d::<T>::PARAMS + BatchNorm2d::<T>::PARAMS;
        for (i, (b, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let ga = MaxPool2d.backward(&t.pool, &g);
            let gn = act.backward(&t.normed, &ga);
            let off = i * per_block;
            let gc = b.bn.backward(&t.bn, &gn, slot(&mut grads, off + Conv2d::<T>::PARAMS, BatchNorm2d::<T>::PARAMS));
            let need_dx = i > 0 || need_input_grad;
            match b.conv.backward(&t.conv, &gc, slot(&mut grads, off, Conv2d::<T>::PARAMS), need_dx) {
                Some(dx) => g = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Folds train-mode batch statistics into the batch-norm running estimates.
    pub fn commit_batch_stats(&mut self, trace: &ClassifierTrace<T>) {
        for (b, t) in self.blocks.iter_mut().zip(&trace.blocks) {
            if let Some(s) = &t.bn.stats {
                b.bn.commit(s);
            }
        }
    }

    /// SHA-256 of every parameter and buffer.
    pub fn checksum(&self) -> String {
        state::state_checksum(self)
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64) -> Result<Checkpoint> {
        let config = serde_json::to_value(&self.config).map_err(|e| Error::Encode(e.to_string()))?;
        Ok(state::to_checkpoint(self, CheckpointKind::Classifier, config, seed, epoch))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Classifier)?;
        let config: ClassifierConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Integrity(format!("classifier config: {e}")))?;
        let mut model = Classifier::new(config, ckpt.seed)?;
        state::load_state(&mut model, ckpt)?;
        Ok(model)
    }
}

impl<T: Scalar> NamedState<T> for Classifier<T> {
    fn visit_state(&self, f: &mut StateVisitor<'_, T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("conv.{i}.weight"), &b.conv.weight.shape, &b.conv.weight.value);
            f(&format!("conv.{i}.bias"), &b.conv.bias.shape, &b.conv.bias.value);
            f(&format!("bn.{i}.gamma"), &b.bn.gamma.shape, &b.bn.gamma.value);
            f(&format!("bn.{i}.beta"), &b.bn.beta.shape, &b.bn.beta.value);
            let c = [b.bn.channels()];
            f(&format!("bn.{i}.running_mean"), &c, &b.bn.running_mean);
            f(&format!("bn.{i}.running_var"), &c, &b.bn.running_var);
        }
        for (j, l) in self.fcs.iter().enumerate() {
            f(&format!("fc.{j}.weight"), &l.weight.shape, &l.weight.value);
            f(&format!("fc.{j}.bias"), &l.bias.shape, &l.bias.value);
        }
    }

    fn visit_state_mut(&mut self, f: &mut StateVisitorMut<'_, T>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("conv.{i}.weight"), &b.conv.weight.shape, &mut b.conv.weight.value);
            f(&format!("conv.{i}.bias"), &b.conv.bias.shape, &mut b.conv.bias.value);
            f(&format!("bn.{i}.gamma"), &b.bn.gamma.shape, &mut b.bn.gamma.value);
            f(&format!("bn.{i}.beta"), &b.bn.beta.shape, &mut b.bn.beta.value);
            let c = [b.bn.channels()];
            f(&format!("bn.{i}.running_mean"), &c, &mut b.bn.running_mean);
            f(&format!("bn.{i}.running_var"), &c, &mut b.bn.running_var);
        }
        for (j, l) in self.fcs.iter_mut().enumerate() {
            f(&format!("fc.{j}.weight"), &l.weight.shape, &mut l.weight.value);
            f(&format!("fc.{j}.bias"), &l.bias.shape, &mut l.bias.value);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

/// Minimizes cross entropy with Adam on shuffled mini-batches.
///
/// `on_epoch` sees each record as soon as the epoch's test accuracy is known.
pub fn train_classifier<T: Scalar>(
    model: &mut Classifier<T>,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if opts.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
    }
    if train.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let mut shuffle_rng = stream_rng(opts.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(opts.seed, Stream::ClassifierDropout);
    let mut adam = Adam::new(opts.lr, model.params());
    let mut grads = Grads::zeros_like(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        // A trailing batch of one cannot be batch-normalized; drop it.
        for (b, idx) in order.chunks(opts.batch_size).filter(|c| c.len() >= 2).enumerate() {
            let (images, labels) = train.batch(idx);
            let pass = model.forward_with_features(&images, Mode::Train, &mut dropout_rng)?;
            let (loss, dlogits) = ce_loss_with_grad(&labels, &pass.prediction.logits)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, what: "cross-entropy loss".into() });
            }
            grads.zero();
            model.backward(&pass.trace, &dlogits, &[], Some(&mut grads), false)?;
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, what: "gradient".into() });
            }
            adam.step(model.params_mut(), &grads)?;
            model.commit_batch_stats(&pass.trace);
            loss_sum += loss.as_f64();
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            test_accuracy: evaluate(model, test)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

/// Fraction of samples whose eval-mode argmax matches the label.
pub fn evaluate<T: Scalar>(model: &Classifier<T>, dataset: &LabeledDataset<T>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(500) {
        let (images, labels) = dataset.batch(chunk);
        let pred = model.predict(&images)?;
        correct += pred.labels.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_images(n: usize, side: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[n, 1, side, side], (0..n * side * side).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn default_forward_shapes() {
        let model = Classifier::<f32>::new(ClassifierConfig::default(), 1).unwrap();
        let pass = model.forward_eval(&random_images(2, 28, 0)).unwrap();
        assert_eq!(pass.prediction.logits.shape(), &[2, 10]);
        let widths: Vec<_> = pass.features.per_layer.iter().map(|f| f.shape().to_vec()).collect();
        assert_eq!(widths, vec![vec![2, 128], vec![2, 10]]);
    }

    #[test]
    fn feature_set_has_one_matrix_per_fc_layer() {
        let model = Classifier::<f32>::new(ClassifierConfig::default(), 1).unwrap();
        let pass = model.forward_eval(&random_images(16, 28, 2)).unwrap();
        assert_eq!(pass.features.per_layer.len(), model.fc_layer_count());
        assert!(pass.features.per_layer.iter().all(|f| f.rows() == 16));
        for i in 0..16 {
            let s: f32 = pass.prediction.probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert_eq!(pass.prediction.labels[i], argmax(pass.prediction.probs.row(i)));
        }
    }

    #[test]
    fn penultimate_2d_inserts_two_unit_layer() {
        let cfg = ClassifierConfig { penultimate_2d: true, ..Default::default() };
        assert_eq!(cfg.resolved_fc_dims(), vec![128, 2, 10]);
        let model = Classifier::<f32>::new(cfg, 0).unwrap();
        assert_eq!(model.final_layer().in_dim(), 2);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = Classifier::<f32>::new(ClassifierConfig::default(), 5).unwrap();
        let b = Classifier::<f32>::new(ClassifierConfig::default(), 5).unwrap();
        let c = Classifier::<f32>::new(ClassifierConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn duplicated_input_gives_identical_feature_rows() {
        let model = Classifier::<f32>::new(ClassifierConfig::default(), 3).unwrap();
        let one = random_images(1, 28, 9);
        let two = one.select_rows(&[0, 0]);
        let pass = model.forward_eval(&two).unwrap();
        for f in &pass.features.per_layer {
            assert_eq!(f.row(0), f.row(1));
        }
        let again = model.forward_eval(&two).unwrap();
        assert_eq!(pass.prediction, again.prediction);
    }

    #[test]
    fn too_deep_for_input_is_config_error() {
        let cfg = ClassifierConfig { conv_channels: vec![4; 5], ..Default::default() };
        assert!(matches!(Classifier::<f32>::new(cfg, 0), Err(Error::Config(_))));
        let cfg = ClassifierConfig { fc_dims: vec![128, 9], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ClassifierConfig { dropout_rate: 1.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn no_conv_blocks_is_a_plain_fc_network() {
        let cfg = ClassifierConfig { conv_channels: vec![], fc_dims: vec![16, 10], input_size: 8, ..Default::default() };
        assert_eq!(cfg.flat_dim(), 64);
        let model = Classifier::<f32>::new(cfg, 0).unwrap();
        let pass = model.forward_eval(&random_images(3, 8, 1)).unwrap();
        assert_eq!(pass.features.per_layer.len(), 2);
        assert_eq!(pass.prediction.logits.shape(), &[3, 10]);
    }

    #[test]
    fn wrong_spatial_dims_is_shape_error() {
        let model = Classifier::<f32>::new(ClassifierConfig::default(), 0).unwrap();
        assert!(matches!(model.forward_eval(&random_images(1, 27, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let model = Classifier::<f32>::new(ClassifierConfig::default(), 8).unwrap();
        let ckpt = model.to_checkpoint(8, 3).unwrap();
        let back = Classifier::<f32>::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back, model);
        let mut wrong = ckpt.clone();
        wrong.kind = CheckpointKind::Generator;
        assert!(matches!(Classifier::<f32>::from_checkpoint(&wrong), Err(Error::Kind { .. })));
    }

    fn tiny() -> ClassifierConfig {
        ClassifierConfig {
            conv_channels: vec![2],
            fc_dims: vec![5, 3],
            n_classes: 3,
            input_size: 6,
            dropout_rate: 0.0,
            leaky_slope: 0.1,
            penultimate_2d: false,
        }
    }

    #[test]
    fn eval_backward_matches_finite_differences() {
        let mut model = Classifier::<f64>::new(tiny(), 4).unwrap();
        // Non-trivial running statistics.
        for (k, b) in model.blocks.iter_mut().enumerate() {
            b.bn.running_mean = vec![0.1 * k as f64 + 0.05; b.bn.channels()];
            b.bn.running_var = vec![0.7; b.bn.channels()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(&[2, 1, 6, 6], (0..72).map(|_| rng.random()).collect()).unwrap();
        let w_logits: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w_hidden: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &Tensor<f64>| -> f64 {
            let p = model.forward_eval(x).unwrap();
            let a: f64 = p.prediction.logits.data().iter().zip(&w_logits).map(|(a, b)| a * b).sum();
            let b: f64 = p.features.per_layer[0].data().iter().zip(&w_hidden).map(|(a, b)| a * b).sum();
            a + b
        };
        let pass = model.forward_eval(&x).unwrap();
        let dlogits = Tensor::from_vec(&[2, 3], w_logits.clone()).unwrap();
        let dhidden = Tensor::from_vec(&[2, 5], w_hidden.clone()).unwrap();
        let mut grads = Grads::zeros_like(model.params());
        let dx = model
            .backward(&pass.trace, &dlogits, &[Some(dhidden), None], Some(&mut grads), true)
            .unwrap()
            .unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "pixel {i}: {fd} vs {}", dx.data()[i]);
        }
        // First conv weight gradient.
        let g0 = grads.0[0].clone();
        for (i, &g) in g0.iter().enumerate() {
            let mut mp = model.clone();
            mp.blocks[0].conv.weight.value[i] += eps;
            let mut mm = model.clone();
            mm.blocks[0].conv.weight.value[i] -= eps;
            let lp = {
                let p = mp.forward_eval(&x).unwrap();
                let a: f64 = p.prediction.logits.data().iter().zip(&w_logits).map(|(a, b)| a * b).sum();
                a + p.features.per_layer[0].data().iter().zip(&w_hidden).map(|(a, b)| a * b).sum::<f64>()
            };
            let lm = {
                let p = mm.forward_eval(&x).unwrap();
                let a: f64 = p.prediction.logits.data().iter().zip(&w_logits).map(|(a, b)| a * b).sum();
                a + p.features.per_layer[0].data().iter().zip(&w_hidden).map(|(a, b)| a * b).sum::<f64>()
            };
            assert!(((lp - lm) / (2.0 * eps) - g).abs() < 1e-6);
        }
    }

    #[test]
    fn evaluate_counts_argmax_hits() {
        let model = Classifier::<f32>::new(tiny(), 0).unwrap();
        let images = random_images(4, 6, 1);
        let pred = model.predict(&images).unwrap();
        // Three labels agree with the model, one does not.
        let mut labels = pred.labels.clone();
        labels[2] = (labels[2] + 1) % 3;
        let ds = LabeledDataset::new(images.clone(), labels).unwrap();
        assert_eq!(evaluate(&model, &ds).unwrap(), 0.75);
        let ds = LabeledDataset::new(images, pred.labels.clone()).unwrap();
        assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
        let single = ds.head(1);
        let wrong = LabeledDataset::new(single.images().clone(), vec![(pred.labels[0] + 1) % 3]).unwrap();
        assert_eq!(evaluate(&model, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let model = Classifier::<f32>::new(tiny(), 0).unwrap();
        let empty = LabeledDataset::new(Tensor::zeros(&[0, 1, 6, 6]), vec![]).unwrap();
        assert!(matches!(evaluate(&model, &empty), Err(Error::Domain(_))));
    }
}
