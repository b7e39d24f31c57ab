//! Conditioned transposed-convolution generator.
//!
//! `concat(latent, encode(conditioning))` → linear stem → `[C0, s, s]` →
//! up-blocks (tconv k4 s2 p1 → BN → leaky → dropout) → tconv k3 s1 p1 → sigmoid.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningMode, ConditioningSignal};
use crate::data_io::{Checkpoint, CheckpointKind, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::{
    slot, BatchNorm2d, BatchNormCache, ConvTranspose2d, ConvTranspose2dCache, Dropout, Embedding, Grads,
    LeakyRelu, Linear, Mode, Param, Sigmoid,
};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::state::{self, NamedState, StateVisitor, StateVisitorMut};
use crate::tensor::Tensor;

/// Standard-normal latents `[n, dim]`.
pub fn sample_latents<T: Scalar, R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n * dim).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::from_vec(&[n, dim], data).expect("shape matches data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub n_classes: usize,
    /// Channels of the seed feature map.
    pub seed_channels: usize,
    /// Side of the seed feature map; doubled by every up-block.
    pub seed_side: usize,
    pub up_channels: Vec<usize>,
    pub dropout_rate: f64,
    /// Also apply dropout to the final block's pre-activation.
    pub final_dropout: bool,
    pub leaky_slope: f64,
    pub conditioning: ConditioningMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 64,
            n_classes: 10,
            seed_channels: 64,
            seed_side: 7,
            up_channels: vec![32, 16],
            dropout_rate: 0.5,
            final_dropout: false,
            leaky_slope: 0.2,
            conditioning: ConditioningMode::SoftVector,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.seed_channels == 0 || self.up_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        let side = self.up_channels.iter().fold(self.seed_side, |s, _| s * 2);
        if side != IMAGE_SIDE {
            return Err(Error::Config(format!(
                "{0}x{0} seed with {1} up-blocks gives {2}x{2}, not {IMAGE_SIDE}x{IMAGE_SIDE}",
                self.seed_side,
                self.up_channels.len(),
                side
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Encoder<T> {
    Embed(Embedding<T>),
    Project(Linear<T>),
}

impl<T: Scalar> Encoder<T> {
    fn param_count(&self) -> usize {
        match self {
            Encoder::Embed(_) => Embedding::<T>::PARAMS,
            Encoder::Project(_) => Linear::<T>::PARAMS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct UpBlock<T> {
    tconv: ConvTranspose2d<T>,
    bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    encoder: Encoder<T>,
    stem: Linear<T>,
    stem_bn: BatchNorm2d<T>,
    ups: Vec<UpBlock<T>>,
    out: ConvTranspose2d<T>,
}

enum EncoderInput<T> {
    Labels(Vec<usize>),
    Vectors(Tensor<T>),
}

struct UpTrace<T> {
    tconv: ConvTranspose2dCache<T>,
    bn: BatchNormCache<T>,
    normed: Tensor<T>,
    mask: Option<Vec<T>>,
}

pub struct GeneratorTrace<T> {
    encoder_input: EncoderInput<T>,
    fused: Tensor<T>,
    stem_bn: BatchNormCache<T>,
    stem_normed: Tensor<T>,
    ups: Vec<UpTrace<T>>,
    out: ConvTranspose2dCache<T>,
    out_mask: Option<Vec<T>>,
    images: Tensor<T>,
}

impl<T: Scalar> GeneratorTrace<T> {
    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::GeneratorInit);
        let d = config.latent_dim;
        let encoder = match config.conditioning {
            ConditioningMode::LabelEmbed => Encoder::Embed(Embedding::new(config.n_classes, d, &mut rng)),
            _ => Encoder::Project(Linear::new(config.n_classes, d, &mut rng)),
        };
        let s = config.seed_side;
        let stem = Linear::new(2 * d, config.seed_channels * s * s, &mut rng);
        let stem_bn = BatchNorm2d::new(config.seed_channels);
        let mut ups = Vec::new();
        let (mut c, mut side) = (config.seed_channels, s);
        for &oc in &config.up_channels {
            let tconv = ConvTranspose2d::new(c, oc, side, side, 4, 2, 1, &mut rng)?;
            ups.push(UpBlock { tconv, bn: BatchNorm2d::new(oc) });
            c = oc;
            side *= 2;
        }
        let out = ConvTranspose2d::new(c, 1, side, side, 3, 1, 1, &mut rng)?;
        Ok(Generator { config, encoder, stem, stem_bn, ups, out })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = match &self.encoder {
            Encoder::Embed(e) => vec![&e.table],
            Encoder::Project(l) => l.params().to_vec(),
        };
        v.extend(self.stem.params());
        v.extend(self.stem_bn.params());
        for u in &self.ups {
            v.extend(u.tconv.params());
            v.extend(u.bn.params());
        }
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = match &mut self.encoder {
            Encoder::Embed(e) => vec![&mut e.table],
            Encoder::Project(l) => l.params_mut().into_iter().collect(),
        };
        v.extend(self.stem.params_mut());
        v.extend(self.stem_bn.params_mut());
        for u in &mut self.ups {
            v.extend(u.tconv.params_mut());
            v.extend(u.bn.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }

    pub fn sample_latents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor<T> {
        sample_latents(n, self.config.latent_dim, rng)
    }

    fn encode(&self, signal: ConditioningSignal<'_, T>) -> Result<(Tensor<T>, EncoderInput<T>)> {
        match (&self.encoder, signal) {
            (Encoder::Embed(e), ConditioningSignal::Labels(l)) => Ok((e.forward(l)?, EncoderInput::Labels(l.to_vec()))),
            (Encoder::Project(p), ConditioningSignal::Vectors(v)) => {
                if v.shape().len() != 2 || v.row_len() != self.config.n_classes {
                    return Err(Error::Shape(format!(
                        "conditioning vectors must be [N, {}], got {:?}",
                        self.config.n_classes,
                        v.shape()
                    )));
                }
                Ok((p.forward(v)?, EncoderInput::Vectors(v.clone())))
            }
            (Encoder::Embed(_), ConditioningSignal::Vectors(_)) => {
                Err(Error::Shape("label-embedding generator needs integer labels".into()))
            }
            (Encoder::Project(_), ConditioningSignal::Labels(_)) => {
                Err(Error::Shape("vector-conditioned generator accepts vectors only".into()))
            }
        }
    }

    /// Returns `[N, 1, 28, 28]` images in `[0, 1]` with the backward trace.
    pub fn forward(
        &self,
        latents: &Tensor<T>,
        signal: ConditioningSignal<'_, T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<GeneratorTrace<T>> {
        let (n, d) = (latents.shape()[0], self.config.latent_dim);
        if latents.shape() != [n, d] {
            return Err(Error::Shape(format!("latents must be [N, {d}], got {:?}", latents.shape())));
        }
        if signal.len() != n {
            return Err(Error::Shape(format!("{n} latents but {} conditioning rows", signal.len())));
        }
        let (code, encoder_input) = self.encode(signal)?;
        let mut fused = Tensor::zeros(&[n, 2 * d]);
        for i in 0..n {
            let row = fused.row_mut(i);
            row[..d].copy_from_slice(latents.row(i));
            row[d..].copy_from_slice(code.row(i));
        }

        let act = LeakyRelu { slope: self.config.leaky_slope };
        let drop = Dropout { rate: self.config.dropout_rate };
        let s = self.config.seed_side;
        let h = self.stem.forward(&fused)?.reshape(&[n, self.config.seed_channels, s, s])?;
        let (stem_normed, stem_bn) = self.stem_bn.forward(&h, mode)?;
        let mut x = act.forward(&stem_normed);

        let mut ups = Vec::with_capacity(self.ups.len());
        for u in &self.ups {
            let (y, tconv) = u.tconv.forward(&x)?;
            let (normed, bn) = u.bn.forward(&y, mode)?;
            let a = act.forward(&normed);
            let (dropped, mask) = drop.forward(&a, mode, rng);
            ups.push(UpTrace { tconv, bn, normed, mask });
            x = dropped;
        }
        let (mut z, out) = self.out.forward(&x)?;
        let mut out_mask = None;
        if self.config.final_dropout {
            let (dz, m) = drop.forward(&z, mode, rng);
            z = dz;
            out_mask = m;
        }
        let images = Sigmoid::forward(&z);
        Ok(GeneratorTrace { encoder_input, fused, stem_bn, stem_normed, ups, out, out_mask, images })
    }

    /// Eval-mode images.
    pub fn generate(&self, latents: &Tensor<T>, signal: ConditioningSignal<'_, T>) -> Result<Tensor<T>> {
        let mut unused = stream_rng(0, Stream::Evaluation);
        Ok(self.forward(latents, signal, Mode::Eval, &mut unused)?.images)
    }

    /// Accumulates parameter gradients of a loss with image gradient `dimages`.
    pub fn backward(&self, trace: &GeneratorTrace<T>, dimages: &Tensor<T>, grads: &mut Grads<T>) -> Result<()> {
        dimages.expect_shape(trace.images.shape())?;
        let act = LeakyRelu { slope: self.config.leaky_slope };
        let mut grads = Some(grads);
        let enc = self.encoder.param_count();
        let stem_off = enc;
        let stem_bn_off = stem_off + Linear::<T>::PARAMS;
        let up_off = stem_bn_off + BatchNorm2d::<T>::PARAMS;
        let per_up = ConvTranspose2d::<T>::PARAMS + BatchNorm2d::<T>::PARAMS;
        let out_off = up_off + per_up * self.ups.len();

        let mut g = Sigmoid::backward(&trace.images, dimages);
        g = Dropout::backward(trace.out_mask.as_ref(), &g);
        g = self.out.backward(&trace.out, &g, slot(&mut grads, out_off, ConvTranspose2d::<T>::PARAMS));
        for (i, (u, t)) in self.ups.iter().zip(&trace.ups).enumerate().rev() {
            let off = up_off + i * per_up;
            let ga = Dropout::backward(t.mask.as_ref(), &g);
            let gn = act.backward(&t.normed, &ga);
            let gy = u.bn.backward(&t.bn, &gn, slot(&mut grads, off + ConvTranspose2d::<T>::PARAMS, BatchNorm2d::<T>::PARAMS));
            g = u.tconv.backward(&t.tconv, &gy, slot(&mut grads, off, ConvTranspose2d::<T>::PARAMS));
        }
        let gn = act.backward(&trace.stem_normed, &g);
        let gh = self.stem_bn.backward(&trace.stem_bn, &gn, slot(&mut grads, stem_bn_off, BatchNorm2d::<T>::PARAMS));
        let n = gh.shape()[0];
        let gh = gh.reshape(&[n, self.stem.out_dim()])?;
        let gfused = self.stem.backward(&trace.fused, &gh, slot(&mut grads, stem_off, Linear::<T>::PARAMS));

        let d = self.config.latent_dim;
        let mut gcode = Tensor::zeros(&[n, d]);
        for i in 0..n {
            gcode.row_mut(i).copy_from_slice(&gfused.row(i)[d..]);
        }
        let gs = slot(&mut grads, 0, enc).expect("gradient buffer present");
        match (&self.encoder, &trace.encoder_input) {
            (Encoder::Embed(e), EncoderInput::Labels(l)) => e.backward(l, &gcode, gs),
            (Encoder::Project(p), EncoderInput::Vectors(v)) => {
                p.backward(v, &gcode, Some(gs));
            }
            _ => unreachable!("trace produced by this generator"),
        }
        Ok(())
    }

    pub fn commit_batch_stats(&mut self, trace: &GeneratorTrace<T>) {
        if let Some(s) = &trace.stem_bn.stats {
            self.stem_bn.commit(s);
        }
        for (u, t) in self.ups.iter_mut().zip(&trace.ups) {
            if let Some(s) = &t.bn.stats {
                u.bn.commit(s);
            }
        }
    }

    pub fn checksum(&self) -> String {
        state::state_checksum(self)
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64) -> Result<Checkpoint> {
        let config = serde_json::to_value(&self.config).map_err(|e| Error::Encode(e.to_string()))?;
        Ok(state::to_checkpoint(self, CheckpointKind::Generator, config, seed, epoch))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Generator)?;
        let config: GeneratorConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Integrity(format!("generator config: {e}")))?;
        let mut model = Generator::new(config, ckpt.seed)?;
        state::load_state(&mut model, ckpt)?;
        Ok(model)
    }
}

fn visit_bn<T: Scalar>(name: &str, bn: &BatchNorm2d<T>, f: &mut StateVisitor<'_, T>) {
    let c = [bn.channels()];
    f(&format!("{name}.gamma"), &bn.gamma.shape, &bn.gamma.value);
    f(&format!("{name}.beta"), &bn.beta.shape, &bn.beta.value);
    f(&format!("{name}.running_mean"), &c, &bn.running_mean);
    f(&format!("{name}.running_var"), &c, &bn.running_var);
}

fn visit_bn_mut<T: Scalar>(name: &str, bn: &mut BatchNorm2d<T>, f: &mut StateVisitorMut<'_, T>) {
    let c = [bn.channels()];
    f(&format!("{name}.gamma"), &bn.gamma.shape, &mut bn.gamma.value);
    f(&format!("{name}.beta"), &bn.beta.shape, &mut bn.beta.value);
    f(&format!("{name}.running_mean"), &c, &mut bn.running_mean);
    f(&format!("{name}.running_var"), &c, &mut bn.running_var);
}

impl<T: Scalar> NamedState<T> for Generator<T> {
    fn visit_state(&self, f: &mut StateVisitor<'_, T>) {
        match &self.encoder {
            Encoder::Embed(e) => f("cond.table", &e.table.shape, &e.table.value),
            Encoder::Project(l) => {
                f("cond.weight", &l.weight.shape, &l.weight.value);
                f("cond.bias", &l.bias.shape, &l.bias.value);
            }
        }
        f("stem.weight", &self.stem.weight.shape, &self.stem.weight.value);
        f("stem.bias", &self.stem.bias.shape, &self.stem.bias.value);
        visit_bn("stem_bn", &self.stem_bn, f);
        for (i, u) in self.ups.iter().enumerate() {
            f(&format!("up.{i}.weight"), &u.tconv.weight.shape, &u.tconv.weight.value);
            f(&format!("up.{i}.bias"), &u.tconv.bias.shape, &u.tconv.bias.value);
            visit_bn(&format!("up_bn.{i}"), &u.bn, f);
        }
        f("out.weight", &self.out.weight.shape, &self.out.weight.value);
        f("out.bias", &self.out.bias.shape, &self.out.bias.value);
    }

    fn visit_state_mut(&mut self, f: &mut StateVisitorMut<'_, T>) {
        match &mut self.encoder {
            Encoder::Embed(e) => f("cond.table", &e.table.shape, &mut e.table.value),
            Encoder::Project(l) => {
                f("cond.weight", &l.weight.shape, &mut l.weight.value);
                f("cond.bias", &l.bias.shape, &mut l.bias.value);
            }
        }
        f("stem.weight", &self.stem.weight.shape, &mut self.stem.weight.value);
        f("stem.bias", &self.stem.bias.shape, &mut self.stem.bias.value);
        visit_bn_mut("stem_bn", &mut self.stem_bn, f);
        for (i, u) in self.ups.iter_mut().enumerate() {
            f(&format!("up.{i}.weight"), &u.tconv.weight.shape, &mut u.tconv.weight.value);
            f(&format!("up.{i}.bias"), &u.tconv.bias.shape, &mut u.tconv.bias.value);
            visit_bn_mut(&format!("up_bn.{i}"), &mut u.bn, f);
        }
        f("out.weight", &self.out.weight.shape, &mut self.out.weight.value);
        f("out.bias", &self.out.bias.shape, &mut self.out.bias.value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{one_hot_vectors, sample_soft_vectors, ConditioningBatch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn soft(n: usize, seed: u64) -> ConditioningBatch<f32> {
        sample_soft_vectors(n, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = g.sample_latents(4, &mut rng);
        let c = soft(4, 2);
        for mode in [Mode::Train, Mode::Eval] {
            let t = g.forward(&z, c.signal(), mode, &mut rng).unwrap();
            assert_eq!(t.images().shape(), &[4, 1, 28, 28]);
            assert!(t.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let one = g.generate(&g.sample_latents(1, &mut rng), soft(1, 3).signal()).unwrap();
        assert_eq!(one.shape(), &[1, 1, 28, 28]);
    }

    #[test]
    fn eval_mode_is_pure() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        let z = Tensor::zeros(&[1, 64]);
        let u = Tensor::full(&[1, 10], 0.1);
        let a = g.generate(&z, ConditioningSignal::Vectors(&u)).unwrap();
        let b = g.generate(&z, ConditioningSignal::Vectors(&u)).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = g.sample_latents(1, &mut rng).select_rows(&[0, 0]);
        let c = soft(1, 4);
        let v = c.vectors.select_rows(&[0, 0]);
        let img = g.generate(&z, ConditioningSignal::Vectors(&v)).unwrap();
        assert_eq!(img.row(0), img.row(1));
    }

    #[test]
    fn train_mode_dropout_varies_output() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = g.sample_latents(4, &mut rng);
        let c = soft(4, 6);
        let first = g.forward(&z, c.signal(), Mode::Train, &mut rng).unwrap().images;
        for _ in 0..10 {
            let next = g.forward(&z, c.signal(), Mode::Train, &mut rng).unwrap().images;
            let diff = first.data().iter().zip(next.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(diff > 0.0);
        }
    }

    #[test]
    fn bad_progression_is_config_error() {
        let cfg = GeneratorConfig { up_channels: vec![32], ..Default::default() };
        assert!(matches!(Generator::<f32>::new(cfg, 0), Err(Error::Config(_))));
        let cfg = GeneratorConfig { latent_dim: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn width_mismatches_are_shape_errors() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = g.sample_latents(2, &mut rng);
        let wide = Tensor::full(&[2, 11], 1.0 / 11.0);
        assert!(matches!(g.generate(&z, ConditioningSignal::Vectors(&wide)), Err(Error::Shape(_))));
        assert!(matches!(g.generate(&Tensor::zeros(&[2, 63]), soft(2, 0).signal()), Err(Error::Shape(_))));
        assert!(matches!(g.generate(&z, ConditioningSignal::Labels(&[1, 2])), Err(Error::Shape(_))));
    }

    #[test]
    fn label_embedding_generator_takes_labels() {
        let cfg = GeneratorConfig { conditioning: ConditioningMode::LabelEmbed, ..Default::default() };
        let g = Generator::<f32>::new(cfg, 2).unwrap();
        let mut c: ConditioningBatch<f32> = one_hot_vectors(&[1, 7], 10).unwrap();
        c.mode = ConditioningMode::LabelEmbed;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = g.generate(&g.sample_latents(2, &mut rng), c.signal()).unwrap();
        assert_eq!(img.shape(), &[2, 1, 28, 28]);
    }

    fn tiny_config(mode: ConditioningMode) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: 3,
            n_classes: 3,
            seed_channels: 2,
            seed_side: 7,
            up_channels: vec![2, 2],
            dropout_rate: 0.5,
            final_dropout: true,
            leaky_slope: 0.2,
            conditioning: mode,
        }
    }

    fn check_param_gradients(mode: ConditioningMode) {
        let g = Generator::<f64>::new(tiny_config(mode), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = g.sample_latents(3, &mut rng);
        let mut c: ConditioningBatch<f64> = sample_soft_vectors(3, 3, &mut rng).unwrap();
        if mode == ConditioningMode::LabelEmbed {
            c.mode = mode;
        }
        let w: Vec<f64> = (0..3 * 784).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Fixed dropout masks: replay the same rng state for every evaluation.
        let drop_seed = 17;
        let loss = |m: &Generator<f64>| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
            let t = m.forward(&z, c.signal(), Mode::Train, &mut r).unwrap();
            t.images().data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        let trace = g.forward(&z, c.signal(), Mode::Train, &mut r).unwrap();
        let dimg = Tensor::from_vec(trace.images().shape(), w.clone()).unwrap();
        let mut grads = Grads::zeros_like(g.params());
        g.backward(&trace, &dimg, &mut grads).unwrap();

        let eps = 1e-6;
        let n_params = g.params().len();
        for p in 0..n_params {
            let len = g.params()[p].len();
            for k in (0..len).step_by((len / 5).max(1)) {
                let mut gp = g.clone();
                gp.params_mut()[p].value[k] += eps;
                let mut gm = g.clone();
                gm.params_mut()[p].value[k] -= eps;
                let fd = (loss(&gp) - loss(&gm)) / (2.0 * eps);
                let an = grads.0[p][k];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "param {p}[{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_vector_mode() {
        check_param_gradients(ConditioningMode::SoftVector);
    }

    #[test]
    fn backward_matches_finite_differences_label_mode() {
        check_param_gradients(ConditioningMode::LabelEmbed);
    }

    #[test]
    fn checkpoint_round_trip() {
        for mode in ConditioningMode::ALL {
            let cfg = GeneratorConfig { conditioning: mode, ..Default::default() };
            let g = Generator::<f32>::new(cfg, 4).unwrap();
            let back = Generator::<f32>::from_checkpoint(&g.to_checkpoint(4, 2).unwrap()).unwrap();
            assert_eq!(back, g);
            assert_eq!(back.checksum(), g.checksum());
        }
        let c = crate::classifier::Classifier::<f32>::new(Default::default(), 0).unwrap().to_checkpoint(0, 0).unwrap();
        assert!(matches!(Generator::<f32>::from_checkpoint(&c), Err(Error::Kind { .. })));
    }
}
