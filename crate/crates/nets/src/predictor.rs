//! Multi-modal guidance predictor: a conditional VAE-GAN with encoder
//! `P_E`, generator `P_G` and a patch discriminator `D`.

use std::path::Path;

use blurdecomp_core::{BlurryImage, GuidanceConfig, MotionGuidance, TrainingTriplet};
use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode_header, encode_checkpoint, load_into};
use crate::data::{image_planes, one_hot_planes, stack, to_f32, Sample};
use crate::decomposer::{pick_crop, training_variants};
use crate::error::{NetError, Result};
use crate::netcore::{gumbel_noise, gumbel_softmax, kl_divergence, scalar, Conv2d, Mode, Stage, StageConfig};
use crate::params::ParamStore;

pub const PREDICTOR_KIND: &str = "predictor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub guidance: GuidanceConfig,
    /// Latent dimension.
    pub d_z: usize,
    pub lambda_gan: f64,
    pub lambda_vae: f64,
    pub lambda_kl: f64,
    /// Gumbel-softmax temperature, annealed linearly over training.
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub widths: [usize; 3],
    pub res_blocks: usize,
    pub encoder_widths: [usize; 2],
    pub disc_widths: [usize; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub crop: Option<usize>,
    pub flip: bool,
    pub inverse_augmentation: bool,
    /// Cross-entropy class weights go as `frequency^-power`; 0 disables them.
    pub class_weight_power: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            d_z: 8,
            lambda_gan: 0.1,
            lambda_vae: 10.0,
            lambda_kl: 0.1,
            temperature_start: 1.0,
            temperature_end: 0.5,
            widths: [32, 64, 128],
            res_blocks: 2,
            encoder_widths: [16, 32],
            disc_widths: [16, 32],
            learning_rate: 2e-4,
            beta1: 0.5,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            crop: None,
            flip: true,
            inverse_augmentation: true,
            class_weight_power: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if self.d_z == 0 {
            return Err(NetError::Config("d_z must be positive".into()));
        }
        if self.lambda_gan < 0.0 || self.lambda_vae <= 0.0 || self.lambda_kl < 0.0 {
            return Err(NetError::Config(
                "loss weights must be non-negative (VAE weight positive)".into(),
            ));
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return Err(NetError::Config("Gumbel temperatures must be positive".into()));
        }
        if !(self.class_weight_power >= 0.0 && self.class_weight_power.is_finite()) {
            return Err(NetError::Config(
                "class weight power must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(NetError::Config("batch size and learning rate must be positive".into()));
        }
        if let Some(c) = self.crop {
            if c == 0 || c % 4 != 0 {
                return Err(NetError::Config(format!(
                    "crop size {c} is not a positive multiple of 4"
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.guidance.num_classes()
    }

    pub fn temperature_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.temperature_end;
        }
        let a = step as f64 / (total - 1) as f64;
        self.temperature_start + (self.temperature_end - self.temperature_start) * a
    }
}

struct Encoder {
    c1: Conv2d,
    c2: Conv2d,
    head: Conv2d,
    d_z: usize,
}

impl Encoder {
    fn forward(&self, onehot: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = candle_nn::ops::leaky_relu(&self.c1.forward(onehot)?, 0.2)?;
        let h = candle_nn::ops::leaky_relu(&self.c2.forward(&h)?, 0.2)?;
        let pooled = h.mean_keepdim((2, 3))?;
        let out = self.head.forward(&pooled)?.flatten_from(1)?;
        Ok((out.narrow(1, 0, self.d_z)?, out.narrow(1, self.d_z, self.d_z)?))
    }
}

struct Discriminator {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl Discriminator {
    fn forward(&self, blurry: &Tensor, guidance: &Tensor) -> Result<Tensor> {
        let x = Tensor::cat(&[blurry, guidance], 1)?;
        let h = candle_nn::ops::leaky_relu(&self.c1.forward(&x)?, 0.2)?;
        let h = candle_nn::ops::leaky_relu(&self.c2.forward(&h)?, 0.2)?;
        self.c3.forward(&h)
    }
}

pub struct Predictor {
    config: PredictorConfig,
    store: ParamStore,
    encoder: Encoder,
    generator: Stage,
    disc: Discriminator,
}

impl Predictor {
    pub fn new(config: &PredictorConfig) -> Result<Self> {
        Self::with_dtype(config, DType::F32)
    }

    pub fn with_dtype(config: &PredictorConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(dtype);
        let k = config.num_classes();
        let [e0, e1] = config.encoder_widths;
        let encoder = Encoder {
            c1: Conv2d::new(&mut store, "enc.c1", k, e0, 3, 2, 1, false, &mut rng)?,
            c2: Conv2d::new(&mut store, "enc.c2", e0, e1, 3, 2, 1, false, &mut rng)?,
            head: Conv2d::new(&mut store, "enc.head", e1, 2 * config.d_z, 1, 1, 0, false, &mut rng)?,
            d_z: config.d_z,
        };
        let generator = Stage::new(
            &mut store,
            "gen",
            &StageConfig {
                in_channels: 3 + config.d_z,
                out_channels: k,
                widths: config.widths,
                res_blocks: config.res_blocks,
                zero_init_output: false,
            },
            &mut rng,
        )?;
        let [d0, d1] = config.disc_widths;
        let disc = Discriminator {
            c1: Conv2d::new(&mut store, "disc.c1", 3 + k, d0, 4, 2, 1, false, &mut rng)?,
            c2: Conv2d::new(&mut store, "disc.c2", d0, d1, 4, 2, 1, false, &mut rng)?,
            c3: Conv2d::new(&mut store, "disc.c3", d1, 1, 3, 1, 1, false, &mut rng)?,
        };
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            generator,
            disc,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `(mu, logvar)`, each `(B, d_z)`, from one-hot guidance `(B, K, H, W)`.
    pub fn encode(&self, onehot: &Tensor) -> Result<(Tensor, Tensor)> {
        crate::netcore::check_shape(onehot, self.config.num_classes(), "encoder input")?;
        self.encoder.forward(onehot)
    }

    /// Per-pixel class logits `(B, K, H, W)` for blurry `(B, 3, H, W)` and `z` `(B, d_z)`.
    pub fn logits(&self, blurry: &Tensor, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, _, h, w) = crate::netcore::check_shape(blurry, 3, "generator input")?;
        if z.dims() != [b, self.config.d_z] {
            return Err(NetError::Shape(format!(
                "latent code {:?}, expected ({b}, {})",
                z.dims(),
                self.config.d_z
            )));
        }
        let tiled = z
            .reshape((b, self.config.d_z, 1, 1))?
            .broadcast_as((b, self.config.d_z, h, w))?
            .contiguous()?;
        self.generator.forward(&Tensor::cat(&[blurry, &tiled], 1)?, mode)
    }

    /// Patch scores for blurry images and guidance given as class simplices.
    pub fn discriminate(&self, blurry: &Tensor, guidance: &Tensor) -> Result<Tensor> {
        crate::netcore::check_shape(guidance, self.config.num_classes(), "discriminator guidance")?;
        self.disc.forward(blurry, guidance)
    }

    fn one_hot(&self, g: &MotionGuidance) -> Result<Tensor> {
        let (h, w) = g.dims();
        let k = self.config.num_classes();
        stack(&[&one_hot_planes(g.labels(), k)], k, h, w, self.store.dtype())
    }

    fn check_guidance(&self, g: &MotionGuidance) -> Result<()> {
        if g.config().num_directions != self.config.guidance.num_directions {
            return Err(NetError::Config(format!(
                "guidance has {} directions, model expects {}",
                g.config().num_directions,
                self.config.guidance.num_directions
            )));
        }
        Ok(())
    }

    /// Posterior mean and log-variance for one guidance map.
    pub fn encode_latent(&self, g: &MotionGuidance) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_guidance(g)?;
        let (mu, lv) = self.encode(&self.one_hot(g)?)?;
        Ok((to_f32(&mu)?, to_f32(&lv)?))
    }

    /// Guidance for `blurry` under latent code `z` (argmax labels) and the
    /// raw logits, `K×H×W`.
    pub fn sample_guidance(&self, blurry: &BlurryImage, z: &[f32]) -> Result<(MotionGuidance, Vec<f32>)> {
        if z.len() != self.config.d_z {
            return Err(NetError::Shape(format!(
                "latent has {} entries, d_z = {}",
                z.len(),
                self.config.d_z
            )));
        }
        let (h, w) = blurry.image.dims();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(NetError::Shape(format!("image {h}x{w} is not divisible by 4")));
        }
        let dtype = self.store.dtype();
        let bt = stack(&[&image_planes(&blurry.image)], 3, h, w, dtype)?;
        let zt = Tensor::from_vec(z.to_vec(), (1, self.config.d_z), &Device::Cpu)?.to_dtype(dtype)?;
        let logits = self.logits(&bt, &zt, Mode::Eval)?;
        let labels: Vec<u8> = logits
            .argmax(1)?
            .flatten_all()?
            .to_vec1::<u32>()?
            .into_iter()
            .map(|v| v as u8)
            .collect();
        Ok((
            MotionGuidance::new(h, w, labels, self.config.guidance)?,
            to_f32(&logits)?,
        ))
    }

    /// `n` guidances from `n` standard-normal latent draws. The draws for a
    /// given seed are a fixed sequence, so smaller `n` gives a prefix.
    pub fn predict_multimodal(&self, blurry: &BlurryImage, n: usize, seed: u64) -> Result<Vec<MotionGuidance>> {
        if n == 0 {
            return Err(NetError::Config("n must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: Vec<f32> = (0..self.config.d_z)
                    .map(|_| rng.sample::<f32, _>(StandardNormal))
                    .collect();
                self.sample_guidance(blurry, &z).map(|(g, _)| g)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(PREDICTOR_KIND, &serde_json::to_value(&self.config)?, &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, _) = decode_header(bytes)?;
        let config: PredictorConfig = serde_json::from_value(header.config)?;
        let model = Self::new(&config)?;
        load_into(bytes, PREDICTOR_KIND, &model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Inverse-frequency class weights, normalized to mean 1 over present classes.
pub fn class_weights(labels: &[&[u8]], classes: usize) -> Vec<f64> {
    class_weights_with_power(labels, classes, 1.0)
}

/// Weights proportional to `frequency^-power`, normalized to mean 1 over
/// the classes present; absent classes get 0.
pub fn class_weights_with_power(labels: &[&[u8]], classes: usize, power: f64) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for ls in labels {
        for &l in ls.iter() {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|c| **c > 0).count().max(1);
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                (total as f64 / c as f64).powf(power)
            }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / present as f64;
    raw.iter().map(|w| if mean > 0.0 { w / mean } else { 1.0 }).collect()
}

/// Class-weighted per-pixel cross-entropy; `target` is one-hot `(B, K, H, W)`.
pub fn weighted_cross_entropy(logits: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let k = weights.elem_count();
    let logp = candle_nn::ops::log_softmax(logits, 1)?;
    let nll = (target * logp)?.sum_keepdim(1)?.neg()?;
    let wmap = target.broadcast_mul(&weights.reshape((1, k, 1, 1))?)?.sum_keepdim(1)?;
    Ok(((nll * &wmap)?.sum_all()? / wmap.sum_all()?)?)
}

/// Least-squares GAN loss against a constant target.
pub fn lsgan_loss(scores: &Tensor, target: f64) -> Result<Tensor> {
    Ok((scores - target)?.sqr()?.mean_all()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub temperature: f64,
    /// Generator adversarial term.
    pub gan: f64,
    /// Weighted cross-entropy reconstruction.
    pub vae: f64,
    pub kl: f64,
    pub discriminator: f64,
    /// Fraction of real and fake patches the discriminator gets right.
    pub discriminator_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorLog {
    pub epochs: Vec<PredictorEpoch>,
}

impl PredictorLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,steps,temperature,gan,vae,kl,discriminator,discriminator_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{:.6},{:.8},{:.8},{:.8},{:.8},{:.6}\n",
                e.epoch, e.steps, e.temperature, e.gan, e.vae, e.kl, e.discriminator, e.discriminator_accuracy
            ));
        }
        s
    }
}

/// Scalar losses of one training step, before any update.
pub struct PredictorLosses {
    pub gan: Tensor,
    pub vae: Tensor,
    pub kl: Tensor,
    pub fake: Tensor,
}

impl Predictor {
    /// Generator-side losses for a batch with explicit noise, so the value
    /// is a deterministic function of the parameters.
    pub fn generator_losses(
        &self,
        blurry: &Tensor,
        onehot: &Tensor,
        weights: &Tensor,
        eps: &Tensor,
        gumbel: &Tensor,
        temperature: f64,
        mode: Mode,
    ) -> Result<PredictorLosses> {
        let (mu, lv) = self.encode(onehot)?;
        let z = (&mu + (lv.affine(0.5, 0.0)?.exp()? * eps)?)?;
        let logits = self.logits(blurry, &z, mode)?;
        let vae = weighted_cross_entropy(&logits, onehot, weights)?;
        let kl = kl_divergence(&mu, &lv)?;
        let fake = gumbel_softmax(&logits, temperature, true, Some(gumbel))?;
        let gan = lsgan_loss(&self.discriminate(blurry, &fake)?, 1.0)?;
        Ok(PredictorLosses { gan, vae, kl, fake })
    }
}

fn pair_tensors(samples: &[Sample], k: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let (h, w) = (samples[0].height, samples[0].width);
    let b: Vec<&[f32]> = samples.iter().map(|s| s.blurry.as_slice()).collect();
    let oh: Vec<Vec<f32>> = samples.iter().map(|s| one_hot_planes(&s.labels, k)).collect();
    let ohr: Vec<&[f32]> = oh.iter().map(|v| v.as_slice()).collect();
    Ok((stack(&b, 3, h, w, dtype)?, stack(&ohr, k, h, w, dtype)?))
}

/// Alternating generator / discriminator training on `(I_b, G)` pairs.
pub fn train_predictor(train: &[TrainingTriplet], config: &PredictorConfig) -> Result<(Predictor, PredictorLog)> {
    train_predictor_with(train, config, &mut |_| {})
}

pub fn train_predictor_with(
    train: &[TrainingTriplet],
    config: &PredictorConfig,
    on_epoch: &mut dyn FnMut(&PredictorEpoch),
) -> Result<(Predictor, PredictorLog)> {
    if train.is_empty() {
        return Err(NetError::EmptyDataset("training split".into()));
    }
    if train
        .iter()
        .any(|t| t.guidance_config().num_directions != config.guidance.num_directions)
    {
        return Err(NetError::Config(
            "triplet guidance config differs from the model's".into(),
        ));
    }
    let model = Predictor::new(config)?;
    let k = config.num_classes();
    let dtype = model.store.dtype();
    let variants = training_variants(train, config.inverse_augmentation)?;
    let all_labels: Vec<&[u8]> = variants.iter().map(|v| v[0].labels.as_slice()).collect();
    let weights = Tensor::from_vec(
        class_weights_with_power(&all_labels, k, config.class_weight_power)
            .into_iter()
            .map(|w| w as f32)
            .collect::<Vec<_>>(),
        k,
        &Device::Cpu,
    )?
    .to_dtype(dtype)?;
    let adam = |vars| {
        AdamW::new(
            vars,
            ParamsAdamW {
                lr: config.learning_rate,
                beta1: config.beta1,
                weight_decay: 0.0,
                ..Default::default()
            },
        )
    };
    let mut gen_vars = model.store.trainable("enc.");
    gen_vars.extend(model.store.trainable("gen."));
    let mut opt_g = adam(gen_vars)?;
    let mut opt_d = adam(model.store.trainable("disc."))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0002);
    let steps_per_epoch = variants.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let use_gan = config.lambda_gan > 0.0;
    let mut log = PredictorLog::default();
    let mut order: Vec<usize> = (0..variants.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut s_gan, mut s_vae, mut s_kl, mut s_d, mut s_acc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut tau = config.temperature_start;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let flip = config.flip && rng.gen_bool(0.5);
                batch.push(pick_crop(&variants[i][flip as usize], config.crop, &mut rng)?);
            }
            let (bt, oh) = pair_tensors(&batch, k, dtype)?;
            let b = batch.len();
            let (h, w) = (batch[0].height, batch[0].width);
            tau = config.temperature_at(step, total);
            let eps: Vec<f32> = (0..b * config.d_z)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect();
            let eps = Tensor::from_vec(eps, (b, config.d_z), &Device::Cpu)?.to_dtype(dtype)?;
            let gumbel = gumbel_noise(&[b, k, h, w], dtype, &mut rng)?;
            let l = model.generator_losses(&bt, &oh, &weights, &eps, &gumbel, tau, Mode::Train)?;
            let mut g_loss = ((&l.vae * config.lambda_vae)? + (&l.kl * config.lambda_kl)?)?;
            if use_gan {
                g_loss = (g_loss + (&l.gan * config.lambda_gan)?)?;
            }
            let (gan, vae, kl) = (scalar(&l.gan)?, scalar(&l.vae)?, scalar(&l.kl)?);
            let gl = scalar(&g_loss)?;
            if !gl.is_finite() {
                return Err(NetError::NonFinite(format!(
                    "generator loss {gl} (gan {gan}, vae {vae}, kl {kl}) at epoch {epoch}, step {step}"
                )));
            }
            opt_g.backward_step(&g_loss)?;
            if use_gan {
                let real = model.discriminate(&bt, &oh)?;
                let fake = model.discriminate(&bt, &l.fake.detach())?;
                let d_loss = ((lsgan_loss(&real, 1.0)? + lsgan_loss(&fake, 0.0)?)? * 0.5)?;
                let dl = scalar(&d_loss)?;
                if !dl.is_finite() {
                    return Err(NetError::NonFinite(format!(
                        "discriminator loss {dl} at epoch {epoch}, step {step}"
                    )));
                }
                opt_d.backward_step(&d_loss)?;
                let r: Vec<f32> = to_f32(&real)?;
                let f: Vec<f32> = to_f32(&fake)?;
                let correct = r.iter().filter(|v| **v > 0.5).count() + f.iter().filter(|v| **v < 0.5).count();
                s_acc += correct as f64 / (r.len() + f.len()) as f64;
                s_d += dl;
            }
            s_gan += gan;
            s_vae += vae;
            s_kl += kl;
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let m = PredictorEpoch {
            epoch,
            steps: step,
            temperature: tau,
            gan: s_gan / n,
            vae: s_vae / n,
            kl: s_kl / n,
            discriminator: s_d / n,
            discriminator_accuracy: s_acc / n,
        };
        if use_gan && m.discriminator_accuracy >= 0.999 {
            log::warn!(
                "epoch {epoch}: discriminator accuracy {:.4}, possible collapse",
                m.discriminator_accuracy
            );
        }
        log::debug!("predictor epoch {epoch}: {m:?}");
        on_epoch(&m);
        log.epochs.push(m);
    }
    Ok((model, log))
}
