//! Two-stage motion-guided decomposition network and its training loop.

use std::f64::consts::PI;
use std::path::Path;

use blurdecomp_core::{
    augment_inverse, sequence_psnr, BlurryImage, GuidanceConfig, MotionGuidance, SharpSequence, TrainingTriplet,
};
use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{encode_checkpoint, load_into};
use crate::data::{guidance_planes, image_planes, planes_to_image, stack, to_f32, Sample};
use crate::error::{NetError, Result};
use crate::netcore::{scalar, Mode, Stage, StageConfig};
use crate::params::ParamStore;

pub const DECOMPOSER_KIND: &str = "decomposer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposerConfig {
    /// Number of output frames.
    pub t: usize,
    pub guidance: GuidanceConfig,
    pub widths: [usize; 3],
    pub res_blocks: usize,
    /// Ablation: S1 only.
    pub one_stage: bool,
    /// Predict frames as an offset from the blurry image repeated T times.
    pub input_residual: bool,
    /// Ablation: feed zeros in place of the guidance bits.
    pub zero_guidance: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub inverse_augmentation: bool,
    /// Side of the random training crop; `None` trains on whole images.
    pub crop: Option<usize>,
    pub flip: bool,
    /// Side of the center crop used for validation metrics.
    pub val_crop: Option<usize>,
}

impl Default for DecomposerConfig {
    fn default() -> Self {
        Self {
            t: 7,
            guidance: GuidanceConfig::default(),
            widths: [32, 64, 128],
            res_blocks: 2,
            one_stage: false,
            input_residual: true,
            zero_guidance: false,
            learning_rate: 2e-4,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            inverse_augmentation: true,
            crop: None,
            flip: true,
            val_crop: None,
        }
    }
}

impl DecomposerConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if self.t < 2 {
            return Err(NetError::Config(format!("T must be >= 2 (got {})", self.t)));
        }
        if let Some(c) = self.crop {
            if c == 0 || c % 4 != 0 {
                return Err(NetError::Config(format!(
                    "crop size {c} is not a positive multiple of 4"
                )));
            }
        }
        if let Some(c) = self.val_crop {
            if c == 0 || c % 4 != 0 {
                return Err(NetError::Config(format!(
                    "validation crop {c} is not a positive multiple of 4"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(NetError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NetError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn s1_config(&self) -> StageConfig {
        StageConfig {
            in_channels: 3 + self.guidance.bit_width(),
            out_channels: 3 * self.t,
            widths: self.widths,
            res_blocks: self.res_blocks,
            // With the input residual the untrained model starts at the blurry image.
            zero_init_output: self.input_residual,
        }
    }

    pub fn s2_config(&self) -> StageConfig {
        StageConfig {
            in_channels: 3 + self.guidance.bit_width() + 3 * self.t,
            out_channels: 3 * self.t,
            widths: self.widths,
            res_blocks: self.res_blocks,
            zero_init_output: true,
        }
    }
}

/// A one-stage configuration whose parameter count is closest to the
/// two-stage `config`, found by scaling all widths by a common factor.
pub fn matched_one_stage(config: &DecomposerConfig) -> Result<DecomposerConfig> {
    let target = Decomposer::new(config)?.num_parameters();
    let mut best: Option<(usize, DecomposerConfig)> = None;
    for step in 100..=300 {
        let s = step as f64 / 100.0;
        let widths = config.widths.map(|w| ((w as f64 * s).round() as usize).max(1));
        let cand = DecomposerConfig {
            one_stage: true,
            widths,
            ..config.clone()
        };
        let n = Decomposer::new(&cand)?.num_parameters();
        let d = n.abs_diff(target);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, cand));
        }
    }
    Ok(best.expect("non-empty search").1)
}

pub struct Decomposer {
    config: DecomposerConfig,
    store: ParamStore,
    s1: Stage,
    s2: Option<Stage>,
}

impl Decomposer {
    pub fn new(config: &DecomposerConfig) -> Result<Self> {
        Self::with_dtype(config, DType::F32)
    }

    pub fn with_dtype(config: &DecomposerConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(dtype);
        let s1 = Stage::new(&mut store, "s1", &config.s1_config(), &mut rng)?;
        let s2 = if config.one_stage {
            None
        } else {
            Some(Stage::new(&mut store, "s2", &config.s2_config(), &mut rng)?)
        };
        Ok(Self {
            config: config.clone(),
            store,
            s1,
            s2,
        })
    }

    pub fn config(&self) -> &DecomposerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters("")
    }

    /// `(coarse, final)` frame stacks of shape `(B, 3T, H, W)`, unclamped.
    pub fn forward(&self, blurry: &Tensor, guidance: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let bits = self.config.guidance.bit_width();
        let (b, _, h, w) = crate::netcore::check_shape(blurry, 3, "blurry input")?;
        let (gb, _, gh, gw) = crate::netcore::check_shape(guidance, bits, "guidance input")?;
        if (gb, gh, gw) != (b, h, w) {
            return Err(NetError::Shape(format!(
                "guidance {:?} does not match blurry {:?}",
                guidance.dims(),
                blurry.dims()
            )));
        }
        let guidance = if self.config.zero_guidance {
            guidance.zeros_like()?
        } else {
            guidance.clone()
        };
        let x1 = Tensor::cat(&[blurry, &guidance], 1)?;
        let mut coarse = self.s1.forward(&x1, mode)?;
        if self.config.input_residual {
            coarse = (coarse + blurry.repeat((1, self.config.t, 1, 1))?)?;
        }
        let fin = match &self.s2 {
            None => coarse.clone(),
            Some(s2) => {
                let x2 = Tensor::cat(&[blurry, &guidance, &coarse], 1)?;
                (&coarse + s2.forward(&x2, mode)?)?
            }
        };
        Ok((coarse, fin))
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

    /// Decomposes one blurry image; frames are clamped to [0, 1].
    pub fn decompose(&self, blurry: &BlurryImage, g: &MotionGuidance) -> Result<SharpSequence> {
        self.check_guidance(g)?;
        let (h, w) = blurry.image.dims();
        if g.dims() != (h, w) {
            return Err(NetError::Shape(format!("guidance {:?} vs image {h}x{w}", g.dims())));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(NetError::Shape(format!("image {h}x{w} is not divisible by 4")));
        }
        let dtype = self.store.dtype();
        let bits = self.config.guidance.bit_width();
        let bt = stack(&[&image_planes(&blurry.image)], 3, h, w, dtype)?;
        let gt = stack(&[&guidance_planes(g)], bits, h, w, dtype)?;
        let (_, fin) = self.forward(&bt, &gt, Mode::Eval)?;
        let vals = to_f32(&fin)?;
        let frames = (0..self.config.t)
            .map(|k| planes_to_image(&vals, k * 3 * h * w, h, w))
            .collect();
        Ok(SharpSequence::new(frames)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(DECOMPOSER_KIND, &serde_json::to_value(&self.config)?, &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, _) = crate::checkpoint::decode_header(bytes)?;
        let config: DecomposerConfig = serde_json::from_value(header.config)?;
        let model = Self::new(&config)?;
        load_into(bytes, DECOMPOSER_KIND, &model.store)?;
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,steps,learning_rate,train_loss,val_loss,val_psnr\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{:.8},{:.8},{},{}\n",
                e.epoch,
                e.steps,
                e.learning_rate,
                e.train_loss,
                opt(e.val_loss),
                opt(e.val_psnr)
            ));
        }
        s
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_loss)
    }

    pub fn final_val_psnr(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_psnr)
    }
}

pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// Samples with their horizontal mirror, plus inverse-direction copies.
pub(crate) fn training_variants(triplets: &[TrainingTriplet], inverse: bool) -> Result<Vec<[Sample; 2]>> {
    let mut out = Vec::new();
    for tr in triplets {
        out.push([Sample::from_triplet(tr), Sample::from_triplet(&tr.flip_horizontal())]);
        if inverse {
            let inv = augment_inverse(tr)?;
            out.push([Sample::from_triplet(&inv), Sample::from_triplet(&inv.flip_horizontal())]);
        }
    }
    Ok(out)
}

pub(crate) fn pick_crop(s: &Sample, crop: Option<usize>, rng: &mut impl Rng) -> Result<Sample> {
    match crop {
        None => Ok(s.clone()),
        Some(c) => {
            if c > s.height || c > s.width {
                return Err(NetError::Config(format!(
                    "crop {c} exceeds the {}x{} training images",
                    s.height, s.width
                )));
            }
            let top = rng.gen_range(0..=s.height - c);
            let left = rng.gen_range(0..=s.width - c);
            Ok(s.crop(top, left, c, c))
        }
    }
}

fn batch_tensors(samples: &[Sample], bits: usize, t: usize, dtype: DType) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w) = (samples[0].height, samples[0].width);
    let b: Vec<&[f32]> = samples.iter().map(|s| s.blurry.as_slice()).collect();
    let g: Vec<&[f32]> = samples.iter().map(|s| s.guidance.as_slice()).collect();
    let y: Vec<&[f32]> = samples.iter().map(|s| s.sharp.as_slice()).collect();
    Ok((
        stack(&b, 3, h, w, dtype)?,
        stack(&g, bits, h, w, dtype)?,
        stack(&y, 3 * t, h, w, dtype)?,
    ))
}

/// Mean squared error between two tensors of equal shape.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Validation loss (unclamped MSE) and PSNR (clamped, mean over frames and
/// sequences) on center crops.
pub fn validate(model: &Decomposer, val: &[Sample]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(NetError::EmptyDataset("validation split".into()));
    }
    let cfg = &model.config;
    let crops: Vec<Sample> = val.iter().map(|s| s.center_crop(cfg.val_crop)).collect();
    let (h, w) = (crops[0].height, crops[0].width);
    let mut loss_sum = 0.0;
    let mut psnr_sum = 0.0;
    for chunk in crops.chunks(16) {
        let (bt, gt, yt) = batch_tensors(chunk, cfg.guidance.bit_width(), cfg.t, model.store.dtype())?;
        let (_, fin) = model.forward(&bt, &gt, Mode::Eval)?;
        loss_sum += scalar(&mse_loss(&fin, &yt)?)? * chunk.len() as f64;
        let pred = to_f32(&fin)?;
        let per = 3 * cfg.t * h * w;
        for (i, s) in chunk.iter().enumerate() {
            let got: Vec<_> = (0..cfg.t)
                .map(|k| planes_to_image(&pred, i * per + k * 3 * h * w, h, w))
                .collect();
            let want: Vec<_> = (0..cfg.t)
                .map(|k| planes_to_image(&s.sharp, k * 3 * h * w, h, w))
                .collect();
            psnr_sum += sequence_psnr(&got, &want)?;
        }
    }
    Ok((loss_sum / crops.len() as f64, psnr_sum / crops.len() as f64))
}

/// Trains a decomposer with MSE on the final output, cosine learning rate
/// and random crop / flip / inverse-direction augmentation.
pub fn train_decomposer(
    train: &[TrainingTriplet],
    val: &[TrainingTriplet],
    config: &DecomposerConfig,
) -> Result<(Decomposer, TrainLog)> {
    train_decomposer_with(train, val, config, &mut |_| {})
}

/// [`train_decomposer`] with a callback after every epoch.
pub fn train_decomposer_with(
    train: &[TrainingTriplet],
    val: &[TrainingTriplet],
    config: &DecomposerConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<(Decomposer, TrainLog)> {
    if train.is_empty() {
        return Err(NetError::EmptyDataset("training split".into()));
    }
    for tr in train.iter().chain(val) {
        if tr.sharp.len() != config.t {
            return Err(NetError::Config(format!(
                "triplet has {} frames, config T = {}",
                tr.sharp.len(),
                config.t
            )));
        }
        if tr.guidance_config().num_directions != config.guidance.num_directions {
            return Err(NetError::Config(
                "triplet guidance config differs from the model's".into(),
            ));
        }
    }
    let model = Decomposer::new(config)?;
    let variants = training_variants(train, config.inverse_augmentation)?;
    let val_samples: Vec<Sample> = val.iter().map(Sample::from_triplet).collect();
    let mut opt = AdamW::new(
        model.store.trainable(""),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0001);
    let steps_per_epoch = variants.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let bits = config.guidance.bit_width();
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..variants.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = config.learning_rate;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let flip = config.flip && rng.gen_bool(0.5);
                batch.push(pick_crop(&variants[i][flip as usize], config.crop, &mut rng)?);
            }
            let (bt, gt, yt) = batch_tensors(&batch, bits, config.t, model.store.dtype())?;
            lr = cosine_lr(config.learning_rate, step, total);
            opt.set_learning_rate(lr);
            let (_, fin) = model.forward(&bt, &gt, Mode::Train)?;
            let loss = mse_loss(&fin, &yt)?;
            let lv = scalar(&loss)?;
            if !lv.is_finite() {
                return Err(NetError::NonFinite(format!(
                    "training loss {lv} at epoch {epoch}, step {step}"
                )));
            }
            opt.backward_step(&loss)?;
            loss_sum += lv;
            step += 1;
        }
        let (val_loss, val_psnr) = if val_samples.is_empty() {
            (None, None)
        } else {
            let (l, p) = validate(&model, &val_samples)?;
            (Some(l), Some(p))
        };
        let m = EpochMetrics {
            epoch,
            steps: step,
            learning_rate: lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_loss,
            val_psnr,
        };
        log::debug!("decomposer epoch {epoch}: {m:?}");
        on_epoch(&m);
        log.epochs.push(m);
    }
    Ok((model, log))
}
