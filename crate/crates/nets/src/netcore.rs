//! Layers, the encoder-decoder stage, Gumbel-softmax sampling and a
//! finite-difference gradient checker.

use candle_core::{DType, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::params::ParamStore;

/// How normalization layers pick their statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Batch statistics without touching the running averages.
    BatchStats,
    /// Running averages.
    Eval,
}

/// Checks a 4-d tensor against `(batch?, channels, height?, width?)`.
pub fn check_shape(x: &Tensor, channels: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != channels {
        return Err(NetError::Shape(format!(
            "{what}: expected (B, {channels}, H, W), got {dims:?}"
        )));
    }
    Ok((dims[0], dims[1], dims[2], dims[3]))
}

#[derive(Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Fan-in scaled uniform init; `zero` gives an all-zero layer.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        zero: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = if zero {
            0.0
        } else {
            1.0 / ((cin * kernel * kernel) as f64).sqrt()
        };
        let weight = store.uniform(&format!("{name}.weight"), &[cout, cin, kernel, kernel], bound, rng)?;
        let bias = store.uniform(&format!("{name}.bias"), &[cout], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// 4×4 transposed convolution with stride 2 and padding 1: doubles H and W.
#[derive(Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        // Each output pixel sees cin·(4/2)² inputs.
        let bound = 1.0 / ((cin * 4) as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[cin, cout, 4, 4], bound, rng)?;
        let bias = store.uniform(&format!("{name}.bias"), &[cout], bound, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 0, 2, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone)]
pub struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.gamma.dim(0)?;
        let (mean, var) = match mode {
            Mode::Eval => (
                self.running_mean.reshape((1, c, 1, 1))?,
                self.running_var.reshape((1, c, 1, 1))?,
            ),
            Mode::Train | Mode::BatchStats => {
                let mean = x.mean_keepdim((0, 2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
                if mode == Mode::Train {
                    let (b, _, h, w) = x.dims4()?;
                    let n = (b * h * w) as f64;
                    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                    let m = self.momentum;
                    let new_mean =
                        ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
                    let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                        + (var.detach().flatten_all()? * (m * unbiased))?)?;
                    self.running_mean.set(&new_mean)?;
                    self.running_var.set(&new_var)?;
                }
                (mean, var)
            }
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, stride, 1, false, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

#[derive(Clone)]
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
}

impl ResBlock {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.a.forward(x, mode)?.relu()?;
        let h = self.b.forward(&h, mode)?;
        Ok((h + x)?.relu()?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel widths at full, half and quarter resolution.
    pub widths: [usize; 3],
    pub res_blocks: usize,
    /// Start the output layer at zero so the stage initially outputs zeros.
    pub zero_init_output: bool,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.contains(&0) {
            return Err(NetError::Config(format!(
                "stage channel widths must be positive: {self:?}"
            )));
        }
        if self.res_blocks == 0 {
            return Err(NetError::Config("a stage needs at least one residual block".into()));
        }
        Ok(())
    }
}

/// Encoder-decoder: stem, two stride-2 convolutions, residual bottleneck,
/// two stride-2 transposed convolutions with additive skips, output conv.
#[derive(Clone)]
pub struct Stage {
    config: StageConfig,
    stem: ConvBn,
    down1: ConvBn,
    down2: ConvBn,
    blocks: Vec<ResBlock>,
    up1: ConvTranspose2d,
    up1_bn: BatchNorm,
    up2: ConvTranspose2d,
    up2_bn: BatchNorm,
    out: Conv2d,
}

impl Stage {
    pub fn new(store: &mut ParamStore, name: &str, config: &StageConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [w0, w1, w2] = config.widths;
        let stem = ConvBn::new(store, &format!("{name}.stem"), config.in_channels, w0, 1, rng)?;
        let down1 = ConvBn::new(store, &format!("{name}.down1"), w0, w1, 2, rng)?;
        let down2 = ConvBn::new(store, &format!("{name}.down2"), w1, w2, 2, rng)?;
        let mut blocks = Vec::with_capacity(config.res_blocks);
        for i in 0..config.res_blocks {
            blocks.push(ResBlock {
                a: ConvBn::new(store, &format!("{name}.res{i}.a"), w2, w2, 1, rng)?,
                b: ConvBn::new(store, &format!("{name}.res{i}.b"), w2, w2, 1, rng)?,
            });
        }
        let up1 = ConvTranspose2d::new(store, &format!("{name}.up1"), w2, w1, rng)?;
        let up1_bn = BatchNorm::new(store, &format!("{name}.up1.bn"), w1)?;
        let up2 = ConvTranspose2d::new(store, &format!("{name}.up2"), w1, w0, rng)?;
        let up2_bn = BatchNorm::new(store, &format!("{name}.up2.bn"), w0)?;
        let out = Conv2d::new(
            store,
            &format!("{name}.out"),
            w0,
            config.out_channels,
            3,
            1,
            1,
            config.zero_init_output,
            rng,
        )?;
        Ok(Self {
            config: config.clone(),
            stem,
            down1,
            down2,
            blocks,
            up1,
            up1_bn,
            up2,
            up2_bn,
            out,
        })
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = check_shape(x, self.config.in_channels, "stage input")?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(NetError::Shape(format!("stage input {h}x{w} is not divisible by 4")));
        }
        let s0 = self.stem.forward(x, mode)?.relu()?;
        let s1 = self.down1.forward(&s0, mode)?.relu()?;
        let mut hcur = self.down2.forward(&s1, mode)?.relu()?;
        for b in &self.blocks {
            hcur = b.forward(&hcur, mode)?;
        }
        let u1 = (self.up1_bn.forward(&self.up1.forward(&hcur)?, mode)?.relu()? + s1)?;
        let u2 = (self.up2_bn.forward(&self.up2.forward(&u1)?, mode)?.relu()? + s0)?;
        self.out.forward(&u2)
    }
}

/// Standard Gumbel noise `-ln(-ln u)` with the given shape.
pub fn gumbel_noise(shape: &[usize], dtype: DType, rng: &mut impl Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Ok(Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// One-hot of the argmax along dim 1 of a `(B, K, H, W)` tensor.
pub fn one_hot_argmax(x: &Tensor) -> Result<Tensor> {
    let k = x.dim(1)?;
    let idx = x.argmax_keepdim(1)?;
    let classes = Tensor::arange(0u32, k as u32, x.device())?.reshape((1, k, 1, 1))?;
    Ok(idx.broadcast_eq(&classes)?.to_dtype(x.dtype())?)
}

/// Gumbel-softmax over dim 1 of `(B, K, H, W)` logits.
///
/// `noise` is added to the logits when given (pass `None` to disable it).
/// In hard mode the forward value is exactly one-hot and the gradient is
/// that of the soft sample.
pub fn gumbel_softmax(logits: &Tensor, temperature: f64, hard: bool, noise: Option<&Tensor>) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(NetError::Config(format!(
            "Gumbel-softmax temperature must be > 0 (got {temperature})"
        )));
    }
    let y = match noise {
        Some(g) => (logits + g)?,
        None => logits.clone(),
    };
    let soft = candle_nn::ops::softmax(&(y / temperature)?, 1)?;
    if !hard {
        return Ok(soft);
    }
    let hard = one_hot_argmax(&soft)?;
    Ok((hard + (&soft - soft.detach())?)?)
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, 1)`, summed over the
/// latent dimension and averaged over the batch.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let b = mu.dim(0)? as f64;
    let terms = ((mu.sqr()? + logvar.exp()?)? - logvar)?;
    Ok(((terms - 1.0)?.sum_all()? * (0.5 / b))?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
}

/// Compares autodiff gradients with central differences.
///
/// For every variable, `samples` coordinates (all when the tensor is
/// smaller) are perturbed by `±epsilon`. The error of a coordinate is
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-8)`.
pub fn grad_check(
    f: &dyn Fn() -> Result<Tensor>,
    params: &[(String, Var)],
    epsilon: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let eval = || -> Result<f64> {
        let v = scalar(&f()?)?;
        if !v.is_finite() {
            return Err(NetError::NonFinite(format!("loss {v} during gradient check")));
        }
        Ok(v)
    };
    let loss = f()?;
    if !scalar(&loss)?.is_finite() {
        return Err(NetError::NonFinite("loss at the checked point".into()));
    }
    let grads = loss.backward()?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (name, var) in params {
        let shape = var.dims().to_vec();
        let dtype = var.dtype();
        let original: Vec<f64> = var.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
            None => vec![0.0; original.len()],
        };
        let coords: Vec<usize> = if original.len() <= samples {
            (0..original.len()).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..original.len())).collect()
        };
        let set = |vals: &[f64]| -> Result<()> {
            let t = Tensor::from_vec(vals.to_vec(), shape.as_slice(), var.device())?.to_dtype(dtype)?;
            var.set(&t)?;
            Ok(())
        };
        for i in coords {
            let mut vals = original.clone();
            vals[i] = original[i] + epsilon;
            set(&vals)?;
            let up = eval()?;
            vals[i] = original[i] - epsilon;
            set(&vals)?;
            let down = eval()?;
            set(&original)?;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-8);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
