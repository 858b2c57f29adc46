//! Subcommand implementations.

use std::path::{Path, PathBuf};

use blurdecomp_core::dataset::{load_split, read_triplet, synthesize_split};
use blurdecomp_core::linsolve::{decompose_exact, ExactOptions, SolverRoute};
use blurdecomp_core::metrics::{sequence_psnr, sequence_ssim};
use blurdecomp_core::{
    guidance_from_adjacent, rasterize_annotation, Annotation, BlockMatcher, BlurryImage, GuidanceConfig, Image,
    MotionGuidance, SceneSampler, SharpSequence, DEFAULT_GAMMA,
};
use blurdecomp_nets::evalkit::{
    convergence_compare, direction_ablation, evaluate_best_of, evaluate_oracle_guidance, evaluate_static_guidance,
    evaluate_video_guidance, robustness_sweep, stage_ablation, Orientation,
};
use blurdecomp_nets::{Decomposer, DecomposerConfig, Predictor, PredictorConfig};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{load, write_effective};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sampler: SceneSampler,
    pub t: usize,
    pub guidance: GuidanceConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sampler: SceneSampler::default(),
            t: 7,
            guidance: GuidanceConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset root; `train/` and `val/` are created below it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub scenes: usize,
    #[arg(long, default_value_t = 16)]
    pub val_scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with `sampler`, `t` and `guidance` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable (e.g. `sampler.height=16`).
    #[arg(long = "set")]
    pub overrides: Vec<String>,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = load(a.config.as_deref(), &a.overrides)?;
    cfg.guidance.validate()?;
    synthesize_split(&a.out, "train", a.scenes, &cfg.sampler, cfg.t, &cfg.guidance, a.seed)?;
    synthesize_split(&a.out, "val", a.val_scenes, &cfg.sampler, cfg.t, &cfg.guidance, a.seed)?;
    write_effective(
        &a.out,
        "synth_config.json",
        &json!({"config": cfg, "scenes": a.scenes, "val_scenes": a.val_scenes, "seed": a.seed}),
    )?;
    log::info!("wrote {} + {} scenes to {}", a.scenes, a.val_scenes, a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn with_seed(mut overrides: Vec<String>, seed: Option<u64>) -> Vec<String> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    overrides
}

pub fn train_decomposer_cmd(a: &TrainArgs) -> Result<()> {
    let cfg: DecomposerConfig = load(a.config.as_deref(), &with_seed(a.overrides.clone(), a.seed))?;
    cfg.validate()?;
    write_effective(&a.out, "effective_config.json", &cfg)?;
    require(&a.data, "dataset")?;
    let train = load_split(&a.data, "train")?;
    let val = load_split(&a.data, "val").unwrap_or_default();
    let (model, log) = blurdecomp_nets::decomposer::train_decomposer_with(&train, &val, &cfg, &mut |m| {
        log::info!(
            "epoch {} train_loss {:.6} val_loss {:?} val_psnr {:?}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.val_psnr
        )
    })?;
    model.save(&a.out.join("decomposer.ckpt"))?;
    std::fs::write(a.out.join("train_log.csv"), log.to_csv())?;
    Ok(())
}

pub fn train_predictor_cmd(a: &TrainArgs) -> Result<()> {
    let cfg: PredictorConfig = load(a.config.as_deref(), &with_seed(a.overrides.clone(), a.seed))?;
    cfg.validate()?;
    write_effective(&a.out, "effective_config.json", &cfg)?;
    require(&a.data, "dataset")?;
    let train = load_split(&a.data, "train")?;
    let (model, log) = blurdecomp_nets::predictor::train_predictor_with(&train, &cfg, &mut |e| {
        log::info!(
            "epoch {} gan {:.4} vae {:.4} kl {:.4} disc {:.4}",
            e.epoch,
            e.gan,
            e.vae,
            e.kl,
            e.discriminator
        )
    })?;
    model.save(&a.out.join("predictor.ckpt"))?;
    std::fs::write(a.out.join("predictor_log.csv"), log.to_csv())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSource {
    /// Sample guidances from a trained predictor.
    Predict,
    /// Motion towards the next blurry frame of a video.
    Video,
    /// Polygon annotation text record.
    Annotation,
    /// Label-map PNG with a `.json` config sidecar.
    File,
}

#[derive(Args, Debug, Serialize)]
pub struct DecomposeArgs {
    /// Decomposer checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Blurry input PNG.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub guidance: GuidanceSource,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Number of predictor samples.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Next blurry frame, for `--guidance video`.
    #[arg(long)]
    pub next: Option<PathBuf>,
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    #[arg(long)]
    pub guidance_file: Option<PathBuf>,
    /// Block size and search radius of the block matcher.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 8)]
    pub search: usize,
}

/// Fails with a not-found error naming `what` when `path` is missing.
pub fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::NotFound(format!("{what} {} does not exist", path.display())))
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--guidance {mode} needs {flag}")))?;
    require(p, flag)?;
    Ok(p)
}

pub fn load_blurry(path: &Path) -> Result<BlurryImage> {
    require(path, "image")?;
    let image =
        Image::load_png(path).map_err(|e| CliError::Usage(format!("cannot read image {}: {e}", path.display())))?;
    Ok(BlurryImage {
        image,
        gamma: DEFAULT_GAMMA,
        source_frames: 1,
    })
}

pub fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(CliError::Unprocessable(format!(
            "image size {h}x{w} is not divisible by 4"
        )));
    }
    Ok(())
}

pub fn check_guidance(model: &GuidanceConfig, g: &GuidanceConfig) -> Result<()> {
    if model.num_directions != g.num_directions {
        return Err(CliError::Mismatch(format!(
            "guidance has {} directions, the checkpoint expects {}",
            g.num_directions, model.num_directions
        )));
    }
    Ok(())
}

pub fn annotation_guidance(text: &str, config: &GuidanceConfig, h: usize, w: usize) -> Result<MotionGuidance> {
    let a = Annotation::parse(text)?;
    if (a.height, a.width) != (h, w) {
        return Err(CliError::InvalidAnnotation(format!(
            "annotation canvas {}x{} does not match the {h}x{w} image",
            a.height, a.width
        )));
    }
    Ok(rasterize_annotation(&a, config)?)
}

pub fn write_sequence(dir: &Path, seq: &SharpSequence, g: &MotionGuidance) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, f) in seq.frames().iter().enumerate() {
        f.save_png(dir.join(format!("frame_{t:03}.png")))?;
    }
    g.save(dir.join("guidance.png"))?;
    g.to_color_image().save_png(dir.join("guidance_color.png"))?;
    Ok(())
}

pub fn decompose(a: &DecomposeArgs) -> Result<()> {
    require(&a.model, "model checkpoint")?;
    let model = Decomposer::load(&a.model)?;
    let gconf = model.config().guidance;
    let blurry = load_blurry(&a.input)?;
    let (h, w) = blurry.image.dims();
    check_divisible(h, w)?;
    write_effective(
        &a.out,
        "job.json",
        &json!({"command": "decompose", "args": a, "model": model.config()}),
    )?;
    match a.guidance {
        GuidanceSource::Predict => {
            let pred = Predictor::load(need(&a.predictor, "--predictor", "predict")?)?;
            check_guidance(&gconf, &pred.config().guidance)?;
            if a.n == 0 {
                return Err(CliError::Usage("--n must be >= 1".into()));
            }
            for (k, g) in pred.predict_multimodal(&blurry, a.n, a.seed)?.iter().enumerate() {
                let seq = model.decompose(&blurry, g)?;
                write_sequence(&a.out.join(format!("sample_{k}")), &seq, g)?;
            }
            return Ok(());
        }
        GuidanceSource::Video => {
            let next = load_blurry(need(&a.next, "--next", "video")?)?;
            let est = BlockMatcher {
                patch: a.patch,
                search: a.search,
            };
            let g = guidance_from_adjacent(&blurry, &next, &gconf, &est)?;
            write_sequence(&a.out, &model.decompose(&blurry, &g)?, &g)?;
        }
        GuidanceSource::Annotation => {
            let text = std::fs::read_to_string(need(&a.annotation, "--annotation", "annotation")?)?;
            let g = annotation_guidance(&text, &gconf, h, w)?;
            write_sequence(&a.out, &model.decompose(&blurry, &g)?, &g)?;
        }
        GuidanceSource::File => {
            let g = MotionGuidance::load(need(&a.guidance_file, "--guidance-file", "file")?)?;
            check_guidance(&gconf, g.config())?;
            if g.dims() != (h, w) {
                return Err(CliError::Usage(format!(
                    "guidance map is {}x{}, image is {h}x{w}",
                    g.height(),
                    g.width()
                )));
            }
            write_sequence(&a.out, &model.decompose(&blurry, &g)?, &g)?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Elimination,
    LeastSquares,
}

#[derive(Args, Debug, Serialize)]
pub struct OracleArgs {
    /// Scene directory of a synthesized dataset.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Solve with the flows of the time-reversed sequence.
    #[arg(long)]
    pub reverse: bool,
    /// Follow flows around the canvas edges.
    #[arg(long)]
    pub wrap: bool,
    #[arg(long, value_enum, default_value_t = Route::Elimination)]
    pub route: Route,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

pub fn oracle(a: &OracleArgs) -> Result<()> {
    require(&a.scene, "scene directory")?;
    let (tr, meta) = read_triplet(&a.scene)?;
    // Reversed order: backward_flows[t] leads from frame t + 1 to frame t.
    let flows: Vec<_> = if a.reverse {
        tr.backward_flows.iter().rev().cloned().collect()
    } else {
        tr.true_flows.clone()
    };
    let opts = ExactOptions {
        wrap: a.wrap,
        route: match a.route {
            Route::Elimination => SolverRoute::Elimination,
            Route::LeastSquares => SolverRoute::LeastSquares,
        },
        tolerance: a.tolerance,
    };
    let sol = decompose_exact(&tr.blurry, &flows, meta.t, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    write_effective(&a.out, "job.json", &json!({"command": "oracle", "args": a}))?;
    for (t, f) in sol.sequence.frames().iter().enumerate() {
        f.save_png(a.out.join(format!("frame_{t:03}.png")))?;
    }
    let target = if a.reverse {
        tr.sharp.reversed()
    } else {
        tr.sharp.clone()
    };
    let mut report = sol.report.summary();
    report.push_str(&format!(
        "psnr_vs_ground_truth {:.4}\n",
        sequence_psnr(sol.sequence.frames(), target.frames())?
    ));
    std::fs::write(a.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Ground-truth guidance.
    Oracle,
    /// All-static guidance.
    Static,
    /// Guidance from ground-truth adjacent-frame motion.
    Video,
    /// Best of `--n` predictor samples.
    BestOf,
    /// Dilated and eroded ground-truth guidance.
    Robustness,
    /// Paired training with and without guidance.
    Convergence,
    /// Two-stage against a matched one-stage model.
    StageAblation,
    /// One model per direction count.
    Directions,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    #[arg(long)]
    pub out: PathBuf,
    /// Decomposer checkpoint (evaluation protocols).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also score the time-reversed output (best-of only).
    #[arg(long)]
    pub either_direction: bool,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    pub radii: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub directions: Vec<usize>,
    /// Decomposer config for the training protocols.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set")]
    pub overrides: Vec<String>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    write_effective(&a.out, "job.json", &json!({"command": "eval", "args": a}))?;
    require(&a.data, "dataset")?;
    let data = load_split(&a.data, &a.split)?;
    let model = || -> Result<Decomposer> {
        let p = a
            .model
            .as_deref()
            .ok_or_else(|| CliError::Usage("this protocol needs --model".into()))?;
        require(p, "model checkpoint")?;
        Ok(Decomposer::load(p)?)
    };
    let train_cfg = || -> Result<DecomposerConfig> { load(a.config.as_deref(), &a.overrides) };
    let write_report = |r: &blurdecomp_nets::evalkit::EvalReport, name: &str| -> Result<()> {
        std::fs::write(a.out.join(format!("{name}.txt")), r.to_text())?;
        std::fs::write(a.out.join(format!("{name}.json")), r.to_json()?)?;
        Ok(())
    };
    match a.protocol {
        Protocol::Oracle => write_report(&evaluate_oracle_guidance(&model()?, &data)?, "report")?,
        Protocol::Static => write_report(&evaluate_static_guidance(&model()?, &data)?, "report")?,
        Protocol::Video => write_report(&evaluate_video_guidance(&model()?, &data)?, "report")?,
        Protocol::BestOf => {
            let m = model()?;
            let p = Predictor::load(
                a.predictor
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("best-of needs --predictor".into()))?,
            )?;
            check_guidance(&m.config().guidance, &p.config().guidance)?;
            let orientation = if a.either_direction {
                Orientation::EitherDirection
            } else {
                Orientation::Forward
            };
            write_report(&evaluate_best_of(&m, &p, &data, a.n, a.seed, orientation)?, "report")?;
        }
        Protocol::Robustness => {
            let mut csv = String::from("mode,radius,psnr,ssim\n");
            for pt in robustness_sweep(&model()?, &data, &a.radii)? {
                csv.push_str(&format!(
                    "{:?},{},{:.6},{:.6}\n",
                    pt.mode, pt.radius, pt.report.mean_psnr, pt.report.mean_ssim
                ));
                write_report(&pt.report, &pt.report.protocol)?;
            }
            std::fs::write(a.out.join("robustness.csv"), csv)?;
        }
        Protocol::Convergence => {
            let train = load_split(&a.data, "train")?;
            let r = convergence_compare(&train, &data, &train_cfg()?)?;
            std::fs::write(a.out.join("convergence.csv"), r.to_csv())?;
            std::fs::write(a.out.join("summary.txt"), format!("final_ratio {:.6}\n", r.final_ratio))?;
        }
        Protocol::StageAblation => {
            let train = load_split(&a.data, "train")?;
            let r = stage_ablation(&train, &data, &train_cfg()?)?;
            std::fs::write(
                a.out.join("summary.txt"),
                format!(
                    "two_stage_params {}\none_stage_params {}\ntwo_stage_psnr {:.4}\none_stage_psnr {:.4}\ngap_db {:.4}\n",
                    r.two_stage_params,
                    r.one_stage_params,
                    r.two_stage_psnr,
                    r.one_stage_psnr,
                    r.gap_db()
                ),
            )?;
            std::fs::write(a.out.join("two_stage.csv"), r.two_stage.to_csv())?;
            std::fs::write(a.out.join("one_stage.csv"), r.one_stage.to_csv())?;
        }
        Protocol::Directions => {
            let train = load_split(&a.data, "train")?;
            let mut csv = String::from("num_directions,val_psnr\n");
            for p in direction_ablation(&train, &data, &train_cfg()?, &a.directions)? {
                csv.push_str(&format!("{},{:.6}\n", p.num_directions, p.val_psnr));
            }
            std::fs::write(a.out.join("directions.csv"), csv)?;
        }
    }
    Ok(())
}

/// Mean PSNR and SSIM of two sequences, for reports.
pub fn sequence_scores(a: &SharpSequence, b: &SharpSequence) -> Result<(f64, f64)> {
    Ok((
        sequence_psnr(a.frames(), b.frames())?,
        sequence_ssim(a.frames(), b.frames())?,
    ))
}
