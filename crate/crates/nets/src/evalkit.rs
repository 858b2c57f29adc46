//! Evaluation protocols and reports.

use std::time::Instant;

use blurdecomp_core::metrics::{psnr, ssim, PSNR_CAP_DB};
use blurdecomp_core::{
    aggregate_flow, guidance_from_adjacent, perturb_guidance, quantize, GuidanceConfig, KnownFlow, Morphology,
    MotionGuidance, SharpSequence, TrainingTriplet,
};
use serde::{Deserialize, Serialize};

use crate::decomposer::{matched_one_stage, train_decomposer, Decomposer, DecomposerConfig, TrainLog};
use crate::error::{NetError, Result};
use crate::predictor::Predictor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Which candidate won, for best-of protocols.
    pub chosen: Option<usize>,
    pub reversed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub fingerprint: String,
    pub sequences: Vec<SequenceScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub runtime_secs: f64,
    pub notes: Vec<String>,
}

impl EvalReport {
    fn new(protocol: &str, fingerprint: String, sequences: Vec<SequenceScore>, started: Instant) -> Self {
        let n = sequences.len().max(1) as f64;
        Self {
            protocol: protocol.to_string(),
            fingerprint,
            mean_psnr: sequences.iter().map(|s| s.psnr).sum::<f64>() / n,
            mean_ssim: sequences.iter().map(|s| s.ssim).sum::<f64>() / n,
            sequences,
            runtime_secs: started.elapsed().as_secs_f64(),
            notes: vec!["LPIPS not computed".into()],
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "protocol {}\nfingerprint {}\nsequences {}\nmean_psnr {:.4}\nmean_ssim {:.4}\nruntime_secs {:.2}\n",
            self.protocol,
            self.fingerprint,
            self.sequences.len(),
            self.mean_psnr,
            self.mean_ssim,
            self.runtime_secs
        );
        for n in &self.notes {
            s.push_str(&format!("note {n}\n"));
        }
        s.push_str("index  psnr      ssim    chosen\n");
        for q in &self.sequences {
            s.push_str(&format!(
                "{:<6} {:<9.4} {:<7.4} {}{}\n",
                q.index,
                q.psnr,
                q.ssim,
                q.chosen.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
                if q.reversed { " reversed" } else { "" }
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Short stable hash of any serializable configuration.
pub fn fingerprint(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// How a predicted sequence is matched against the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Forward,
    /// Best of the forward and time-reversed ground truth, for methods that
    /// cannot resolve the direction.
    EitherDirection,
}

/// Mean per-frame PSNR (capped) and SSIM.
pub fn score_sequence(pred: &SharpSequence, gt: &SharpSequence) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(NetError::Shape(format!(
            "{} frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in pred.frames().iter().zip(gt.frames()) {
        p += psnr(a, b)?.min(PSNR_CAP_DB);
        s += ssim(a, b)?;
    }
    Ok((p / n, s / n))
}

fn score_oriented(pred: &SharpSequence, gt: &SharpSequence, orientation: Orientation) -> Result<(f64, f64, bool)> {
    let (p, s) = score_sequence(pred, gt)?;
    if orientation == Orientation::Forward {
        return Ok((p, s, false));
    }
    let (pr, sr) = score_sequence(pred, &gt.reversed())?;
    Ok(if pr > p { (pr, sr, true) } else { (p, s, false) })
}

/// Decomposes every triplet with the guidance chosen by `guidance_for`.
pub fn evaluate_guidance(
    model: &Decomposer,
    data: &[TrainingTriplet],
    protocol: &str,
    guidance_for: &dyn Fn(usize, &TrainingTriplet) -> Result<MotionGuidance>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset("evaluation set".into()));
    }
    let started = Instant::now();
    let mut scores = Vec::with_capacity(data.len());
    for (i, tr) in data.iter().enumerate() {
        let g = guidance_for(i, tr)?;
        let out = model.decompose(&tr.blurry, &g)?;
        let (p, s) = score_sequence(&out, &tr.sharp)?;
        scores.push(SequenceScore {
            index: i,
            psnr: p,
            ssim: s,
            chosen: None,
            reversed: false,
        });
    }
    Ok(EvalReport::new(protocol, fingerprint(model.config()), scores, started))
}

/// Ground-truth guidance stored in each triplet.
pub fn evaluate_oracle_guidance(model: &Decomposer, data: &[TrainingTriplet]) -> Result<EvalReport> {
    evaluate_guidance(model, data, "oracle-guidance", &|_, tr| Ok(tr.guidance.clone()))
}

/// All-static guidance.
pub fn evaluate_static_guidance(model: &Decomposer, data: &[TrainingTriplet]) -> Result<EvalReport> {
    evaluate_guidance(model, data, "static-guidance", &|_, tr| {
        let (h, w) = tr.dims();
        Ok(MotionGuidance::all_static(h, w, *tr.guidance_config()))
    })
}

/// Guidance from the motion to the adjacent frame, with the triplet's
/// aggregated ground-truth flow standing in for the flow estimator.
pub fn evaluate_video_guidance(model: &Decomposer, data: &[TrainingTriplet]) -> Result<EvalReport> {
    evaluate_guidance(model, data, "video-guidance", &|_, tr| {
        let est = KnownFlow(aggregate_flow(&tr.true_flows)?);
        Ok(guidance_from_adjacent(
            &tr.blurry,
            &tr.blurry,
            tr.guidance_config(),
            &est,
        )?)
    })
}

/// Seed of the latent draws for input `index`.
pub fn input_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Best-of-`n` over predictor samples: for every input, `n` guidances are
/// sampled (the first `k` draws do not depend on `n`), each is decomposed,
/// and the best PSNR is kept.
pub fn evaluate_best_of(
    decomposer: &Decomposer,
    predictor: &Predictor,
    data: &[TrainingTriplet],
    n: usize,
    seed: u64,
    orientation: Orientation,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset("evaluation set".into()));
    }
    if n == 0 {
        return Err(NetError::Config("n must be >= 1".into()));
    }
    let started = Instant::now();
    let mut scores = Vec::with_capacity(data.len());
    for (i, tr) in data.iter().enumerate() {
        let guides = predictor.predict_multimodal(&tr.blurry, n, input_seed(seed, i))?;
        let mut best: Option<SequenceScore> = None;
        for (j, g) in guides.iter().enumerate() {
            let out = decomposer.decompose(&tr.blurry, g)?;
            let (p, s, rev) = score_oriented(&out, &tr.sharp, orientation)?;
            if best.as_ref().is_none_or(|b| p > b.psnr) {
                best = Some(SequenceScore {
                    index: i,
                    psnr: p,
                    ssim: s,
                    chosen: Some(j),
                    reversed: rev,
                });
            }
        }
        scores.push(best.expect("n >= 1"));
    }
    let fp = fingerprint(&(decomposer.config(), predictor.config(), n, seed));
    Ok(EvalReport::new(&format!("P{n}"), fp, scores, started))
}

/// Frame-wise similarity of two decompositions, ignoring the center frame:
/// `reversed` pairs frame `t` with `T−1−t`, `aligned` pairs `t` with `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalScore {
    pub reversed_psnr: f64,
    pub aligned_psnr: f64,
}

pub fn reversal_similarity(a: &SharpSequence, b: &SharpSequence) -> Result<ReversalScore> {
    let t = a.len();
    if b.len() != t || t < 2 {
        return Err(NetError::Shape(format!("sequences of {} and {} frames", t, b.len())));
    }
    let (mut r, mut al, mut n) = (0.0, 0.0, 0.0);
    for k in 0..t {
        if 2 * k + 1 == t {
            continue;
        }
        r += psnr(&a.frames()[k], &b.frames()[t - 1 - k])?.min(PSNR_CAP_DB);
        al += psnr(&a.frames()[k], &b.frames()[k])?.min(PSNR_CAP_DB);
        n += 1.0;
    }
    Ok(ReversalScore {
        reversed_psnr: r / n,
        aligned_psnr: al / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub with_guidance: TrainLog,
    pub without_guidance: TrainLog,
    /// Final validation loss with guidance over the loss without.
    pub final_ratio: f64,
}

impl ConvergenceReport {
    /// `epoch,with_train,with_val,without_train,without_val` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,with_train,with_val,without_train,without_val\n");
        for (a, b) in self.with_guidance.epochs.iter().zip(&self.without_guidance.epochs) {
            s.push_str(&format!(
                "{},{:.8},{:.8},{:.8},{:.8}\n",
                a.epoch,
                a.train_loss,
                a.val_loss.unwrap_or(f64::NAN),
                b.train_loss,
                b.val_loss.unwrap_or(f64::NAN)
            ));
        }
        s
    }
}

/// Paired runs with identical architecture, seed and budget; the second run
/// zeroes the guidance channels.
pub fn convergence_compare(
    train: &[TrainingTriplet],
    val: &[TrainingTriplet],
    config: &DecomposerConfig,
) -> Result<ConvergenceReport> {
    if val.is_empty() {
        return Err(NetError::EmptyDataset("validation split".into()));
    }
    let with = DecomposerConfig {
        zero_guidance: false,
        ..config.clone()
    };
    let without = DecomposerConfig {
        zero_guidance: true,
        ..config.clone()
    };
    let (_, a) = train_decomposer(train, val, &with)?;
    let (_, b) = train_decomposer(train, val, &without)?;
    let ratio = a.final_val_loss().unwrap_or(f64::NAN) / b.final_val_loss().unwrap_or(f64::NAN);
    Ok(ConvergenceReport {
        with_guidance: a,
        without_guidance: b,
        final_ratio: ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub mode: Morphology,
    pub radius: usize,
    pub report: EvalReport,
}

/// Oracle guidance dilated and eroded by every radius in `radii`.
pub fn robustness_sweep(model: &Decomposer, data: &[TrainingTriplet], radii: &[usize]) -> Result<Vec<RobustnessPoint>> {
    let mut out = Vec::new();
    for &r in radii {
        for mode in [Morphology::Dilate, Morphology::Erode] {
            let name = format!("{}-{r}", if mode == Morphology::Dilate { "dilate" } else { "erode" });
            let report = evaluate_guidance(model, data, &name, &|_, tr| Ok(perturb_guidance(&tr.guidance, mode, r)))?;
            out.push(RobustnessPoint {
                mode,
                radius: r,
                report,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageAblation {
    pub two_stage_params: usize,
    pub one_stage_params: usize,
    pub two_stage: TrainLog,
    pub one_stage: TrainLog,
    pub two_stage_psnr: f64,
    pub one_stage_psnr: f64,
}

impl StageAblation {
    pub fn gap_db(&self) -> f64 {
        self.two_stage_psnr - self.one_stage_psnr
    }
}

/// Two-stage model against a one-stage model of matched parameter count.
pub fn stage_ablation(
    train: &[TrainingTriplet],
    val: &[TrainingTriplet],
    config: &DecomposerConfig,
) -> Result<StageAblation> {
    let two = DecomposerConfig {
        one_stage: false,
        ..config.clone()
    };
    let one = matched_one_stage(&two)?;
    let (m2, l2) = train_decomposer(train, val, &two)?;
    let (m1, l1) = train_decomposer(train, val, &one)?;
    Ok(StageAblation {
        two_stage_params: m2.num_parameters(),
        one_stage_params: m1.num_parameters(),
        two_stage_psnr: l2.final_val_psnr().unwrap_or(f64::NAN),
        one_stage_psnr: l1.final_val_psnr().unwrap_or(f64::NAN),
        two_stage: l2,
        one_stage: l1,
    })
}

/// Re-derives a triplet's guidance under another configuration.
pub fn requantize(tr: &TrainingTriplet, config: &GuidanceConfig) -> Result<TrainingTriplet> {
    let mut out = tr.clone();
    out.guidance = quantize(&aggregate_flow(&tr.true_flows)?, config)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionPoint {
    pub num_directions: usize,
    pub val_psnr: f64,
    pub log: TrainLog,
}

/// Trains one decomposer per direction count on requantized guidance.
pub fn direction_ablation(
    train: &[TrainingTriplet],
    val: &[TrainingTriplet],
    config: &DecomposerConfig,
    counts: &[usize],
) -> Result<Vec<DirectionPoint>> {
    let mut out = Vec::new();
    for &n in counts {
        let gconf = GuidanceConfig {
            num_directions: n,
            ..config.guidance
        };
        gconf.validate()?;
        let tr: Vec<_> = train.iter().map(|t| requantize(t, &gconf)).collect::<Result<_>>()?;
        let va: Vec<_> = val.iter().map(|t| requantize(t, &gconf)).collect::<Result<_>>()?;
        let cfg = DecomposerConfig {
            guidance: gconf,
            ..config.clone()
        };
        let (_, log) = train_decomposer(&tr, &va, &cfg)?;
        out.push(DirectionPoint {
            num_directions: n,
            val_psnr: log.final_val_psnr().unwrap_or(f64::NAN),
            log,
        });
    }
    Ok(out)
}
