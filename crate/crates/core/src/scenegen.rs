//! Synthetic high-frame-rate scenes of rigid, constant-velocity sprites,
//! linear-space blur synthesis and training triplet assembly.
//!
//! Sprite positions are rounded to whole pixels at every sub-frame, so all
//! frame-to-frame flows are exact integer translations and warping frame
//! `n` by its flow reproduces frame `n + 1` on non-occluded pixels.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::flow::{aggregate_flow, FlowField};
use crate::guidance::{quantize, GuidanceConfig, MotionGuidance};
use crate::image::{gamma_decode, gamma_encode, Image, DEFAULT_GAMMA};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SpriteShape {
    Rect { width: usize, height: usize },
    Ellipse { width: usize, height: usize },
}

impl SpriteShape {
    fn extent(&self) -> (usize, usize) {
        match *self {
            SpriteShape::Rect { width, height } | SpriteShape::Ellipse { width, height } => (height, width),
        }
    }

    fn contains(&self, ly: usize, lx: usize) -> bool {
        match *self {
            SpriteShape::Rect { width, height } => ly < height && lx < width,
            SpriteShape::Ellipse { width, height } => {
                if ly >= height || lx >= width {
                    return false;
                }
                let cy = (ly as f64 + 0.5) / height as f64 * 2.0 - 1.0;
                let cx = (lx as f64 + 0.5) / width as f64 * 2.0 - 1.0;
                cx * cx + cy * cy <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpriteSpec {
    pub shape: SpriteShape,
    /// Top-left corner `(x, y)` at sub-frame 0.
    pub origin: [f64; 2],
    /// Constant velocity `(vx, vy)` in pixels per sub-frame.
    pub velocity: [f64; 2],
    pub texture_seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    /// Sprites may leave the canvas and are cut at the border.
    #[default]
    Clip,
    /// Any sprite leaving the canvas is an error.
    Reject,
    /// The canvas is a torus.
    Wrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Back to front.
    pub sprites: Vec<SpriteSpec>,
    pub background_seed: u64,
    pub subframes: usize,
    pub gamma: f64,
    pub boundary: BoundaryPolicy,
    /// Largest allowed per-sub-frame displacement in pixels.
    pub max_flow: f64,
    /// Amplitude of procedural texture variation around each base color.
    pub texture_contrast: f64,
}

impl SceneConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sprites: Vec::new(),
            background_seed: 0,
            subframes: 128,
            gamma: DEFAULT_GAMMA,
            boundary: BoundaryPolicy::Clip,
            max_flow: 32.0,
            texture_contrast: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene must be non-empty".into()));
        }
        if self.subframes < 1 {
            return Err(Error::Config("need at least one sub-frame".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive (got {})", self.gamma)));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            let (h, w) = s.shape.extent();
            if h == 0 || w == 0 {
                return Err(Error::Config(format!("sprite {i} has an empty shape")));
            }
            if self.boundary == BoundaryPolicy::Wrap && (h > self.height || w > self.width) {
                return Err(Error::Config(format!("sprite {i} is larger than the wrapped canvas")));
            }
            if !s.velocity.iter().chain(&s.origin).all(|v| v.is_finite()) {
                return Err(Error::Config(format!("sprite {i} has non-finite motion")));
            }
        }
        Ok(())
    }
}

/// Deterministic lattice value noise, bilinearly interpolated.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: f64) -> Self {
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let lattice = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cell, cols, lattice }
    }

    fn sample(&self, y: f64, x: f64) -> f64 {
        let fy = y / self.cell;
        let fx = x / self.cell;
        let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        let at = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
        let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn texture(seed: u64, height: usize, width: usize, contrast: f64, stripes: bool) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [
        rng.gen_range(0.15..0.85),
        rng.gen_range(0.15..0.85),
        rng.gen_range(0.15..0.85),
    ];
    let noise = ValueNoise::new(&mut rng, height, width, 4.0);
    let freq = rng.gen_range(0.6..1.4);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let tint: [f64; 3] = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    Image::from_fn(height, width, |y, x| {
        let n = noise.sample(y as f64, x as f64);
        let s = if stripes {
            ((x as f64 * angle.cos() + y as f64 * angle.sin()) * freq + phase).sin()
        } else {
            0.0
        };
        let v = 0.6 * n + 0.4 * s;
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = (base[c] + contrast * v * (0.7 + 0.3 * tint[c])).clamp(0.0, 1.0);
        }
        rgb
    })
}

/// A rendered scene: `N` sub-frames, the `N − 1` analytic flows between
/// consecutive sub-frames, and the per-sprite integer tracks they came from.
#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    pub frames: Vec<Image>,
    pub flows: Vec<FlowField>,
    /// `tracks[sprite][n]` is the integer top-left `(x, y)` at sub-frame `n`.
    tracks: Vec<Vec<[i64; 2]>>,
    /// Per sub-frame, the top-most sprite index at each pixel (`None` = background).
    ids: Vec<Vec<Option<usize>>>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    /// Analytic displacement from sub-frame `from` to sub-frame `to`,
    /// defined on the pixels of frame `from`. Works in either time direction.
    pub fn flow_between(&self, from: usize, to: usize) -> FlowField {
        let (h, w) = self.dims();
        let ids = &self.ids[from];
        FlowField::from_fn(h, w, |y, x| match ids[y * w + x] {
            None => [0.0, 0.0],
            Some(s) => {
                let a = self.tracks[s][from];
                let b = self.tracks[s][to];
                [(b[0] - a[0]) as f64, (b[1] - a[1]) as f64]
            }
        })
    }

    /// Sprite index visible at `(y, x)` in sub-frame `n`.
    pub fn sprite_at(&self, n: usize, y: usize, x: usize) -> Option<usize> {
        self.ids[n][y * self.config.width + x]
    }
}

fn track_position(spec: &SpriteSpec, n: usize) -> [i64; 2] {
    [
        (spec.origin[0] + spec.velocity[0] * n as f64).round() as i64,
        (spec.origin[1] + spec.velocity[1] * n as f64).round() as i64,
    ]
}

/// Renders a scene. `seed` perturbs every texture seed, so one config can
/// yield many appearance variants.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let (h, w, n) = (config.height, config.width, config.subframes);
    let mix = |s: u64| s ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);

    for (i, s) in config.sprites.iter().enumerate() {
        let speed = s.velocity[0].hypot(s.velocity[1]);
        if speed > config.max_flow + 0.5 {
            return Err(Error::Scene(format!(
                "sprite {i} moves {speed:.2} px per sub-frame, above the limit {}",
                config.max_flow
            )));
        }
    }

    let tracks: Vec<Vec<[i64; 2]>> = config
        .sprites
        .iter()
        .map(|s| (0..n).map(|k| track_position(s, k)).collect())
        .collect();

    if config.boundary == BoundaryPolicy::Reject {
        for (i, (s, track)) in config.sprites.iter().zip(&tracks).enumerate() {
            let (sh, sw) = s.shape.extent();
            for (k, p) in track.iter().enumerate() {
                if p[0] < 0 || p[1] < 0 || p[0] + sw as i64 > w as i64 || p[1] + sh as i64 > h as i64 {
                    return Err(Error::Scene(format!("sprite {i} leaves the frame at sub-frame {k}")));
                }
            }
        }
    }

    let background = texture(mix(config.background_seed), h, w, config.texture_contrast, false);
    let textures: Vec<Image> = config
        .sprites
        .iter()
        .map(|s| {
            let (sh, sw) = s.shape.extent();
            texture(mix(s.texture_seed), sh, sw, config.texture_contrast, true)
        })
        .collect();

    let mut frames = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for k in 0..n {
        let mut frame = background.clone();
        let mut id = vec![None; h * w];
        for (si, s) in config.sprites.iter().enumerate() {
            let (sh, sw) = s.shape.extent();
            let [ox, oy] = tracks[si][k];
            for ly in 0..sh {
                for lx in 0..sw {
                    if !s.shape.contains(ly, lx) {
                        continue;
                    }
                    let (mut py, mut px) = (oy + ly as i64, ox + lx as i64);
                    if config.boundary == BoundaryPolicy::Wrap {
                        py = py.rem_euclid(h as i64);
                        px = px.rem_euclid(w as i64);
                    } else if py < 0 || px < 0 || py >= h as i64 || px >= w as i64 {
                        continue;
                    }
                    let (py, px) = (py as usize, px as usize);
                    frame.set(py, px, textures[si].get(ly, lx));
                    id[py * w + px] = Some(si);
                }
            }
        }
        frames.push(frame);
        ids.push(id);
    }

    let mut scene = Scene {
        config: config.clone(),
        frames,
        flows: Vec::new(),
        tracks,
        ids,
    };
    scene.flows = (0..n.saturating_sub(1)).map(|k| scene.flow_between(k, k + 1)).collect();
    Ok(scene)
}

/// A single frame blurred over the exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurryImage {
    pub image: Image,
    pub gamma: f64,
    pub source_frames: usize,
}

/// Averages `frames` in linear intensity and re-encodes.
///
/// Frame `i` is paired with frame `N − 1 − i` before accumulating, so the
/// result is bit-identical when the frame order is reversed.
pub fn synthesize_blur(frames: &[Image], gamma: f64) -> Result<BlurryImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Domain("synthesize_blur needs at least one frame".into()))?;
    for f in frames {
        first.ensure_same_shape(f)?;
    }
    let linear = frames
        .iter()
        .map(|f| gamma_decode(f, gamma))
        .collect::<Result<Vec<_>>>()?;
    let n = linear.len();
    let mut acc = vec![0.0; first.data().len()];
    for i in 0..n / 2 {
        let (a, b) = (linear[i].data(), linear[n - 1 - i].data());
        for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
            *s += x + y;
        }
    }
    if n % 2 == 1 {
        for (s, x) in acc.iter_mut().zip(linear[n / 2].data()) {
            *s += x;
        }
    }
    let inv = n as f64;
    for s in &mut acc {
        *s /= inv;
    }
    let mean = Image::from_vec(first.height(), first.width(), acc)?;
    Ok(BlurryImage {
        image: gamma_encode(&mean, gamma)?,
        gamma,
        source_frames: n,
    })
}

/// `T ≥ 2` equally sized frames spanning one exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct SharpSequence {
    frames: Vec<Image>,
}

impl SharpSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Domain(format!(
                "a sequence needs T >= 2 frames (got {})",
                frames.len()
            )));
        }
        for f in &frames {
            frames[0].ensure_same_shape(f)?;
            if let Some(v) = f.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("frame value {v} outside [0, 1]")));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn reversed(&self) -> SharpSequence {
        SharpSequence {
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }
}

/// Evenly spaced indices `round(i·(N−1)/(T−1))`, endpoints included.
pub fn sample_indices(n: usize, t: usize) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::Domain(format!("T must be >= 2 (got {t})")));
    }
    if n < t {
        return Err(Error::Domain(format!("cannot sample T={t} frames from N={n}")));
    }
    let den = 2 * (t - 1);
    Ok((0..t).map(|i| (2 * i * (n - 1) + (t - 1)) / den).collect())
}

/// `(I_b, G, I)` plus the analytic flows between the sampled frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTriplet {
    pub blurry: BlurryImage,
    pub guidance: MotionGuidance,
    pub sharp: SharpSequence,
    /// `true_flows[t]` maps frame `t` to frame `t + 1`, defined on frame `t`.
    pub true_flows: Vec<FlowField>,
    /// `backward_flows[t]` maps frame `t + 1` to frame `t`, defined on frame `t + 1`.
    pub backward_flows: Vec<FlowField>,
}

impl TrainingTriplet {
    pub fn dims(&self) -> (usize, usize) {
        self.blurry.image.dims()
    }

    pub fn guidance_config(&self) -> &GuidanceConfig {
        self.guidance.config()
    }

    /// Horizontal mirror of every component.
    pub fn flip_horizontal(&self) -> TrainingTriplet {
        TrainingTriplet {
            blurry: BlurryImage {
                image: self.blurry.image.flip_horizontal(),
                ..self.blurry.clone()
            },
            guidance: self.guidance.flip_horizontal(),
            sharp: SharpSequence {
                frames: self.sharp.frames.iter().map(Image::flip_horizontal).collect(),
            },
            true_flows: self.true_flows.iter().map(FlowField::flip_horizontal).collect(),
            backward_flows: self.backward_flows.iter().map(FlowField::flip_horizontal).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<TrainingTriplet> {
        Ok(TrainingTriplet {
            blurry: BlurryImage {
                image: self.blurry.image.crop(top, left, height, width)?,
                ..self.blurry.clone()
            },
            guidance: self.guidance.crop(top, left, height, width)?,
            sharp: SharpSequence {
                frames: self
                    .sharp
                    .frames
                    .iter()
                    .map(|f| f.crop(top, left, height, width))
                    .collect::<Result<_>>()?,
            },
            true_flows: self
                .true_flows
                .iter()
                .map(|f| f.crop(top, left, height, width))
                .collect::<Result<_>>()?,
            backward_flows: self
                .backward_flows
                .iter()
                .map(|f| f.crop(top, left, height, width))
                .collect::<Result<_>>()?,
        })
    }
}

/// Samples `T` frames from a rendered scene, blurs over all `N` sub-frames
/// and derives the guidance from the composed analytic flows.
pub fn build_triplet(scene: &Scene, t: usize, gconf: &GuidanceConfig) -> Result<TrainingTriplet> {
    let idx = sample_indices(scene.len(), t)?;
    let blurry = synthesize_blur(&scene.frames, scene.config.gamma)?;
    let sharp = SharpSequence::new(idx.iter().map(|&i| scene.frames[i].clone()).collect())?;
    let true_flows: Vec<FlowField> = idx.windows(2).map(|p| scene.flow_between(p[0], p[1])).collect();
    let backward_flows: Vec<FlowField> = idx.windows(2).map(|p| scene.flow_between(p[1], p[0])).collect();
    let guidance = quantize(&aggregate_flow(&true_flows)?, gconf)?;
    Ok(TrainingTriplet {
        blurry,
        guidance,
        sharp,
        true_flows,
        backward_flows,
    })
}

/// Same as [`build_triplet`] for an externally supplied sub-frame sequence:
/// flows between sampled frames are composed by following each pixel along
/// the rounded per-step flows. Trajectories that leave the canvas keep the
/// displacement accumulated so far.
pub fn build_triplet_from_flows(
    frames: &[Image],
    flows: &[FlowField],
    gamma: f64,
    t: usize,
    gconf: &GuidanceConfig,
) -> Result<TrainingTriplet> {
    if flows.len() + 1 != frames.len() {
        return Err(shape_err(
            format!("{} flows", frames.len().saturating_sub(1)),
            flows.len(),
        ));
    }
    let idx = sample_indices(frames.len(), t)?;
    let blurry = synthesize_blur(frames, gamma)?;
    let sharp = SharpSequence::new(idx.iter().map(|&i| frames[i].clone()).collect())?;
    let true_flows: Vec<FlowField> = idx
        .windows(2)
        .map(|p| compose_flows(&flows[p[0]..p[1]]))
        .collect::<Result<_>>()?;
    let backward_flows = true_flows.iter().map(splat_backward).collect();
    let guidance = quantize(&aggregate_flow(&true_flows)?, gconf)?;
    Ok(TrainingTriplet {
        blurry,
        guidance,
        sharp,
        true_flows,
        backward_flows,
    })
}

/// Chains consecutive flows into one displacement field on the first frame.
pub fn compose_flows(flows: &[FlowField]) -> Result<FlowField> {
    let first = flows
        .first()
        .ok_or_else(|| Error::Domain("compose_flows needs at least one field".into()))?;
    let (h, w) = first.dims();
    for f in flows {
        if f.dims() != (h, w) {
            return Err(shape_err(format!("{h}x{w}"), format!("{}x{}", f.height(), f.width())));
        }
    }
    Ok(FlowField::from_fn(h, w, |y, x| {
        let (mut py, mut px) = (y as f64, x as f64);
        for f in flows {
            let (iy, ix) = (py.round(), px.round());
            if iy < 0.0 || ix < 0.0 || iy >= h as f64 || ix >= w as f64 {
                break;
            }
            let [dx, dy] = f.get(iy as usize, ix as usize);
            px += dx;
            py += dy;
        }
        [px - x as f64, py - y as f64]
    }))
}

/// Backward flow obtained by pushing every forward vector to its target
/// pixel; pixels nothing lands on get zero, and when several sources land
/// on one target the largest displacement wins (the mover is on top).
pub fn splat_backward(forward: &FlowField) -> FlowField {
    let (h, w) = forward.dims();
    let mut out = FlowField::zeros(h, w);
    let mut best = vec![-1.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = forward.get(y, x);
            let (ty, tx) = ((y as f64 + dy).round(), (x as f64 + dx).round());
            if ty < 0.0 || tx < 0.0 || ty >= h as f64 || tx >= w as f64 {
                continue;
            }
            let (ty, tx) = (ty as usize, tx as usize);
            let m = dx.hypot(dy);
            if m > best[ty * w + tx] {
                best[ty * w + tx] = m;
                out.set(ty, tx, [-dx, -dy]);
            }
        }
    }
    out
}

/// The time-reversed training sample: frames reversed, forward and backward
/// flows swapped and reversed, guidance re-derived, blurry image unchanged.
pub fn augment_inverse(triplet: &TrainingTriplet) -> Result<TrainingTriplet> {
    let true_flows: Vec<FlowField> = triplet.backward_flows.iter().rev().cloned().collect();
    let backward_flows: Vec<FlowField> = triplet.true_flows.iter().rev().cloned().collect();
    let guidance = quantize(&aggregate_flow(&true_flows)?, triplet.guidance.config())?;
    Ok(TrainingTriplet {
        blurry: triplet.blurry.clone(),
        guidance,
        sharp: triplet.sharp.reversed(),
        true_flows,
        backward_flows,
    })
}

/// Parameters for drawing random toy scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSampler {
    pub height: usize,
    pub width: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Range of total displacement over the exposure, in pixels.
    pub min_travel: f64,
    pub max_travel: f64,
    /// Maximum deviation of the motion angle from a quadrant diagonal, radians.
    pub angle_jitter: f64,
    /// Fraction of sprites left static.
    pub static_fraction: f64,
    pub subframes: usize,
    pub gamma: f64,
    pub texture_contrast: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            min_sprites: 1,
            max_sprites: 1,
            min_size: 10,
            max_size: 14,
            min_travel: 6.0,
            max_travel: 10.0,
            angle_jitter: 0.35,
            static_fraction: 0.0,
            subframes: 61,
            gamma: DEFAULT_GAMMA,
            texture_contrast: 0.25,
        }
    }
}

impl SceneSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> SceneConfig {
        let mut cfg = SceneConfig::new(self.height, self.width);
        cfg.subframes = self.subframes;
        cfg.gamma = self.gamma;
        cfg.texture_contrast = self.texture_contrast;
        cfg.background_seed = rng.gen();
        let count = rng.gen_range(self.min_sprites..=self.max_sprites.max(self.min_sprites));
        let steps = self.subframes.saturating_sub(1).max(1) as f64;
        for _ in 0..count {
            let sw = rng.gen_range(self.min_size..=self.max_size);
            let sh = rng.gen_range(self.min_size..=self.max_size);
            let shape = if rng.gen_bool(0.5) {
                SpriteShape::Rect { width: sw, height: sh }
            } else {
                SpriteShape::Ellipse { width: sw, height: sh }
            };
            let moving = rng.gen::<f64>() >= self.static_fraction;
            let (travel, angle) = if moving {
                let quadrant = rng.gen_range(0..4) as f64;
                let jitter = if self.angle_jitter > 0.0 {
                    rng.gen_range(-self.angle_jitter..=self.angle_jitter)
                } else {
                    0.0
                };
                (
                    rng.gen_range(self.min_travel..=self.max_travel.max(self.min_travel)),
                    FRAC_PI_4 + quadrant * FRAC_PI_2 + jitter,
                )
            } else {
                (0.0, 0.0)
            };
            // Angle is counter-clockwise with y up; image y points down.
            let (dx, dy) = (travel * angle.cos(), -travel * angle.sin());
            // Keep the sprite center near the canvas center over the exposure.
            let cx = self.width as f64 / 2.0 + rng.gen_range(-0.15..0.15) * self.width as f64;
            let cy = self.height as f64 / 2.0 + rng.gen_range(-0.15..0.15) * self.height as f64;
            let origin = [cx - dx / 2.0 - sw as f64 / 2.0, cy - dy / 2.0 - sh as f64 / 2.0];
            cfg.sprites.push(SpriteSpec {
                shape,
                origin,
                velocity: [dx / steps, dy / steps],
                texture_seed: rng.gen(),
            });
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sprite(velocity: [f64; 2], n: usize) -> SceneConfig {
        let mut cfg = SceneConfig::new(16, 16);
        cfg.subframes = n;
        cfg.sprites.push(SpriteSpec {
            shape: SpriteShape::Rect { width: 4, height: 4 },
            origin: [4.0, 6.0],
            velocity,
            texture_seed: 7,
        });
        cfg
    }

    #[test]
    fn static_scene_is_constant() {
        let s = generate_scene(&one_sprite([0.0, 0.0], 8), 1).unwrap();
        assert_eq!(s.frames.len(), 8);
        assert_eq!(s.flows.len(), 7);
        assert!(s.frames.iter().all(|f| f == &s.frames[0]));
        assert!(s.flows.iter().all(|f| f.max_magnitude() == 0.0));
    }

    #[test]
    fn unit_translation() {
        let s = generate_scene(&one_sprite([1.0, 0.0], 8), 1).unwrap();
        for t in 0..7 {
            for y in 6..10 {
                for x in 0..16 {
                    if s.sprite_at(t, y, x) == Some(0) {
                        assert_eq!(s.frames[t].get(y, x), s.frames[t + 1].get(y, x + 1));
                        assert_eq!(s.flows[t].get(y, x), [1.0, 0.0]);
                    }
                }
            }
        }
        assert_eq!(s.flows[0].get(0, 0), [0.0, 0.0]);
    }

    #[test]
    fn reject_policy_errors_when_leaving() {
        let mut cfg = one_sprite([1.0, 0.0], 16);
        cfg.boundary = BoundaryPolicy::Reject;
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::Scene(_))));
        cfg.boundary = BoundaryPolicy::Clip;
        assert!(generate_scene(&cfg, 0).is_ok());
    }

    #[test]
    fn too_fast_is_rejected() {
        let mut cfg = one_sprite([40.0, 0.0], 2);
        cfg.max_flow = 32.0;
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn blur_of_constant_frames() {
        let f = Image::from_fn(3, 3, |y, x| [0.1 * y as f64, 0.1 * x as f64, 0.5]);
        let b = synthesize_blur(&vec![f.clone(); 5], 2.2).unwrap();
        for (a, e) in b.image.data().iter().zip(f.data()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(b.source_frames, 5);
    }

    #[test]
    fn blur_two_values() {
        let a = Image::filled(1, 1, [0.2; 3]);
        let b = Image::filled(1, 1, [0.8; 3]);
        let blur = synthesize_blur(&[a, b], 2.2).unwrap();
        // Reference values from 30-digit arithmetic.
        let lin = (0.2f64.powf(2.2) + 0.8f64.powf(2.2)) / 2.0;
        assert!((lin - 0.320_528_393_206_365_7).abs() < 1e-14);
        assert!((blur.image.get(0, 0)[0] - 0.596_202_601_287_557_4).abs() < 1e-12);
    }

    #[test]
    fn blur_rejects_mismatch() {
        let a = Image::zeros(2, 2);
        let b = Image::zeros(2, 3);
        assert!(synthesize_blur(&[a, b], 2.2).is_err());
        assert!(synthesize_blur(&[], 2.2).is_err());
    }

    #[test]
    fn sample_indices_rule() {
        assert_eq!(sample_indices(128, 7).unwrap(), vec![0, 21, 42, 64, 85, 106, 127]);
        assert_eq!(sample_indices(7, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(sample_indices(5, 7).is_err());
    }

    #[test]
    fn identity_sampling_keeps_flows() {
        let s = generate_scene(&one_sprite([1.0, 1.0], 7), 3).unwrap();
        let tr = build_triplet(&s, 7, &GuidanceConfig::default()).unwrap();
        assert_eq!(tr.true_flows, s.flows);
    }

    #[test]
    fn static_triplet_has_static_guidance() {
        let s = generate_scene(&one_sprite([0.0, 0.0], 16), 3).unwrap();
        let tr = build_triplet(&s, 7, &GuidanceConfig::default()).unwrap();
        assert_eq!(tr.guidance.count_moving(), 0);
        let inv = augment_inverse(&tr).unwrap();
        assert_eq!(inv.sharp, tr.sharp);
        assert_eq!(inv.guidance.count_moving(), 0);
    }

    #[test]
    fn composed_flows_match_analytic_on_the_sprite() {
        let s = generate_scene(&one_sprite([0.5, 0.25], 13), 9).unwrap();
        let idx = sample_indices(13, 7).unwrap();
        let analytic = build_triplet(&s, 7, &GuidanceConfig::default()).unwrap();
        let chained =
            build_triplet_from_flows(&s.frames, &s.flows, s.config.gamma, 7, &GuidanceConfig::default()).unwrap();
        // Background pixels that get covered later pick up the sprite's
        // motion when chained, so only sprite pixels must agree.
        for (k, (a, c)) in analytic.true_flows.iter().zip(&chained.true_flows).enumerate() {
            for y in 0..16 {
                for x in 0..16 {
                    if s.sprite_at(idx[k], y, x).is_some() {
                        assert_eq!(a.get(y, x), c.get(y, x), "step {k} at ({y}, {x})");
                    }
                }
            }
        }
        assert_eq!(analytic.blurry, chained.blurry);
    }

    #[test]
    fn global_wrap_inverse_negates() {
        let mut cfg = SceneConfig::new(8, 8);
        cfg.boundary = BoundaryPolicy::Wrap;
        cfg.subframes = 7;
        cfg.sprites.push(SpriteSpec {
            shape: SpriteShape::Rect { width: 8, height: 8 },
            origin: [0.0, 0.0],
            velocity: [1.0, 0.0],
            texture_seed: 1,
        });
        let s = generate_scene(&cfg, 0).unwrap();
        let tr = build_triplet(&s, 7, &GuidanceConfig::default()).unwrap();
        assert!(tr.true_flows.iter().all(|f| f.data().iter().all(|v| *v == [1.0, 0.0])));
        let inv = augment_inverse(&tr).unwrap();
        assert!(inv
            .true_flows
            .iter()
            .all(|f| f.data().iter().all(|v| *v == [-1.0, 0.0])));
        assert!(tr.guidance.labels().iter().all(|&l| l == 1));
        assert!(inv.guidance.labels().iter().all(|&l| l == 3));
        assert_eq!(inv.blurry, tr.blurry);
    }

    #[test]
    fn sampler_is_deterministic() {
        let sampler = SceneSampler::default();
        let a = sampler.sample(&mut ChaCha8Rng::seed_from_u64(5));
        let b = sampler.sample(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let s = generate_scene(&a, 5).unwrap();
        assert_eq!(s.frames.len(), sampler.subframes);
    }
}
