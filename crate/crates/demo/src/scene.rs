//! Plain-Rust side of the demo, usable and testable off the browser.

use blurdecomp_core::dataset::sample_triplet;
use blurdecomp_core::{
    aggregate_flow, build_triplet, decompose_exact, generate_scene, psnr, quantize, BoundaryPolicy, ExactOptions,
    GuidanceConfig, Image, MotionGuidance, SceneConfig, SceneSampler, SpriteShape, SpriteSpec, TrainingTriplet,
};

pub fn rgba(img: &Image) -> Vec<u8> {
    img.to_rgb8()
        .pixels()
        .flat_map(|p| [p.0[0], p.0[1], p.0[2], 255])
        .collect()
}

/// Whole-canvas texture translating by a whole number of pixels per frame
/// on a torus, the setting where the exact solve is unique everywhere.
fn torus_config(seed: u64, size: usize, t: usize) -> SceneConfig {
    let mut cfg = SceneConfig::new(size, size);
    cfg.boundary = BoundaryPolicy::Wrap;
    cfg.subframes = t;
    cfg.texture_contrast = 0.4;
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        s
    };
    let v = loop {
        let v = [(next() % 5) as f64 - 2.0, (next() % 5) as f64 - 2.0];
        if v != [0.0, 0.0] {
            break v;
        }
    };
    cfg.sprites.push(SpriteSpec {
        shape: SpriteShape::Rect {
            width: size,
            height: size,
        },
        origin: [0.0, 0.0],
        velocity: v,
        texture_seed: next(),
    });
    cfg
}

pub struct DemoScene {
    pub triplet: TrainingTriplet,
    pub wrap: bool,
}

pub struct Solution {
    pub frames: Vec<Image>,
    pub valid: Vec<Vec<bool>>,
    pub report: String,
    /// Mean PSNR against the ground-truth frames (reversed for a reverse solve).
    pub psnr: f64,
}

impl DemoScene {
    pub fn new(seed: u64, size: usize, t: usize, torus: bool) -> Result<Self, String> {
        if size < 4 || size > 128 || size % 4 != 0 {
            return Err(format!("size must be a multiple of 4 in 4..=128, got {size}"));
        }
        if t < 2 || t > 15 {
            return Err(format!("T must be in 2..=15, got {t}"));
        }
        let g = GuidanceConfig::default();
        let triplet = if torus {
            let scene = generate_scene(&torus_config(seed, size, t), seed).map_err(|e| e.to_string())?;
            build_triplet(&scene, t, &g).map_err(|e| e.to_string())?
        } else {
            let s = SceneSampler {
                height: size,
                width: size,
                min_size: size / 3,
                max_size: size / 2,
                min_travel: size as f64 / 5.0,
                max_travel: size as f64 / 3.0,
                ..SceneSampler::default()
            };
            sample_triplet(&s, t, &g, seed).map_err(|e| e.to_string())?.0
        };
        Ok(Self { triplet, wrap: torus })
    }

    pub fn guidance(&self, num_directions: usize, static_threshold: f64) -> Result<MotionGuidance, String> {
        let config = GuidanceConfig::new(num_directions, static_threshold).map_err(|e| e.to_string())?;
        let agg = aggregate_flow(&self.triplet.true_flows).map_err(|e| e.to_string())?;
        quantize(&agg, &config).map_err(|e| e.to_string())
    }

    pub fn solve(&self, reverse: bool) -> Result<Solution, String> {
        let tr = &self.triplet;
        let flows: Vec<_> = if reverse {
            tr.backward_flows.iter().rev().cloned().collect()
        } else {
            tr.true_flows.clone()
        };
        let opts = ExactOptions {
            wrap: self.wrap,
            ..ExactOptions::default()
        };
        let d = decompose_exact(&tr.blurry, &flows, tr.sharp.len(), &opts).map_err(|e| e.to_string())?;
        let target = if reverse { tr.sharp.reversed() } else { tr.sharp.clone() };
        let mut total = 0.0;
        for (a, b) in d.sequence.frames().iter().zip(target.frames()) {
            total += psnr(a, b).map_err(|e| e.to_string())?.min(100.0);
        }
        Ok(Solution {
            psnr: total / d.sequence.len() as f64,
            frames: d.sequence.into_frames(),
            valid: d.valid,
            report: d.report.summary(),
        })
    }
}
