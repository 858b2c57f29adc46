//! Flow estimation between adjacent frames and guidance derived from it.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::guidance::{quantize, GuidanceConfig, MotionGuidance};
use crate::image::Image;
use crate::scenegen::BlurryImage;

pub trait FlowEstimator: Send + Sync {
    /// Displacement from `a` to `b`, defined on the pixels of `a`.
    fn estimate(&self, a: &Image, b: &Image) -> Result<FlowField>;
}

/// Exhaustive block matching on luma with a sum-of-absolute-differences cost.
///
/// The image is tiled into `patch × patch` blocks; each block gets the
/// integer displacement within `±search` that minimizes the mean absolute
/// difference over the in-bounds part of the displaced block. Among equal
/// costs the shortest displacement wins, so flat or unchanged areas stay at
/// zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockMatcher {
    pub patch: usize,
    pub search: usize,
}

impl Default for BlockMatcher {
    fn default() -> Self {
        Self { patch: 16, search: 24 }
    }
}

impl FlowEstimator for BlockMatcher {
    fn estimate(&self, a: &Image, b: &Image) -> Result<FlowField> {
        a.ensure_same_shape(b)?;
        if self.patch == 0 {
            return Err(Error::Estimator("patch size must be positive".into()));
        }
        let (h, w) = a.dims();
        let (la, lb) = (a.luma(), b.luma());
        let s = self.search as isize;
        let mut out = FlowField::zeros(h, w);
        for by in (0..h).step_by(self.patch) {
            for bx in (0..w).step_by(self.patch) {
                let bh = self.patch.min(h - by);
                let bw = self.patch.min(w - bx);
                let min_count = (bh * bw).div_ceil(2);
                let mut best: Option<(f64, isize, [isize; 2])> = None;
                for dy in -s..=s {
                    for dx in -s..=s {
                        let mut sad = 0.0;
                        let mut count = 0usize;
                        for y in by..by + bh {
                            let ty = y as isize + dy;
                            if ty < 0 || ty >= h as isize {
                                continue;
                            }
                            for x in bx..bx + bw {
                                let tx = x as isize + dx;
                                if tx < 0 || tx >= w as isize {
                                    continue;
                                }
                                sad += (la[y * w + x] - lb[ty as usize * w + tx as usize]).abs();
                                count += 1;
                            }
                        }
                        if count < min_count {
                            continue;
                        }
                        let cost = sad / count as f64;
                        let len = dx * dx + dy * dy;
                        let better = match best {
                            None => true,
                            Some((c, l, _)) => cost < c - 1e-12 || (cost <= c + 1e-12 && len < l),
                        };
                        if better {
                            best = Some((cost, len, [dx, dy]));
                        }
                    }
                }
                let (_, _, [dx, dy]) = best
                    .ok_or_else(|| Error::Estimator(format!("no admissible displacement for block at ({by}, {bx})")))?;
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        out.set(y, x, [dx as f64, dy as f64]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Returns a fixed, externally known flow regardless of the frames, e.g. the
/// aggregated analytic flow of a synthetic scene.
#[derive(Clone, Debug)]
pub struct KnownFlow(pub FlowField);

impl FlowEstimator for KnownFlow {
    fn estimate(&self, a: &Image, _b: &Image) -> Result<FlowField> {
        if self.0.dims() != a.dims() {
            return Err(Error::Estimator(format!(
                "known flow is {}x{}, frames are {}x{}",
                self.0.height(),
                self.0.width(),
                a.height(),
                a.width()
            )));
        }
        Ok(self.0.clone())
    }
}

/// Guidance for a blurry frame from the motion towards the next blurry frame.
pub fn guidance_from_adjacent(
    blurry: &BlurryImage,
    blurry_next: &BlurryImage,
    config: &GuidanceConfig,
    estimator: &dyn FlowEstimator,
) -> Result<MotionGuidance> {
    let flow = estimator.estimate(&blurry.image, &blurry_next.image)?;
    if !flow.is_finite() {
        return Err(Error::Estimator("estimator returned non-finite flow".into()));
    }
    quantize(&flow, config)
}
