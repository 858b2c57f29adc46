//! Quantized motion guidance: per-pixel direction classes plus a static
//! class, and the signed bit encoding fed to the networks.
//!
//! Angles are measured counter-clockwise from the +x axis with image `y`
//! pointing down, so a flow `(dx, dy)` has angle `atan2(-dy, dx)`. With four
//! directions the classes are the quadrants of `(sign dx, sign dy)`:
//!
//! | label | class        | code       |
//! |-------|--------------|------------|
//! | 0     | static       | `( 0,  0)` |
//! | 1     | quadrant I   | `(+1, -1)` |
//! | 2     | quadrant II  | `(-1, -1)` |
//! | 3     | quadrant III | `(-1, +1)` |
//! | 4     | quadrant IV  | `(+1, +1)` |
//!
//! Other direction counts use equal sectors whose centers keep the quadrant
//! centers (45°, 135°, ...) and an angle sitting exactly on a boundary goes
//! to the counter-clockwise sector. Codes for sector `k` in the first half
//! are a Gray code of `k` followed by `-1`; the second half negates the
//! first, so reversing the motion negates the code.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::flow::FlowField;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub num_directions: usize,
    /// Aggregated-flow magnitude (pixels) below which a pixel is static.
    pub static_threshold: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            num_directions: 4,
            static_threshold: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub const SUPPORTED_DIRECTIONS: [usize; 4] = [2, 4, 8, 16];

    pub fn new(num_directions: usize, static_threshold: f64) -> Result<Self> {
        let c = Self {
            num_directions,
            static_threshold,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !Self::SUPPORTED_DIRECTIONS.contains(&self.num_directions) {
            return Err(Error::Config(format!(
                "num_directions must be one of 2, 4, 8, 16 (got {})",
                self.num_directions
            )));
        }
        if !(self.static_threshold >= 0.0) || !self.static_threshold.is_finite() {
            return Err(Error::Config(format!(
                "static_threshold must be finite and >= 0 (got {})",
                self.static_threshold
            )));
        }
        Ok(())
    }

    /// Bits per pixel in the signed encoding: `log2(num_directions)`.
    pub fn bit_width(&self) -> usize {
        self.num_directions.trailing_zeros() as usize
    }

    /// Number of label classes including static.
    pub fn num_classes(&self) -> usize {
        self.num_directions + 1
    }

    fn sector_width(&self) -> f64 {
        TAU / self.num_directions as f64
    }

    fn sector_start(&self) -> f64 {
        FRAC_PI_4 - self.sector_width() / 2.0
    }

    /// Center angle (radians, counter-clockwise, y up) of a direction label.
    pub fn label_angle(&self, label: u8) -> Option<f64> {
        if label == 0 || label as usize > self.num_directions {
            return None;
        }
        Some(FRAC_PI_4 + (label as f64 - 1.0) * self.sector_width())
    }

    /// Label of the opposite direction; static maps to itself.
    pub fn opposite(&self, label: u8) -> u8 {
        if label == 0 {
            return 0;
        }
        let n = self.num_directions;
        let k = (label as usize - 1 + n / 2) % n;
        (k + 1) as u8
    }

    /// Direction label for one aggregated flow vector.
    pub fn classify(&self, flow: [f64; 2]) -> u8 {
        let [dx, dy] = flow;
        let mag = dx.hypot(dy);
        if mag == 0.0 || mag < self.static_threshold {
            return 0;
        }
        // +0.0 turns a -0.0 from negation into +0.0 so that atan2 stays on
        // the upper branch for flows along the +x axis.
        let theta = (-dy + 0.0).atan2(dx);
        let t = (theta - self.sector_start()).rem_euclid(TAU) / self.sector_width();
        let k = (t.floor() as usize).min(self.num_directions - 1);
        (k + 1) as u8
    }

    /// Signed code for a label, `bit_width` entries in `{-1, 0, +1}`.
    pub fn code(&self, label: u8) -> Vec<i8> {
        let b = self.bit_width();
        if label == 0 {
            return vec![0; b];
        }
        let n = self.num_directions;
        let k = label as usize - 1;
        let half = n / 2;
        let (base, sign) = if k < half { (k, 1i8) } else { (k - half, -1i8) };
        let gray = base ^ (base >> 1);
        let mut code = Vec::with_capacity(b);
        for bit in (0..b - 1).rev() {
            code.push(if (gray >> bit) & 1 == 0 { 1 } else { -1 });
        }
        code.push(-1);
        code.iter().map(|c| c * sign).collect()
    }

    /// Inverse of [`GuidanceConfig::code`].
    pub fn label_of_code(&self, code: &[i8]) -> Result<u8> {
        if code.len() != self.bit_width() {
            return Err(shape_err(self.bit_width(), code.len()));
        }
        if code.iter().all(|&c| c == 0) {
            return Ok(0);
        }
        (1..=self.num_directions as u8)
            .find(|&l| self.code(l) == code)
            .ok_or_else(|| Error::Domain(format!("{code:?} is not a valid guidance code")))
    }
}

/// Per-pixel guidance label map.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionGuidance {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    config: GuidanceConfig,
}

impl MotionGuidance {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, config: GuidanceConfig) -> Result<Self> {
        config.validate()?;
        if labels.len() != height * width {
            return Err(shape_err(height * width, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize > config.num_directions) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} directions",
                config.num_directions
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            config,
        })
    }

    pub fn all_static(height: usize, width: usize, config: GuidanceConfig) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
            config,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn count_moving(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Every direction replaced by its opposite.
    pub fn inverse(&self) -> MotionGuidance {
        MotionGuidance {
            labels: self.labels.iter().map(|&l| self.config.opposite(l)).collect(),
            ..self.clone()
        }
    }

    pub fn flip_horizontal(&self) -> MotionGuidance {
        // Mirroring x maps angle θ to π - θ.
        let cfg = self.config;
        let mirror: Vec<u8> = (0..=cfg.num_directions as u8)
            .map(|l| match cfg.label_angle(l) {
                None => 0,
                Some(a) => {
                    let m = std::f64::consts::PI - a;
                    cfg.classify([m.cos() * 1e3, -m.sin() * 1e3])
                }
            })
            .collect();
        let mut labels = Vec::with_capacity(self.labels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                labels.push(mirror[self.get(y, self.width - 1 - x) as usize]);
            }
        }
        MotionGuidance { labels, ..self.clone() }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<MotionGuidance> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err(
                format!("crop within {}x{}", self.height, self.width),
                format!("{height}x{width}@({top},{left})"),
            ));
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(self.get(top + y, left + x));
            }
        }
        Ok(MotionGuidance {
            height,
            width,
            labels,
            config: self.config,
        })
    }

    /// Fraction of pixels whose labels agree.
    pub fn agreement(&self, other: &MotionGuidance) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(shape_err(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let same = self.labels.iter().zip(&other.labels).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.labels.len().max(1) as f64)
    }

    /// Single-channel 8-bit PNG whose pixel values are the labels.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .ok_or_else(|| Error::Format("label buffer size".into()))?;
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8], config: GuidanceConfig) -> Result<MotionGuidance> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        MotionGuidance::new(img.height() as usize, img.width() as usize, img.into_raw(), config)
    }

    /// Writes `path` (label PNG) and a `.json` sidecar with the config.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?)?;
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MotionGuidance> {
        let path = path.as_ref();
        let config: GuidanceConfig = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        config.validate()?;
        MotionGuidance::decode_png(&std::fs::read(path)?, config)
    }

    /// Color visualization: hue follows the direction angle, static is black.
    pub fn to_color_image(&self) -> Image {
        let palette: Vec<[f64; 3]> = (0..=self.config.num_directions as u8)
            .map(|l| direction_color(&self.config, l))
            .collect();
        Image::from_fn(self.height, self.width, |y, x| palette[self.get(y, x) as usize])
    }
}

/// Legend color for a label: HSV hue from the direction angle.
pub fn direction_color(config: &GuidanceConfig, label: u8) -> [f64; 3] {
    let Some(angle) = config.label_angle(label) else {
        return [0.0, 0.0, 0.0];
    };
    let h = (angle.to_degrees().rem_euclid(360.0)) / 60.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.85 * r, 0.15 + 0.85 * g, 0.15 + 0.85 * b]
}

/// Quantizes an aggregated flow into a guidance map.
pub fn quantize(aggregated: &FlowField, config: &GuidanceConfig) -> Result<MotionGuidance> {
    config.validate()?;
    let labels = aggregated.data().iter().map(|&v| config.classify(v)).collect();
    Ok(MotionGuidance {
        height: aggregated.height(),
        width: aggregated.width(),
        labels,
        config: *config,
    })
}

/// Signed bit planes, laid out `H×W×bit_width` (pixel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGuidance {
    pub height: usize,
    pub width: usize,
    pub bits: usize,
    pub values: Vec<i8>,
}

impl EncodedGuidance {
    pub fn get(&self, y: usize, x: usize) -> &[i8] {
        let i = (y * self.width + x) * self.bits;
        &self.values[i..i + self.bits]
    }

    /// Channel-major float planes, `bits×H×W`, as consumed by the networks.
    pub fn planes_f32(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0f32; self.bits * hw];
        for p in 0..hw {
            for b in 0..self.bits {
                out[b * hw + p] = f32::from(self.values[p * self.bits + b]);
            }
        }
        out
    }
}

pub fn encode_guidance(g: &MotionGuidance) -> EncodedGuidance {
    let bits = g.config.bit_width();
    let table: Vec<Vec<i8>> = (0..=g.config.num_directions as u8).map(|l| g.config.code(l)).collect();
    let mut values = Vec::with_capacity(g.labels.len() * bits);
    for &l in &g.labels {
        values.extend_from_slice(&table[l as usize]);
    }
    EncodedGuidance {
        height: g.height,
        width: g.width,
        bits,
        values,
    }
}

pub fn decode_guidance(e: &EncodedGuidance, config: &GuidanceConfig) -> Result<MotionGuidance> {
    config.validate()?;
    if e.bits != config.bit_width() || e.values.len() != e.height * e.width * e.bits {
        return Err(shape_err(
            format!("{}x{}x{}", e.height, e.width, config.bit_width()),
            format!("{} values with {} bits", e.values.len(), e.bits),
        ));
    }
    let labels = e
        .values
        .chunks_exact(e.bits)
        .map(|c| config.label_of_code(c))
        .collect::<Result<Vec<_>>>()?;
    MotionGuidance::new(e.height, e.width, labels, *config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morphology {
    Dilate,
    Erode,
}

/// Grows or shrinks the moving regions of a guidance map with a square
/// `(2r+1)²` structuring element.
///
/// Dilation gives a static pixel the label of the nearest moving pixel
/// (Chebyshev distance, ties in raster order). Erosion makes a moving pixel
/// static when any in-bounds pixel of its window is static; direction
/// boundaries between two moving labels do not erode.
pub fn perturb_guidance(g: &MotionGuidance, mode: Morphology, radius: usize) -> MotionGuidance {
    if radius == 0 {
        return g.clone();
    }
    let (h, w) = g.dims();
    let r = radius as isize;
    let mut labels = g.labels.clone();
    for y in 0..h {
        for x in 0..w {
            let here = g.get(y, x);
            match mode {
                Morphology::Dilate if here == 0 => {
                    let mut best: Option<(isize, u8)> = None;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y as isize + dy, x as isize + dx);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let l = g.get(yy as usize, xx as usize);
                            if l == 0 {
                                continue;
                            }
                            let d = dy.abs().max(dx.abs());
                            if best.is_none_or(|(bd, _)| d < bd) {
                                best = Some((d, l));
                            }
                        }
                    }
                    if let Some((_, l)) = best {
                        labels[y * w + x] = l;
                    }
                }
                Morphology::Erode if here != 0 => {
                    let y0 = y.saturating_sub(radius);
                    let y1 = (y + radius).min(h - 1);
                    let x0 = x.saturating_sub(radius);
                    let x1 = (x + radius).min(w - 1);
                    let touches_static = (y0..=y1).any(|yy| (x0..=x1).any(|xx| g.get(yy, xx) == 0));
                    if touches_static {
                        labels[y * w + x] = 0;
                    }
                }
                _ => {}
            }
        }
    }
    MotionGuidance { labels, ..g.clone() }
}
