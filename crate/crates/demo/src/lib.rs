//! wasm-bindgen bindings for the static demo page in `www/`.

mod scene;

use blurdecomp_core::guidance::direction_color;
use wasm_bindgen::prelude::*;

pub use scene::{rgba, DemoScene, Solution};

#[wasm_bindgen]
pub struct Demo {
    inner: DemoScene,
    guidance: Option<blurdecomp_core::MotionGuidance>,
    solution: Option<Solution>,
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes a scene and its blurry image. `torus` selects a
    /// wrap-around translating texture instead of a sprite.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32, t: u32, torus: bool) -> Result<Demo, JsError> {
        let inner = DemoScene::new(seed as u64, size as usize, t as usize, torus).map_err(|e| JsError::new(&e))?;
        Ok(Demo {
            inner,
            guidance: None,
            solution: None,
        })
    }

    pub fn size(&self) -> u32 {
        self.inner.triplet.dims().0 as u32
    }

    pub fn frames(&self) -> u32 {
        self.inner.triplet.sharp.len() as u32
    }

    pub fn blurry_rgba(&self) -> Vec<u8> {
        rgba(&self.inner.triplet.blurry.image)
    }

    pub fn sharp_rgba(&self, t: u32) -> Vec<u8> {
        self.inner
            .triplet
            .sharp
            .frames()
            .get(t as usize)
            .map(rgba)
            .unwrap_or_default()
    }

    /// Quantizes the aggregated motion; returns a color map as RGBA.
    pub fn quantize(&mut self, num_directions: u32, static_threshold: f64) -> Result<Vec<u8>, JsError> {
        let g = self
            .inner
            .guidance(num_directions as usize, static_threshold)
            .map_err(|e| JsError::new(&e))?;
        let out = rgba(&g.to_color_image());
        self.guidance = Some(g);
        Ok(out)
    }

    /// Pixel count per label of the last quantization, as text.
    pub fn guidance_summary(&self) -> String {
        let Some(g) = &self.guidance else { return String::new() };
        let n = g.config().num_directions;
        let mut counts = vec![0usize; n + 1];
        for &l in g.labels() {
            counts[l as usize] += 1;
        }
        let mut s = String::new();
        for (l, c) in counts.iter().enumerate() {
            let [r, gr, b] = direction_color(g.config(), l as u8).map(|v| (v * 255.0).round() as u8);
            let code: Vec<String> = g.config().code(l as u8).iter().map(|v| format!("{v:+}")).collect();
            s.push_str(&format!("{l}\t#{r:02x}{gr:02x}{b:02x}\t({})\t{c}\n", code.join(",")));
        }
        s
    }

    /// Solves the blur equations from the true flows, or from the flows of
    /// the reversed sequence. Returns the residual report.
    pub fn solve(&mut self, reverse: bool) -> Result<String, JsError> {
        let sol = self.inner.solve(reverse).map_err(|e| JsError::new(&e))?;
        let report = format!("{}psnr_vs_ground_truth {:.2}\n", sol.report, sol.psnr);
        self.solution = Some(sol);
        Ok(report)
    }

    /// Frame `t` of the last solve with undetermined pixels tinted red.
    pub fn solved_rgba(&self, t: u32) -> Vec<u8> {
        let Some(sol) = &self.solution else { return Vec::new() };
        let Some(f) = sol.frames.get(t as usize) else {
            return Vec::new();
        };
        let mut px = rgba(f);
        for (k, ok) in sol.valid[t as usize].iter().enumerate() {
            if !ok {
                px[4 * k] = px[4 * k].saturating_add(120);
                px[4 * k + 1] /= 2;
                px[4 * k + 2] /= 2;
            }
        }
        px
    }
}
