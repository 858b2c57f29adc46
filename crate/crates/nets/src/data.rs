//! Conversion between core images and channel-major tensors, plus batching.

use blurdecomp_core::{encode_guidance, Image, MotionGuidance, TrainingTriplet};
use candle_core::{DType, Device, Tensor};

use crate::error::{NetError, Result};

/// `3×H×W` planes of an interleaved RGB image.
pub fn image_planes(img: &Image) -> Vec<f32> {
    let (h, w) = img.dims();
    let hw = h * w;
    let mut out = vec![0f32; 3 * hw];
    for (p, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + p] = px[c] as f32;
        }
    }
    out
}

/// Inverse of [`image_planes`] for planes starting at `offset`; clamps to [0, 1].
pub fn planes_to_image(planes: &[f32], offset: usize, h: usize, w: usize) -> Image {
    let hw = h * w;
    Image::from_fn(h, w, |y, x| {
        let p = y * w + x;
        let g = |c: usize| f64::from(planes[offset + c * hw + p]).clamp(0.0, 1.0);
        [g(0), g(1), g(2)]
    })
}

/// Copies a `size_h×size_w` window out of `c` planes of `h×w`.
pub fn crop_planes(
    src: &[f32],
    c: usize,
    h: usize,
    w: usize,
    top: usize,
    left: usize,
    ch: usize,
    cw: usize,
) -> Vec<f32> {
    debug_assert!(top + ch <= h && left + cw <= w);
    let mut out = Vec::with_capacity(c * ch * cw);
    for k in 0..c {
        for y in top..top + ch {
            let row = k * h * w + y * w;
            out.extend_from_slice(&src[row + left..row + left + cw]);
        }
    }
    out
}

/// One training or evaluation example in network layout.
#[derive(Clone, Debug)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub blurry: Vec<f32>,
    /// Signed guidance bits, `bits×H×W`.
    pub guidance: Vec<f32>,
    pub bits: usize,
    pub labels: Vec<u8>,
    /// `3T×H×W`, frame-major.
    pub sharp: Vec<f32>,
    pub frames: usize,
}

impl Sample {
    pub fn from_triplet(tr: &TrainingTriplet) -> Sample {
        let (h, w) = tr.dims();
        let enc = encode_guidance(&tr.guidance);
        let mut sharp = Vec::with_capacity(3 * tr.sharp.len() * h * w);
        for f in tr.sharp.frames() {
            sharp.extend(image_planes(f));
        }
        Sample {
            height: h,
            width: w,
            blurry: image_planes(&tr.blurry.image),
            guidance: enc.planes_f32(),
            bits: enc.bits,
            labels: tr.guidance.labels().to_vec(),
            sharp,
            frames: tr.sharp.len(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, ch: usize, cw: usize) -> Sample {
        let (h, w) = (self.height, self.width);
        Sample {
            height: ch,
            width: cw,
            blurry: crop_planes(&self.blurry, 3, h, w, top, left, ch, cw),
            guidance: crop_planes(&self.guidance, self.bits, h, w, top, left, ch, cw),
            bits: self.bits,
            labels: (top..top + ch)
                .flat_map(|y| self.labels[y * w + left..y * w + left + cw].iter().copied())
                .collect(),
            sharp: crop_planes(&self.sharp, 3 * self.frames, h, w, top, left, ch, cw),
            frames: self.frames,
        }
    }

    pub fn center_crop(&self, size: Option<usize>) -> Sample {
        match size {
            Some(s) if s < self.height || s < self.width => {
                let (ch, cw) = (s.min(self.height), s.min(self.width));
                self.crop((self.height - ch) / 2, (self.width - cw) / 2, ch, cw)
            }
            _ => self.clone(),
        }
    }
}

/// Guidance planes for a label map.
pub fn guidance_planes(g: &MotionGuidance) -> Vec<f32> {
    encode_guidance(g).planes_f32()
}

/// One-hot `K×H×W` planes of a label map with `K = num_directions + 1`.
pub fn one_hot_planes(labels: &[u8], classes: usize) -> Vec<f32> {
    let hw = labels.len();
    let mut out = vec![0f32; classes * hw];
    for (p, &l) in labels.iter().enumerate() {
        out[l as usize * hw + p] = 1.0;
    }
    out
}

/// Stacks per-sample planes into a `(B, C, H, W)` tensor.
pub fn stack(parts: &[&[f32]], c: usize, h: usize, w: usize, dtype: DType) -> Result<Tensor> {
    let mut all = Vec::with_capacity(parts.len() * c * h * w);
    for p in parts {
        if p.len() != c * h * w {
            return Err(NetError::Shape(format!(
                "expected {} values per sample, got {}",
                c * h * w,
                p.len()
            )));
        }
        all.extend_from_slice(p);
    }
    Ok(Tensor::from_vec(all, (parts.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flattened values of a tensor as `f32`.
pub fn to_f32(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
}
