//! Synthetic triplet datasets, in memory and on disk.
//!
//! Layout: `<root>/<split>/<scene_id>/` holding `blurry.png`,
//! `sharp_000.png` … `sharp_{T-1}.png`, `guidance.png` (+ `guidance.json`),
//! `flows.bin`, `flows_backward.bin` and `meta.json`.
//!
//! Flow files start with a 16-byte header: the magic `BDFLOW01`, then
//! height (`u16`), width (`u16`) and field count (`u32`), all little-endian.
//! The body is little-endian `f32` in `H×W×2×count` order, i.e. the value
//! for row `y`, column `x`, component `c` (0 = dx, 1 = dy) and field `k`
//! sits at index `((y·W + x)·2 + c)·count + k`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::guidance::{GuidanceConfig, MotionGuidance};
use crate::image::Image;
use crate::scenegen::{
    build_triplet, generate_scene, BlurryImage, SceneConfig, SceneSampler, SharpSequence, TrainingTriplet,
};

pub const FLOW_MAGIC: &[u8; 8] = b"BDFLOW01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub gamma: f64,
    pub t: usize,
    pub n: usize,
    pub seed: u64,
    pub guidance: GuidanceConfig,
    pub scene: SceneConfig,
}

/// Seed for scene `index` of a split, independent of generation order.
pub fn scene_seed(base: u64, split: &str, index: usize) -> u64 {
    // FNV-1a over the split name, mixed with base and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in split.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// One sampled scene turned into a triplet, with its metadata.
pub fn sample_triplet(
    sampler: &SceneSampler,
    t: usize,
    gconf: &GuidanceConfig,
    seed: u64,
) -> Result<(TrainingTriplet, SceneMeta)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene_cfg = sampler.sample(&mut rng);
    let scene = generate_scene(&scene_cfg, seed)?;
    let triplet = build_triplet(&scene, t, gconf)?;
    let meta = SceneMeta {
        gamma: scene_cfg.gamma,
        t,
        n: scene_cfg.subframes,
        seed,
        guidance: *gconf,
        scene: scene_cfg,
    };
    Ok((triplet, meta))
}

pub fn generate_triplets(
    sampler: &SceneSampler,
    count: usize,
    t: usize,
    gconf: &GuidanceConfig,
    base_seed: u64,
    split: &str,
) -> Result<Vec<TrainingTriplet>> {
    (0..count)
        .map(|i| sample_triplet(sampler, t, gconf, scene_seed(base_seed, split, i)).map(|(tr, _)| tr))
        .collect()
}

pub fn encode_flows(flows: &[FlowField]) -> Result<Vec<u8>> {
    let first = flows.first().ok_or_else(|| Error::Format("no flow fields".into()))?;
    let (h, w) = first.dims();
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::Format(format!("{h}x{w} exceeds the u16 header fields")));
    }
    let k = flows.len();
    let mut out = Vec::with_capacity(16 + h * w * 2 * k * 4);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for f in flows {
        if f.dims() != (h, w) {
            return Err(Error::Format("flow fields differ in size".into()));
        }
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..2 {
                for f in flows {
                    out.extend_from_slice(&(f.get(y, x)[c] as f32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_flows(bytes: &[u8]) -> Result<Vec<FlowField>> {
    if bytes.len() < 16 || &bytes[..8] != FLOW_MAGIC {
        return Err(Error::Format("missing BDFLOW01 header".into()));
    }
    let h = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let w = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let k = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    let body = &bytes[16..];
    if body.len() != h * w * 2 * k * 4 {
        return Err(Error::Format(format!(
            "flow body has {} bytes, header implies {}",
            body.len(),
            h * w * 2 * k * 4
        )));
    }
    let mut fields = vec![FlowField::zeros(h, w); k];
    let mut it = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    for y in 0..h {
        for x in 0..w {
            let mut v = vec![[0.0; 2]; k];
            for c in 0..2 {
                for vk in v.iter_mut() {
                    vk[c] = it.next().expect("length checked");
                }
            }
            for (f, vk) in fields.iter_mut().zip(v) {
                f.set(y, x, vk);
            }
        }
    }
    Ok(fields)
}

pub fn scene_dir(root: &Path, split: &str, index: usize) -> PathBuf {
    root.join(split).join(format!("{index:05}"))
}

pub fn write_triplet(dir: &Path, triplet: &TrainingTriplet, meta: &SceneMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    triplet.blurry.image.save_png(dir.join("blurry.png"))?;
    for (i, f) in triplet.sharp.frames().iter().enumerate() {
        f.save_png(dir.join(format!("sharp_{i:03}.png")))?;
    }
    triplet.guidance.save(dir.join("guidance.png"))?;
    std::fs::write(dir.join("flows.bin"), encode_flows(&triplet.true_flows)?)?;
    std::fs::write(dir.join("flows_backward.bin"), encode_flows(&triplet.backward_flows)?)?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_triplet(dir: &Path) -> Result<(TrainingTriplet, SceneMeta)> {
    let meta: SceneMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let blurry = BlurryImage {
        image: Image::load_png(dir.join("blurry.png"))?,
        gamma: meta.gamma,
        source_frames: meta.n,
    };
    let frames = (0..meta.t)
        .map(|i| Image::load_png(dir.join(format!("sharp_{i:03}.png"))))
        .collect::<Result<Vec<_>>>()?;
    let guidance = MotionGuidance::load(dir.join("guidance.png"))?;
    let true_flows = decode_flows(&std::fs::read(dir.join("flows.bin"))?)?;
    let backward_flows = decode_flows(&std::fs::read(dir.join("flows_backward.bin"))?)?;
    if true_flows.len() + 1 != meta.t || backward_flows.len() + 1 != meta.t {
        return Err(Error::Format(format!(
            "{} holds flows for a different T",
            dir.display()
        )));
    }
    Ok((
        TrainingTriplet {
            blurry,
            guidance,
            sharp: SharpSequence::new(frames)?,
            true_flows,
            backward_flows,
        },
        meta,
    ))
}

/// Writes `count` scenes into `<root>/<split>/`; returns the scene directories.
pub fn synthesize_split(
    root: &Path,
    split: &str,
    count: usize,
    sampler: &SceneSampler,
    t: usize,
    gconf: &GuidanceConfig,
    base_seed: u64,
) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::with_capacity(count);
    for i in 0..count {
        let (triplet, meta) = sample_triplet(sampler, t, gconf, scene_seed(base_seed, split, i))?;
        let dir = scene_dir(root, split, i);
        write_triplet(&dir, &triplet, &meta)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn list_split(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root.join(split))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_split(root: &Path, split: &str) -> Result<Vec<TrainingTriplet>> {
    list_split(root, split)?
        .iter()
        .map(|d| read_triplet(d).map(|(t, _)| t))
        .collect()
}
