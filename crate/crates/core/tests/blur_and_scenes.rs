use blurdecomp_core::dataset::sample_triplet;
use blurdecomp_core::{
    aggregate_flow, augment_inverse, gamma_decode, gamma_encode, generate_scene, synthesize_blur, GuidanceConfig,
    Image, SceneConfig, SceneSampler, SpriteShape, SpriteSpec,
};
use proptest::prelude::*;

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| Image::from_vec(h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn blur_ignores_frame_order(frames in (1usize..12).prop_flat_map(|n| prop::collection::vec(image_strategy(5, 4), n))) {
        let fwd = synthesize_blur(&frames, 2.2).unwrap();
        let rev: Vec<Image> = frames.iter().rev().cloned().collect();
        let bwd = synthesize_blur(&rev, 2.2).unwrap();
        prop_assert_eq!(fwd.image.data(), bwd.image.data());
    }

    #[test]
    fn gamma_round_trip(img in image_strategy(3, 3), gamma in 0.3f64..4.0) {
        let back = gamma_encode(&gamma_decode(&img, gamma).unwrap(), gamma).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

fn two_sprite_scene() -> SceneConfig {
    let mut cfg = SceneConfig::new(96, 128);
    cfg.subframes = 128;
    cfg.sprites.push(SpriteSpec {
        shape: SpriteShape::Rect { width: 20, height: 16 },
        origin: [4.0, 70.0],
        velocity: [2.0, -1.0],
        texture_seed: 3,
    });
    cfg.sprites.push(SpriteSpec {
        shape: SpriteShape::Ellipse { width: 18, height: 18 },
        origin: [104.0, 76.0],
        velocity: [-2.0, -1.0],
        texture_seed: 9,
    });
    cfg
}

#[test]
fn warp_consistency_on_non_occluded_pixels() {
    let cfg = two_sprite_scene();
    let scene = generate_scene(&cfg, 21).unwrap();
    let (h, w) = scene.dims();
    let mut checked = 0usize;
    for t in 0..scene.len() - 1 {
        let f = &scene.flows[t];
        for y in 0..h {
            for x in 0..w {
                let id = scene.sprite_at(t, y, x);
                let [dx, dy] = f.get(y, x);
                if let Some(s) = id {
                    let v = cfg.sprites[s].velocity;
                    assert_eq!([dx, dy], v, "frame {t} ({y}, {x})");
                } else {
                    assert_eq!([dx, dy], [0.0, 0.0]);
                }
                let (ty, tx) = (y as f64 + dy, x as f64 + dx);
                if ty < 0.0 || tx < 0.0 || ty >= h as f64 || tx >= w as f64 {
                    continue;
                }
                let (ty, tx) = (ty as usize, tx as usize);
                // Occluded or disoccluded: the target shows a different layer.
                if scene.sprite_at(t + 1, ty, tx) != id {
                    continue;
                }
                let a = scene.frames[t].get(y, x);
                let b = scene.frames[t + 1].get(ty, tx);
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-6, "frame {t} ({y}, {x})");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 100_000);
}

#[test]
fn scenes_are_deterministic() {
    let cfg = two_sprite_scene();
    let a = generate_scene(&cfg, 5).unwrap();
    let b = generate_scene(&cfg, 5).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.flows, b.flows);
    let c = generate_scene(&cfg, 6).unwrap();
    assert_ne!(a.frames, c.frames);
}

#[test]
fn augment_inverse_is_an_involution() {
    let sampler = SceneSampler::default();
    let gconf = GuidanceConfig::default();
    for seed in 0..20u64 {
        let (t, _) = sample_triplet(&sampler, 7, &gconf, seed).unwrap();
        let inv = augment_inverse(&t).unwrap();
        assert_eq!(inv.blurry, t.blurry);
        assert_eq!(inv.sharp.frames()[0], t.sharp.frames()[6]);
        // Aggregation is per pixel, so the two moving regions differ. Where
        // both move off the axes (sector boundaries for 4 directions) the
        // quadrant must flip.
        let fwd = aggregate_flow(&t.true_flows).unwrap();
        let bwd = aggregate_flow(&inv.true_flows).unwrap();
        let mut compared = 0;
        for (i, (l, li)) in t.guidance.labels().iter().zip(inv.guidance.labels()).enumerate() {
            let (a, b) = (fwd.data()[i], bwd.data()[i]);
            if *l == 0 || *li == 0 || a.contains(&0.0) || b.contains(&0.0) {
                continue;
            }
            assert_eq!(*li, gconf.opposite(*l), "seed {seed}, pixel {i}");
            compared += 1;
        }
        assert!(compared > 0);
        assert_eq!(augment_inverse(&inv).unwrap(), t);
    }
}
