use blurdecomp_core::{
    build_triplet, decompose_exact, generate_scene, BoundaryPolicy, ExactOptions, GuidanceConfig, SceneConfig,
    SolverRoute, SpriteShape, SpriteSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Whole-canvas textured translation on a torus: every chain is valid.
fn torus_scene(seed: u64, size: usize, t: usize) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SceneConfig::new(size, size);
    cfg.boundary = BoundaryPolicy::Wrap;
    cfg.subframes = t;
    cfg.texture_contrast = 0.4;
    let v = loop {
        let v = [rng.gen_range(-2i32..=2) as f64, rng.gen_range(-2i32..=2) as f64];
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
        texture_seed: rng.gen(),
    });
    cfg
}

#[test]
fn elimination_and_least_squares_agree() {
    for seed in 0..6 {
        let scene = generate_scene(&torus_scene(seed, 8, 5), seed).unwrap();
        let tr = build_triplet(&scene, 5, &GuidanceConfig::default()).unwrap();
        let mut opts = ExactOptions {
            wrap: true,
            ..Default::default()
        };
        let a = decompose_exact(&tr.blurry, &tr.true_flows, 5, &opts).unwrap();
        opts.route = SolverRoute::LeastSquares;
        let b = decompose_exact(&tr.blurry, &tr.true_flows, 5, &opts).unwrap();
        assert_eq!(a.report.invalid_pixels, 0);
        assert_eq!(b.report.invalid_pixels, 0);
        for (fa, fb) in a.linear.iter().zip(&b.linear) {
            for (x, y) in fa.data().iter().zip(fb.data()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn backward_flows_give_the_reversal() {
    for seed in 10..14 {
        let scene = generate_scene(&torus_scene(seed, 16, 7), seed).unwrap();
        let tr = build_triplet(&scene, 7, &GuidanceConfig::default()).unwrap();
        let opts = ExactOptions {
            wrap: true,
            ..Default::default()
        };
        let fwd = decompose_exact(&tr.blurry, &tr.true_flows, 7, &opts).unwrap();
        let back: Vec<_> = tr.backward_flows.iter().rev().cloned().collect();
        let bwd = decompose_exact(&tr.blurry, &back, 7, &opts).unwrap();
        for (a, b) in fwd.sequence.frames().iter().zip(bwd.sequence.frames().iter().rev()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        for (a, b) in fwd.sequence.frames().iter().zip(tr.sharp.frames()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(fwd.report.max_reblur_residual < 1e-6);
    }
}

#[test]
fn sprite_scene_never_fabricates_invalid_pixels() {
    let mut cfg = SceneConfig::new(24, 24);
    cfg.subframes = 7;
    cfg.sprites.push(SpriteSpec {
        shape: SpriteShape::Rect { width: 8, height: 8 },
        origin: [6.0, 8.0],
        velocity: [1.0, 0.0],
        texture_seed: 2,
    });
    let scene = generate_scene(&cfg, 1).unwrap();
    let tr = build_triplet(&scene, 7, &GuidanceConfig::default()).unwrap();
    let out = decompose_exact(&tr.blurry, &tr.true_flows, 7, &ExactOptions::default()).unwrap();
    assert!(out.report.occluded_vectors > 0);
    for (k, frame) in out.sequence.frames().iter().enumerate() {
        for y in 0..24 {
            for x in 0..24 {
                let got = frame.get(y, x);
                if out.valid[k][y * 24 + x] {
                    let want = tr.sharp.frames()[k].get(y, x);
                    for c in 0..3 {
                        assert!((got[c] - want[c]).abs() < 1e-6, "frame {k} ({y}, {x})");
                    }
                } else {
                    let b = tr.blurry.image.get(y, x);
                    for c in 0..3 {
                        assert!((got[c] - b[c]).abs() < 1e-9);
                    }
                }
            }
        }
    }
    // Far background is static and fully determined.
    assert!(out.valid[0][23 * 24 + 23]);
}
