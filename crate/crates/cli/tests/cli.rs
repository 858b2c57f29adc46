use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blurdecomp_core::{psnr, GuidanceConfig, Image, MotionGuidance};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blurdecomp"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Parses the one-line error record and returns it.
fn fail(args: &[&str]) -> Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON error line: {stderr}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SYNTH: &[&str] = &[
    "--set",
    "sampler.height=16",
    "--set",
    "sampler.width=16",
    "--set",
    "sampler.min_size=5",
    "--set",
    "sampler.max_size=8",
    "--set",
    "sampler.min_travel=3",
    "--set",
    "sampler.max_travel=5",
    "--set",
    "t=3",
];

fn synth(out: &Path, seed: &str) {
    let mut args = vec![
        "synth",
        "--out",
        s(out),
        "--scenes",
        "4",
        "--val-scenes",
        "2",
        "--seed",
        seed,
    ];
    args.extend_from_slice(SYNTH);
    ok(&args);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY_DECOMPOSER: &[&str] = &[
    "--set",
    "t=3",
    "--set",
    "widths=[4,4,8]",
    "--set",
    "res_blocks=1",
    "--set",
    "epochs=2",
    "--set",
    "batch_size=2",
    "--set",
    "learning_rate=0.001",
];

const TINY_PREDICTOR: &[&str] = &[
    "--set",
    "d_z=2",
    "--set",
    "widths=[4,4,8]",
    "--set",
    "res_blocks=1",
    "--set",
    "encoder_widths=[4,4]",
    "--set",
    "disc_widths=[4,4]",
    "--set",
    "epochs=1",
    "--set",
    "batch_size=2",
];

fn train_decomposer(data: &Path, out: &Path) {
    let mut args = vec!["train-decomposer", "--data", s(data), "--out", s(out), "--seed", "3"];
    args.extend_from_slice(TINY_DECOMPOSER);
    ok(&args);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, "1");
    synth(&b, "1");
    synth(&c, "2");
    let ta = tree(&a);
    assert!(ta.iter().any(|(p, _)| p.ends_with("synth_config.json")));
    assert!(ta.iter().filter(|(p, _)| p.starts_with("train")).count() > 4);
    assert_eq!(ta, tree(&b));
    assert_ne!(ta, tree(&c));
}

#[test]
fn errors_are_one_json_line_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let e = fail(&[
        "decompose",
        "--model",
        "/nonexistent/model.ckpt",
        "--input",
        "/nonexistent/in.png",
        "--out",
        s(dir.path()),
        "--guidance",
        "annotation",
    ]);
    assert!(e["error"]["message"].as_str().unwrap().contains("nonexistent"), "{e}");
    let e = fail(&["synth", "--out", s(dir.path()), "--set", "sampler.bogus=1"]);
    assert_eq!(e["error"]["kind"], "usage");
    let e = fail(&["synth", "--out", s(dir.path()), "--set", "guidance.num_directions=3"]);
    assert_eq!(e["error"]["status"], 400);
    let out = run(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn oracle_recovers_synthesized_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "5");
    let scene = std::fs::read_dir(data.join("train"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out = dir.path().join("oracle");
    ok(&[
        "oracle",
        "--scene",
        s(&scene),
        "--out",
        s(&out),
        "--route",
        "least-squares",
    ]);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("max_reblur_residual"), "{report}");
    assert!(out.join("frame_000.png").exists() && out.join("frame_002.png").exists());
    assert!(out.join("job.json").exists());
    let rev = dir.path().join("reverse");
    ok(&["oracle", "--scene", s(&scene), "--out", s(&rev), "--reverse"]);
    // Where both solves are determined the reverse solve mirrors the forward one.
    let fwd_report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let rev_report = std::fs::read_to_string(rev.join("report.txt")).unwrap();
    let line = |r: &str, key: &str| r.lines().find(|l| l.starts_with(key)).unwrap().to_string();
    assert_eq!(line(&fwd_report, "frames"), line(&rev_report, "frames"));
}

#[test]
fn train_decompose_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "7");
    let model_dir = dir.path().join("dec");
    train_decomposer(&data, &model_dir);
    let ckpt = model_dir.join("decomposer.ckpt");
    assert!(
        std::fs::read_to_string(model_dir.join("train_log.csv"))
            .unwrap()
            .lines()
            .count()
            == 3
    );

    // The effective config reproduces the checkpoint.
    let again = dir.path().join("again");
    let cfg = model_dir.join("effective_config.json");
    ok(&[
        "train-decomposer",
        "--data",
        s(&data),
        "--out",
        s(&again),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(again.join("decomposer.ckpt")).unwrap()
    );

    let mut args = vec!["train-predictor", "--data", s(&data), "--out", s(&model_dir)];
    args.extend_from_slice(TINY_PREDICTOR);
    ok(&args);
    let pred = model_dir.join("predictor.ckpt");

    let scene = data.join("val").join(
        std::fs::read_dir(data.join("val"))
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .file_name(),
    );
    let input = scene.join("blurry.png");
    assert!(input.exists());

    // Empty annotation: static guidance, frames stay close to the input.
    let ann = dir.path().join("empty.txt");
    std::fs::write(&ann, "canvas 16 16\n").unwrap();
    let out = dir.path().join("static");
    ok(&[
        "decompose",
        "--model",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--guidance",
        "annotation",
        "--annotation",
        s(&ann),
    ]);
    let blurry = Image::load_png(&input).unwrap();
    for t in 0..3 {
        let f = Image::load_png(out.join(format!("frame_{t:03}.png"))).unwrap();
        assert!(psnr(&f, &blurry).unwrap() > 25.0);
    }
    let g = MotionGuidance::load(out.join("guidance.png")).unwrap();
    assert_eq!(g.count_moving(), 0);
    assert!(out.join("job.json").exists());

    let out = dir.path().join("pred");
    ok(&[
        "decompose",
        "--model",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--guidance",
        "predict",
        "--predictor",
        s(&pred),
        "--n",
        "3",
    ]);
    for k in 0..3 {
        let d = out.join(format!("sample_{k}"));
        assert!(
            d.join("guidance.png").exists() && d.join("frame_002.png").exists(),
            "{}",
            d.display()
        );
    }
    assert!(!out.join("sample_3").exists());

    let out = dir.path().join("video");
    ok(&[
        "decompose",
        "--model",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--guidance",
        "video",
        "--next",
        s(&input),
    ]);
    assert!(out.join("frame_000.png").exists());

    // A guidance file made for 8 directions conflicts with the checkpoint.
    let g8 = GuidanceConfig {
        num_directions: 8,
        ..GuidanceConfig::default()
    };
    let gf = dir.path().join("g8.png");
    MotionGuidance::all_static(16, 16, g8).save(&gf).unwrap();
    let e = fail(&[
        "decompose",
        "--model",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&dir.path().join("x")),
        "--guidance",
        "file",
        "--guidance-file",
        s(&gf),
    ]);
    assert_eq!(e["error"]["status"], 409, "{e}");
    let e = fail(&[
        "decompose",
        "--model",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&dir.path().join("x")),
        "--guidance",
        "predict",
    ]);
    assert_eq!(e["error"]["kind"], "usage");

    let ev = dir.path().join("eval");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--protocol",
        "oracle",
        "--model",
        s(&ckpt),
        "--out",
        s(&ev),
    ]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sequences"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(ev.join("report.txt"))
        .unwrap()
        .contains("LPIPS"));
    let ev = dir.path().join("best");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--protocol",
        "best-of",
        "--model",
        s(&ckpt),
        "--predictor",
        s(&pred),
        "--n",
        "2",
        "--out",
        s(&ev),
    ]);
    assert!(ev.join("report.json").exists());
    let ev = dir.path().join("robust");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--protocol",
        "robustness",
        "--model",
        s(&ckpt),
        "--radii",
        "0,2",
        "--out",
        s(&ev),
    ]);
    assert_eq!(
        std::fs::read_to_string(ev.join("robustness.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
}
