//! End-to-end CLI tests at micro scale, driving the built binary.

use pretinex::synth::scenes::write_scene_dir;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pretinex")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pretinex_cli_{tag}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn setup_scenes(dir: &Path, count: usize) {
    write_scene_dir(&dir.join("scenes"), count, 96, 96, 17).unwrap();
}

fn s(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// Builds a micro dataset + model used by several tests.
fn setup_trained(dir: &Path) {
    setup_scenes(dir, 4);
    let out = run(&[
        "synth",
        "--images",
        &s(&dir.join("scenes")),
        "--out",
        &s(&dir.join("data")),
        "--count",
        "40",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(dir.join("cfg.json"), r#"{"batch_size": 8}"#).unwrap();
    let out = run(&[
        "train",
        "--data",
        &s(&dir.join("data").join("manifest.jsonl")),
        "--out",
        &s(&dir.join("model")),
        "--k",
        "2",
        "--iters-per-stage",
        "40",
        "--seed",
        "5",
        "--config",
        &s(&dir.join("cfg.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = workdir("synth_det");
    setup_scenes(&dir, 3);
    for out_name in ["a", "b"] {
        let out = run(&[
            "synth",
            "--images",
            &s(&dir.join("scenes")),
            "--out",
            &s(&dir.join(out_name)),
            "--count",
            "30",
            "--seed",
            "7",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.join("a").join("manifest.jsonl")).unwrap();
    let b = std::fs::read(dir.join("b").join("manifest.jsonl")).unwrap();
    assert_eq!(a, b);
    for f in ["clean/00000.png", "low/00017.png"] {
        assert_eq!(
            std::fs::read(dir.join("a").join(f)).unwrap(),
            std::fs::read(dir.join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_missing_dir_exits_3_with_path() {
    let dir = workdir("synth_missing");
    let missing = dir.join("nope");
    let out = run(&[
        "synth",
        "--images",
        &s(&missing),
        "--out",
        &s(&dir.join("out")),
        "--count",
        "5",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_k1_writes_one_stage_pair() {
    let dir = workdir("train_k1");
    setup_scenes(&dir, 3);
    let out = run(&[
        "synth",
        "--images",
        &s(&dir.join("scenes")),
        "--out",
        &s(&dir.join("data")),
        "--count",
        "20",
        "--seed",
        "2",
    ]);
    assert!(out.status.success());
    std::fs::write(dir.join("cfg.json"), r#"{"batch_size": 4}"#).unwrap();
    let out = run(&[
        "train",
        "--data",
        &s(&dir.join("data").join("manifest.jsonl")),
        "--out",
        &s(&dir.join("model")),
        "--k",
        "1",
        "--iters-per-stage",
        "30",
        "--seed",
        "1",
        "--config",
        &s(&dir.join("cfg.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("model").join("im_stage1.prtx").exists());
    assert!(dir.join("model").join("nm_stage1.prtx").exists());
    assert!(!dir.join("model").join("im_stage2.prtx").exists());
    // loss curves carry the csv header and stage labels
    let csv = std::fs::read_to_string(dir.join("model").join("losses.csv")).unwrap();
    assert!(csv.starts_with("iteration,stage,loss,lr"));
    assert!(csv.contains(",im1,") && csv.contains(",nm1,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn enhance_is_deterministic_and_k_is_validated() {
    let dir = workdir("enhance");
    setup_trained(&dir);
    let input = dir.join("data").join("low").join("00003.png");
    for name in ["e1.png", "e2.png"] {
        let out = run(&[
            "enhance",
            "--model",
            &s(&dir.join("model")),
            "--in",
            &s(&input),
            "--out",
            &s(&dir.join(name)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(dir.join("e1.png")).unwrap(),
        std::fs::read(dir.join("e2.png")).unwrap()
    );

    // --no-denoise must change the output on a noisy input
    let out = run(&[
        "enhance",
        "--model",
        &s(&dir.join("model")),
        "--in",
        &s(&input),
        "--out",
        &s(&dir.join("e_nod.png")),
        "--no-denoise",
    ]);
    assert!(out.status.success());
    assert_ne!(
        std::fs::read(dir.join("e1.png")).unwrap(),
        std::fs::read(dir.join("e_nod.png")).unwrap()
    );

    // k beyond the trained depth names the available K and exits 2
    let out = run(&[
        "enhance",
        "--model",
        &s(&dir.join("model")),
        "--in",
        &s(&input),
        "--out",
        &s(&dir.join("e3.png")),
        "--k",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1..=2"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_report_rows_and_determinism() {
    let dir = workdir("eval");
    setup_trained(&dir);
    for name in ["r1.jsonl", "r2.jsonl"] {
        let out = run(&[
            "eval",
            "--model",
            &s(&dir.join("model")),
            "--data",
            &s(&dir.join("data").join("manifest.jsonl")),
            "--k-sweep",
            "0..2",
            "--report",
            &s(&dir.join(name)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("k,mean_psnr,mean_ssim"), "{stdout}");
    }
    let r1 = std::fs::read(dir.join("r1.jsonl")).unwrap();
    assert_eq!(r1, std::fs::read(dir.join("r2.jsonl")).unwrap());
    // 8 test records (40 patches, every fifth) x 3 k values
    let rows = String::from_utf8(r1).unwrap().lines().count();
    assert_eq!(rows, 8 * 3);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn inspect_lists_layers_and_rejects_corruption() {
    let dir = workdir("inspect");
    setup_trained(&dir);
    let model = dir.join("model").join("im_stage1.prtx");
    let out = run(&["inspect", "--model", &s(&model)]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["Conv-BP1", "Conv-BP2", "Conv-BP3", "Conv-BP4", "Conv-DR1", "Conv6"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    assert!(stdout.contains("54561"), "{stdout}");
    let pos_bp1 = stdout.find("Conv-BP1").unwrap();
    let pos_dr1 = stdout.find("Conv-DR1").unwrap();
    let pos_c6 = stdout.find("Conv6").unwrap();
    assert!(pos_bp1 < pos_dr1 && pos_dr1 < pos_c6, "layer order wrong: {stdout}");

    let nm_model = dir.join("model").join("nm_stage1.prtx");
    let out = run(&["inspect", "--model", &s(&nm_model)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["Conv-NP1", "Conv-NP2", "Conv-DR2", "Conv10"] {
        assert!(stdout.contains(name), "{stdout}");
    }

    // truncated file: exit 5
    let bytes = std::fs::read(&model).unwrap();
    let truncated = dir.join("truncated.prtx");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["inspect", "--model", &s(&truncated)]);
    assert_eq!(out.status.code(), Some(5));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_is_byte_deterministic() {
    let dir = workdir("train_det");
    setup_scenes(&dir, 3);
    let out = run(&[
        "synth",
        "--images",
        &s(&dir.join("scenes")),
        "--out",
        &s(&dir.join("data")),
        "--count",
        "20",
        "--seed",
        "9",
    ]);
    assert!(out.status.success());
    std::fs::write(dir.join("cfg.json"), r#"{"batch_size": 4}"#).unwrap();
    for out_name in ["m1", "m2"] {
        let out = run(&[
            "train",
            "--data",
            &s(&dir.join("data").join("manifest.jsonl")),
            "--out",
            &s(&dir.join(out_name)),
            "--k",
            "1",
            "--iters-per-stage",
            "25",
            "--seed",
            "4",
            "--config",
            &s(&dir.join("cfg.json")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["im_stage1.prtx", "nm_stage1.prtx", "nm_stage0.prtx", "losses.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.join("m1").join(f)).unwrap(),
            std::fs::read(dir.join("m2").join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}
