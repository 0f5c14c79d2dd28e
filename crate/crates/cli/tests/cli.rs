use std::path::{Path, PathBuf};
use std::process::Command;

use skinsynth_core::config::RunConfig;
use skinsynth_core::grid::Grid;
use skinsynth_core::io;

fn skinsynth() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_skinsynth"));
    c.env("RUST_LOG", "warn");
    c
}

/// Writes the demo inputs and shrinks them so a full run is quick.
fn demo(dir: &Path, edit: impl FnOnce(&mut RunConfig)) -> PathBuf {
    let status = skinsynth().arg("demo").arg(dir).output().unwrap().status;
    assert!(status.success());
    let path = dir.join("config.yaml");
    let mut cfg = RunConfig::from_yaml(&std::fs::read_to_string(&path).unwrap()).unwrap();
    cfg.views_per_mesh = 2;
    cfg.lesions_per_mesh = 1;
    cfg.blend.steps = 2;
    cfg.placement.view_size = 48;
    cfg.blend.view_size = 48;
    cfg.render.view_size = 48;
    edit(&mut cfg);
    std::fs::write(&path, cfg.to_yaml().unwrap()).unwrap();
    path
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |_| {});
    assert_eq!(
        code(skinsynth().arg("--config").arg(&cfg).arg("pipeline")),
        0
    );
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
}

#[test]
fn stages_run_separately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |_| {});
    for stage in ["paste", "blend", "render"] {
        assert_eq!(
            code(skinsynth().arg("--config").arg(&cfg).arg(stage)),
            0,
            "{stage}"
        );
    }
    assert!(dir
        .path()
        .join("out/textures/sphere/texture_blended.png")
        .exists());
}

#[test]
fn blend_before_paste_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |_| {});
    assert_eq!(code(skinsynth().arg("--config").arg(&cfg).arg("blend")), 2);
}

#[test]
fn missing_config_or_mesh_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(skinsynth().arg("pipeline")), 2);
    assert_eq!(
        code(
            skinsynth()
                .arg("--config")
                .arg(dir.path().join("none.yaml"))
                .arg("paste")
        ),
        2
    );
    let cfg = demo(dir.path(), |c| c.meshes[0].obj = "missing.obj".into());
    assert_eq!(
        code(skinsynth().arg("--config").arg(&cfg).arg("pipeline")),
        2
    );
    assert!(
        !dir.path().join("out").exists(),
        "no work before the config is valid"
    );
}

#[test]
fn placement_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |c| {
        c.meshes[0].nonskin = Some("all_clothing.png".into());
        c.placement.max_tries = 5;
    });
    let tex = io::load_rgb(dir.path().join("sphere.png")).unwrap();
    io::save_labels(
        dir.path().join("all_clothing.png"),
        &Grid::filled(tex.width(), tex.height(), 255u8),
    )
    .unwrap();
    let out = skinsynth()
        .arg("--config")
        .arg(&cfg)
        .arg("paste")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-skin"));
}

#[test]
fn numerical_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |c| c.blend.style_weight = f64::MAX);
    assert_eq!(
        code(skinsynth().arg("--config").arg(&cfg).arg("pipeline")),
        4
    );
}

#[test]
fn seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path(), |_| {});
    let run = |seed: &str, out: &str| {
        let status = skinsynth()
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(dir.path().join(out))
            .arg("pipeline")
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out).join("manifest.jsonl")).unwrap()
    };
    let a = run("7", "a");
    let b = run("7", "b");
    let c = run("8", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
