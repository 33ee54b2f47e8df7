//! Helpers for driving the `geocon` binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geocon::{Camera, Pose, SceneKind, SceneSpec, Surface, Texture, Vec3};

pub fn geocon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geocon"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Fronto-parallel plane at z = 2 seen by two cameras offset sideways. Depth, plane offset
/// and normals are exact in `f32`, so ground-truth losses survive the PFM round trip.
pub fn fronto_plane_spec(size: usize) -> SceneSpec {
    let f = size as f64;
    let cam = Camera::centered(f, size, size, Pose::identity()).unwrap();
    SceneSpec {
        surface: Surface::TiltedPlane {
            normal: [0.0, 0.0, -1.0],
            offset: -2.0,
        },
        texture: Texture::Checker { cell: 0.25 },
        cameras: vec![cam, cam.with_pose(Pose::from_translation(Vec3::new(0.5, 0.25, 0.0)))],
        noise: Default::default(),
        seed: 0,
    }
}

/// Corrupted scene on the fixed denoising protocol (48×48, 80 m, flat albedo).
pub fn noisy_spec(kind: SceneKind, seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::preset(kind, 48, 80.0, Texture::Flat { value: 0.5 }).unwrap();
    spec.noise = geocon::Noise {
        depth_sigma: 0.02,
        normal_sigma_deg: 5.0,
    };
    spec.seed = seed;
    spec
}

/// Runs `synth` on `spec` into `dir/name` and returns the bundle directory.
pub fn synth(dir: &Path, name: &str, spec: &SceneSpec) -> PathBuf {
    let spec_path = write_json(&dir.join(format!("{name}.json")), spec);
    let out = dir.join(name);
    let r = geocon(&["synth", path_str(&spec_path), "--out", path_str(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

/// Optimizer config with a few fields replaced, written next to `dir`.
pub fn optim_config(dir: &Path, name: &str, edit: impl FnOnce(&mut geocon::optim::OptimConfig)) -> PathBuf {
    let mut cfg = geocon::optim::OptimConfig::default();
    edit(&mut cfg);
    write_json(&dir.join(name), &cfg)
}
