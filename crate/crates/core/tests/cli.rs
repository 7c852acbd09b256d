use std::path::Path;
use std::process::{Command, Output};

use avatar_core::body::{default_template, BodyParams, Region};
use avatar_core::gaussians::region_mask;
use avatar_core::latent::Latent;
use avatar_core::pipeline::poses_to_text;

fn avatar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avatar"))
        .current_dir(dir)
        .args([
            "--checkpoints",
            "ckpt",
            "--set",
            "denoiser.width=8",
            "--set",
            "denoiser.heads=2",
            "--set",
            "render.resolution=32",
            "--set",
            "render.frames=2",
            "--log-every",
            "1",
        ])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = avatar(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| avatar(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--set", "no.such.key=1", "generate"]), 2);
    assert_eq!(code(&["--set", "denoiser.heads=3", "generate"]), 2);
    assert_eq!(code(&["edit", "--latent", "x.tatt", "--region", "tail", "--prompt", "red"]), 2);
    // missing checkpoints is a runtime failure
    let out = avatar(dir.path(), &["generate", "--prompt", "red shirt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ckpt"));
}

#[test]
fn full_pipeline_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["template", "gen", "--out", "template.tbdy"]);
    assert!(d.join("template.tbdy").exists());
    ok(d, &["dataset", "gen", "--n", "64", "--out", "data"]);
    ok(d, &["teacher", "fit", "--dataset", "data"]);
    let log = ok(d, &["train", "decoder", "--dataset", "data", "--steps", "2"]);
    assert!(log.contains("step"), "{log}");
    ok(d, &["train", "decoder", "--dataset", "data", "--steps", "1", "--resume"]);
    ok(d, &["train", "denoiser", "--dataset", "data", "--steps", "3"]);

    ok(d, &["--seed", "3", "generate", "--prompt", "red shirt", "--steps", "4", "--out", "gen"]);
    assert!(d.join("gen/latent.tatt").exists());
    assert!(d.join("gen/view_00.png").exists() && d.join("gen/view_01.png").exists());

    ok(d, &["edit", "--latent", "gen/latent.tatt", "--region", "torso", "--prompt", "blue shirt", "--steps", "4", "--out", "edit"]);
    let before = Latent::load(&d.join("gen/latent.tatt")).unwrap();
    let after = Latent::load(&d.join("edit/latent.tatt")).unwrap();
    let mask = region_mask(&default_template(0), Region::Torso, before.width).unwrap();
    for (i, (a, b)) in before.data.iter().zip(&after.data).enumerate() {
        if mask.data[i % before.plane()] == 0 {
            assert_eq!(a.to_bits(), b.to_bits(), "texel {i} outside the torso changed");
        }
    }
    assert_ne!(before, after);
    ok(d, &["edit", "--latent", "gen/latent.tatt", "--region", "torso", "--tint", "0.2,0.9,0.2", "--out", "tinted"]);
    assert!(d.join("tinted/attributes.tatt").exists());

    let t = default_template(0);
    std::fs::write(d.join("poses.txt"), poses_to_text(&[BodyParams::rest(&t), BodyParams::rest(&t)])).unwrap();
    ok(d, &["animate", "--latent", "gen/latent.tatt", "--poses", "poses.txt", "--out", "anim"]);
    let f0 = std::fs::read(d.join("anim/frame_0000.png")).unwrap();
    assert_eq!(f0, std::fs::read(d.join("anim/frame_0001.png")).unwrap());

    ok(d, &["render", "--latent", "gen/latent.tatt", "--camera", "front", "--out", "front.png"]);
    assert_eq!(std::fs::read(d.join("front.png")).unwrap(), f0);
    ok(d, &["render", "--attributes", "tinted/attributes.tatt", "--camera", "45", "--out", "side.png"]);
    ok(d, &["export-ply", "--latent", "gen/latent.tatt", "--out", "avatar.ply"]);
    assert!(std::fs::read_to_string(d.join("avatar.ply")).unwrap().starts_with("ply\n"));

    let bad = avatar(d, &["animate", "--latent", "gen/latent.tatt", "--poses", "template.tbdy", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(1));
}
