use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchcast"))
}

#[test]
fn scene_gen_then_run_on_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let small = dir.path().join("small.toml");
    std::fs::write(&small, "[scene]\nframe_count = 24\n").unwrap();
    let status = bin()
        .args(["scene-gen", "--config"])
        .arg(&small)
        .arg("--out")
        .arg(&scene)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(scene.join("frame_00023.pgm").exists());
    assert_eq!(std::fs::read_to_string(scene.join("annotations.csv")).unwrap().lines().count(), 24);

    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "dataset = \"scene\"\noutput_dir = \"out\"\nrates = [0.25, 1.0]\nseeds = [1, 2]\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("dqn+interp"));
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 2);
}

#[test]
fn heatmap_subcommand_writes_pgm_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.toml");
    std::fs::write(&small, "[scene]\nframe_count = 30\n").unwrap();
    let heat = dir.path().join("h.pgm");
    let ckpt = dir.path().join("q.txt");
    let status = bin()
        .args(["heatmap", "--config"])
        .arg(&small)
        .arg("--out")
        .arg(&heat)
        .arg("--checkpoint")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    let img = patchcast::frame_grid::read_pgm(&heat, 0).unwrap();
    assert_eq!((img.width, img.height), (8, 8));
    assert!(img.pixels.contains(&255));
    patchcast::importance::QModel::load(&ckpt).unwrap();

    let bad = bin().args(["heatmap", "--method", "random", "--out"]).arg(&heat).status().unwrap();
    assert!(!bad.success());
}
