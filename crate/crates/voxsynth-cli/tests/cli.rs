//! End-to-end tests of the `voxsynth` binary: exit codes, configuration
//! precedence, artifact reproducibility, and the pipelines the subcommands
//! chain together.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxsynth::io::read_pfm;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voxsynth"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn voxsynth")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny grass exemplar bundle for pipeline tests.
fn gen_exemplar(dir: &Path, grid: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join("exemplar");
    let res = run(&[
        "gen",
        "--out",
        out.to_str().unwrap(),
        "--kind",
        "grass",
        "--grid",
        grid,
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--set",
        "gen_channels=3",
    ]);
    assert_ok(&res);
    out
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

#[test]
fn usage_errors_exit_2() {
    let unknown = run(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2), "{}", stderr(&unknown));
    let empty = bin().output().unwrap();
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_exit_3_from_flag_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let from_flag = run(&["gen", "--out", "x", "--set", "no_such_key=1"]);
    assert_eq!(from_flag.status.code(), Some(3));
    assert!(stderr(&from_flag).contains("unknown config key"));

    let cfg = dir.path().join("job.cfg");
    fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let from_file = run(&["--config", cfg.to_str().unwrap(), "gen", "--out", "x"]);
    assert_eq!(from_file.status.code(), Some(3));
    assert!(stderr(&from_file).contains("unknown config key `bogus`"));
}

#[test]
fn missing_exemplar_exits_3_and_names_the_path() {
    let out = run(&["synth", "--exemplar", "/no/such/bundle", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("/no/such/bundle"));
}

#[test]
fn gen_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_exemplar(&dir.path().join("a"), "24x24x8", 12, 9);
    let b = gen_exemplar(&dir.path().join("b"), "24x24x8", 12, 9);
    let c = gen_exemplar(&dir.path().join("c"), "24x24x8", 12, 10);
    for name in ["meta", "density.bin", "feature.bin", "mlp.bin"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{} differs", name);
    }
    assert_ne!(read(&a.join("density.bin")), read(&c.join("density.bin")));
}

#[test]
fn config_precedence_is_flag_over_set_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("job.cfg");
    fs::write(&cfg, "seed = 1\ngen_count = 5\n").unwrap();
    let out = dir.path().join("bundle");
    let res = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "gen",
        "--out",
        out.to_str().unwrap(),
        "--grid",
        "16x16x8",
        "--set",
        "seed=2",
        "--seed",
        "3",
    ]);
    assert_ok(&res);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("\nseed = 3\n"), "manifest:\n{}", manifest);
    // The file-provided count survives where nothing overrode it.
    assert!(manifest.contains("\ngen_count = 5\n"));
}

#[test]
fn synth_at_exemplar_size_reproduces_the_exemplar_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "45x45x12", 30, 11);
    let out = dir.path().join("resynth");
    let res = run(&[
        "synth",
        "--exemplar",
        ex.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--out-size",
        "45x45",
        "--greedy",
        "--set",
        "extraction_step=1",
        "--set",
        "seed_window=0",
    ]);
    assert_ok(&res);
    for name in ["density.bin", "feature.bin", "mlp.bin", "meta"] {
        assert_eq!(read(&ex.join(name)), read(&out.join(name)), "{} differs", name);
    }
    assert!(out.join("placements.txt").is_file());
    assert!(out.join("manifest.txt").is_file());
}

#[test]
fn boundary_mode_tags_every_placement() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "45x45x8", 20, 4);
    let out = dir.path().join("bordered");
    let res = run(&[
        "synth",
        "--exemplar",
        ex.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--out-size",
        "60x60",
        "--mode",
        "boundary",
        "--set",
        "l_b=10",
        "--seed",
        "2",
    ]);
    assert_ok(&res);
    let log = fs::read_to_string(out.join("placements.txt")).unwrap();
    assert!(!log.is_empty());
    for line in log.lines() {
        assert_eq!(line.split_whitespace().count(), 8, "untagged placement: {}", line);
    }
}

#[test]
fn render_writes_ppm_and_depth_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "24x24x8", 12, 3);
    let img = dir.path().join("view.ppm");
    let depth = dir.path().join("view.pfm");
    let args = [
        "render",
        "--exemplar",
        ex.to_str().unwrap(),
        "--out",
        img.to_str().unwrap(),
        "--depth",
        depth.to_str().unwrap(),
        "--set",
        "img_width=48",
        "--set",
        "img_height=40",
        "--set",
        "n_samples=96",
    ];
    assert_ok(&run(&args));
    let first = read(&img);
    assert!(first.starts_with(b"P6\n48 40\n255\n"));
    let d = read_pfm(&depth).unwrap();
    assert_eq!((d.width, d.height), (48, 40));
    assert!(d.data.iter().all(|v| v.is_finite()));
    assert!(img.with_file_name("view.ppm.manifest.txt").is_file());

    assert_ok(&run(&args));
    assert_eq!(first, read(&img), "render is not byte-stable");
}

#[test]
fn empty_scene_renders_pure_background() {
    let dir = tempfile::tempdir().unwrap();
    let ex = dir.path().join("empty");
    assert_ok(&run(&[
        "gen",
        "--out",
        ex.to_str().unwrap(),
        "--grid",
        "16x16x8",
        "--count",
        "0",
        "--set",
        "gen_channels=3",
    ]));
    let img = dir.path().join("empty.ppm");
    assert_ok(&run(&[
        "render",
        "--exemplar",
        ex.to_str().unwrap(),
        "--out",
        img.to_str().unwrap(),
        "--set",
        "img_width=16",
        "--set",
        "img_height=16",
        "--set",
        "background=0.25,0.5,0.75",
    ]));
    let bytes = read(&img);
    let body = &bytes[bytes.len() - 16 * 16 * 3..];
    let expected = [(0.25f32 * 255.0).round() as u8, 128, (0.75f32 * 255.0).round() as u8];
    for px in body.chunks(3) {
        assert_eq!(px, expected, "non-background pixel in an empty scene");
    }
}

#[test]
fn single_pebble_depth_bump_matches_the_requested_radius() {
    let dir = tempfile::tempdir().unwrap();
    let ex = dir.path().join("pebble");
    assert_ok(&run(&[
        "gen",
        "--out",
        ex.to_str().unwrap(),
        "--kind",
        "pebbles",
        "--grid",
        "32x32x16",
        "--count",
        "1",
        "--set",
        "gen_radius=6",
        "--set",
        "gen_channels=3",
    ]));
    let img = dir.path().join("top.ppm");
    let depth_path = dir.path().join("top.pfm");
    assert_ok(&run(&[
        "render",
        "--exemplar",
        ex.to_str().unwrap(),
        "--out",
        img.to_str().unwrap(),
        "--depth",
        depth_path.to_str().unwrap(),
        "--set",
        "cam_pos=0,0,2",
        "--set",
        "img_width=65",
        "--set",
        "img_height=65",
        "--set",
        "n_samples=256",
    ]));
    let depth = read_pfm(&depth_path).unwrap();
    // Straight-down center ray: depth is the distance from z=2 to the apex.
    // The pebble rests its flat face on the plane one voxel up, so the apex
    // sits (1 + radius) voxels high.
    let voxel = 2.0 / 31.0;
    let apex_z = 2.0 - depth.get(32, 32) as f64;
    let measured_radius = apex_z / voxel - 1.0;
    assert!(
        (measured_radius - 6.0).abs() <= 1.0,
        "measured radius {:.2} voxels, wanted 6 +- 1",
        measured_radius
    );
}

#[test]
fn shading_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "24x24x8", 12, 6);
    let small = [
        ("n_views", "6"),
        ("n_channels", "2"),
        ("view_width", "20"),
        ("view_height", "20"),
        ("light_samples", "16"),
        ("n_samples", "64"),
        ("blur_passes", "1"),
    ];
    let mut args = vec!["shade-rt".to_string()];
    args.extend(["--exemplar".into(), ex.to_str().unwrap().to_string()]);
    let map = dir.path().join("map");
    args.extend(["--out".into(), map.to_str().unwrap().to_string()]);
    for (k, v) in small {
        args.extend(["--set".into(), format!("{}={}", k, v)]);
    }
    let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_ok(&run(&argv));
    assert!(map.join("manifest.txt").is_file());

    let guider = dir.path().join("guider");
    assert_ok(&run(&[
        "guider",
        "--map",
        map.to_str().unwrap(),
        "--out",
        guider.to_str().unwrap(),
        "--kind",
        "scale-up",
        "--out-size",
        "32x32",
    ]));

    let relit = dir.path().join("relit");
    assert_ok(&run(&[
        "relight",
        "--exemplar",
        ex.to_str().unwrap(),
        "--map",
        map.to_str().unwrap(),
        "--guider",
        guider.to_str().unwrap(),
        "--out",
        relit.to_str().unwrap(),
        "--seed",
        "1",
        "--set",
        "w_p=9",
        "--set",
        "w_o=3",
    ]));
    let meta = fs::read_to_string(relit.join("meta")).unwrap();
    assert!(meta.contains("nx = 32"), "relit bundle meta:\n{}", meta);
    assert!(relit.join("placements.txt").is_file());
}

#[test]
fn deform_fit_converges_on_a_plane_and_warns_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit");
    let ok = run(&[
        "deform-fit",
        "--surface",
        "plane",
        "--out",
        fit.to_str().unwrap(),
        "--epochs",
        "400",
        "--set",
        "fit_grid=8x8",
    ]);
    assert_ok(&ok);
    assert!(!stderr(&ok).contains("warning"), "plane fit warned: {}", stderr(&ok));
    let params = fs::read_to_string(fit.join("params.txt")).unwrap();
    assert_eq!(params.lines().count(), 387);
    assert!(fs::read_to_string(fit.join("meta")).unwrap().contains("converged = true"));

    let starved = dir.path().join("starved");
    let warned = run(&[
        "deform-fit",
        "--surface",
        "sphere:1.5",
        "--out",
        starved.to_str().unwrap(),
        "--epochs",
        "1",
        "--set",
        "fit_grid=8x8",
    ]);
    assert_ok(&warned);
    assert!(stderr(&warned).contains("did not converge"), "stderr: {}", stderr(&warned));
    assert!(fs::read_to_string(starved.join("meta")).unwrap().contains("converged = false"));
}

#[test]
fn render_applies_a_deformation_and_zero_displacement_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "16x16x8", 6, 8);
    let fit = dir.path().join("fit");
    fs::create_dir_all(&fit).unwrap();
    let zeros: String = vec!["0"; 387].join("\n") + "\n";
    fs::write(fit.join("params.txt"), zeros).unwrap();
    fs::write(fit.join("loss.txt"), "0\n").unwrap();
    fs::write(
        fit.join("meta"),
        "center = 0 0 0\nscale = 1\nconverged = true\nfinal_loss = 0\n",
    )
    .unwrap();
    let plain = dir.path().join("plain.ppm");
    let warped = dir.path().join("warped.ppm");
    let base_args = |out: &Path| {
        vec![
            "render".to_string(),
            "--exemplar".into(),
            ex.to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--set".into(),
            "img_width=32".into(),
            "--set".into(),
            "img_height=32".into(),
        ]
    };
    let plain_args: Vec<String> = base_args(&plain);
    let argv: Vec<&str> = plain_args.iter().map(|s| s.as_str()).collect();
    assert_ok(&run(&argv));
    let mut warp_args = base_args(&warped);
    warp_args.extend(["--deform".into(), fit.to_str().unwrap().to_string()]);
    let argv: Vec<&str> = warp_args.iter().map(|s| s.as_str()).collect();
    assert_ok(&run(&argv));
    assert_eq!(read(&plain), read(&warped), "zero displacement changed the render");
}

#[test]
fn bench_prints_a_parseable_table() {
    let dir = tempfile::tempdir().unwrap();
    let ex = gen_exemplar(dir.path(), "24x24x8", 12, 5);
    let table_path = dir.path().join("table.txt");
    let out = run(&[
        "bench",
        "--exemplar",
        ex.to_str().unwrap(),
        "--sizes",
        "20,24",
        "--reps",
        "1",
        "--out",
        table_path.to_str().unwrap(),
        "--set",
        "w_p=9",
        "--set",
        "w_o=3",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("size baseline_s two_phase_s ratio\n"), "stdout: {}", stdout);
    let rows = voxsynth_cli::bench::parse_table(&stdout).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].size, rows[1].size), (20, 24));
    assert!(rows.iter().all(|r| r.baseline_s > 0.0 && r.two_phase_s > 0.0));
    assert_eq!(fs::read_to_string(&table_path).unwrap(), stdout);
    assert!(table_path.with_file_name("table.txt.manifest.txt").is_file());
}

#[test]
fn threads_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bundle");
    assert_ok(&run(&[
        "--threads",
        "2",
        "gen",
        "--out",
        out.to_str().unwrap(),
        "--grid",
        "16x16x8",
    ]));
    assert!(out.join("density.bin").is_file());
}
