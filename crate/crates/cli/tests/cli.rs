use std::path::Path;
use std::process::Command;

use headsdf::autodiff::AdamState;
use headsdf::geometry::{Camera, Vec3};
use headsdf::recon::{tiny_model_config, ReconModel, SDF_SEGMENT};
use headsdf_cli::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_headsdf"))
}

fn tiny_scene(dir: &Path, seed: u64) {
    let args = GenSyntheticArgs {
        out: dir.to_path_buf(),
        config: None,
        shape: None,
        views: Some(3),
        size: Some(24),
    };
    let common = Common {
        seed: Some(seed),
        ..Default::default()
    };
    cmd_gen_synthetic(&args, &common).unwrap();
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn save_model(model: &ReconModel, path: &Path) {
    model
        .to_checkpoint(&AdamState::new(model.params.len()))
        .unwrap()
        .save(path)
        .unwrap();
}

fn camera() -> Camera {
    Camera::look_at(
        Vec3::new(0.0, 0.0, -2.5),
        Vec3::zeros(),
        -Vec3::y(),
        24.0,
        24.0,
        12.0,
        12.0,
        24,
        24,
    )
    .unwrap()
}

#[test]
fn gen_synthetic_and_orient2d_are_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    tiny_scene(&a, 4);
    tiny_scene(&b, 4);
    for f in [
        "cameras.json",
        "landmarks.json",
        "view_001/image.png",
        "view_002/orientation.ori",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let echo: serde_json::Value = serde_json::from_slice(&read(&a.join(CONFIG_ECHO))).unwrap();
    assert_eq!(echo["command"], "gen-synthetic");
    assert_eq!(echo["config"]["n_views"], 3);

    let common = Common::default();
    let run = |out: &str| {
        let args = Orient2dArgs {
            scene: a.clone(),
            out: t.path().join(out),
            config: None,
        };
        cmd_orient2d(&args, &common).unwrap()
    };
    let counts = run("o1");
    run("o2");
    assert!(counts.iter().all(|&n| n > 0));
    for f in ["view_000.ori", "view_000_hsv.png", "view_002.ori"] {
        assert_eq!(
            read(&t.path().join("o1").join(f)),
            read(&t.path().join("o2").join(f)),
            "{f}"
        );
    }
}

#[test]
fn fit_proxy_writes_artifacts_with_monotone_energy() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("scene");
    tiny_scene(&scene, 0);
    let args = FitProxyArgs {
        scene: scene.clone(),
        out: t.path().join("proxy"),
        config: None,
        model: None,
        max_iterations: Some(30),
    };
    let r = cmd_fit_proxy(&args, &Common::default()).unwrap();
    assert!(r.final_energy < r.initial_energy);
    assert!(r.fit.trace.windows(2).all(|w| w[1] <= w[0]));
    for f in [PROXY_MESH, PROXY_CAMERAS, PROXY_REPORT, CONFIG_ECHO] {
        assert!(args.out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&read(&args.out.join(PROXY_REPORT))).unwrap();
    assert!(report["fit"]["trace"].as_array().unwrap().len() >= 2);

    std::fs::remove_file(scene.join("landmarks.json")).unwrap();
    let err = cmd_fit_proxy(&args, &Common::default()).unwrap_err();
    assert_eq!(err.code(), "IO_ERROR");
    assert!(err.to_string().contains("landmarks.json"));
}

#[test]
fn extract_reports_an_empty_mesh_without_failing() {
    let t = tempfile::tempdir().unwrap();
    let mut model = ReconModel::new(&tiny_model_config(), vec![camera()], 0).unwrap();
    let sdf = model.params.segment(SDF_SEGMENT).unwrap().range();
    // Positive weights and biases after softplus keep the field above zero.
    model.params.values[sdf].iter_mut().for_each(|w| *w = 0.1);
    let ckpt = t.path().join("positive.json");
    save_model(&model, &ckpt);
    let out = t.path().join("mesh.obj");
    let status = bin()
        .args(["extract", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&out)
        .args(["--resolution", "12"])
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("empty mesh"));
    assert!(out.is_file());
}

#[test]
fn extract_resolution_doubling_tightens_the_initial_sphere() {
    let t = tempfile::tempdir().unwrap();
    let model = ReconModel::new(&tiny_model_config(), vec![camera()], 0).unwrap();
    let ckpt = t.path().join("init.json");
    save_model(&model, &ckpt);
    let sdf = model.neural_sdf();
    let err = |res: usize| {
        let args = ExtractArgs {
            checkpoint: ckpt.clone(),
            out: t.path().join(format!("m{res}.obj")),
            resolution: res,
            bound: 1.0,
        };
        let r = cmd_extract(&args, &Common::default()).unwrap();
        assert!(r.triangles > 0);
        let mesh = headsdf::mesh_io::import_obj(&args.out).unwrap();
        let f = |v: &Vec3| headsdf::sdf::DistanceField::eval(&sdf.view(), v).abs();
        mesh.vertices.iter().map(f).sum::<f64>() / mesh.vertices.len() as f64
    };
    let (coarse, fine) = (err(16), err(32));
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn render_is_byte_identical_and_checks_the_view_index() {
    let t = tempfile::tempdir().unwrap();
    let model = ReconModel::new(&tiny_model_config(), vec![camera()], 2).unwrap();
    let ckpt = t.path().join("m.json");
    save_model(&model, &ckpt);
    let run = |out: &str, view: usize| {
        let args = RenderArgs {
            checkpoint: ckpt.clone(),
            out: t.path().join(out),
            view,
            cameras: None,
            config: None,
        };
        cmd_render(&args, &Common::default())
    };
    let a = run("r1", 0).unwrap();
    let b = run("r2", 0).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(read(p), read(q));
    }
    assert_eq!(run("r3", 1).unwrap_err().code(), "VIEW_OUT_OF_RANGE");

    let out = bin()
        .args(["render", "--view", "5", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(t.path().join("r4"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("VIEW_OUT_OF_RANGE: "));
}

#[test]
fn errors_are_single_coded_lines() {
    let t = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--scene"])
        .arg(t.path().join("missing"))
        .arg("--out")
        .arg(t.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("IO_ERROR: ") && stderr.contains("missing"),
        "{stderr}"
    );

    let scene = t.path().join("scene");
    tiny_scene(&scene, 0);
    let out = bin()
        .args(["train", "--epochs", "3", "--scene"])
        .arg(&scene)
        .arg("--out")
        .arg(t.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("INVALID_CONFIG: "));
}

#[test]
fn gradcheck_lists_every_term() {
    let t = tempfile::tempdir().unwrap();
    let report = t.path().join("gradcheck.json");
    let out = bin()
        .arg("gradcheck")
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    for term in headsdf::recon::TERM_NAMES {
        assert!(
            stdout
                .lines()
                .any(|l| l.starts_with(term) && l.ends_with("PASS")),
            "{term}: {stdout}"
        );
    }
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(json["terms"].as_array().unwrap().len(), 6);
    assert_eq!(json["passed"], true);

    let strict = bin()
        .args(["gradcheck", "--tolerance", "1e-30"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stderr).starts_with("GRADCHECK_FAILED: "));
}
