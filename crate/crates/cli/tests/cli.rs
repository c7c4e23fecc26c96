use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const POSE: &str = "[pose]\nmatrix = [[0.9986295347545738, -0.05233595624294383, 0.0, 3.0], \
[0.05233595624294383, 0.9986295347545738, 0.0, -2.0], [0.0, 0.0, 1.0, 1.5], [0.0, 0.0, 0.0, 1.0]]\n";

fn facereg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facereg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Two samplings of the same head, B posed by a known motion, plus a
/// register config pointing at them.
fn fixture(dir: &Path, extra: &str) {
    fs::write(dir.join("a.toml"), "density = 2.0\n").unwrap();
    fs::write(dir.join("b.toml"), format!("density = 2.0\n{POSE}")).unwrap();
    ok(&facereg(dir, &["synth", "--head", "a.toml", "--out-dir", "a"]));
    ok(&facereg(dir, &["synth", "--head", "b.toml", "--out-dir", "b"]));
    let cfg = format!(
        "seed = 11\noutput_dir = \"out\"\n{extra}\n\
         [inputs.a]\nsurface = \"a/surface.ply\"\nlandmarks = \"a/landmarks.json\"\n\
         [inputs.b]\nsurface = \"b/surface.ply\"\nlandmarks = \"b/landmarks.json\"\n"
    );
    fs::write(dir.join("reg.toml"), cfg).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fixture_pair_registers_below_a_tenth_of_a_millimetre() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");
    let o = facereg(dir.path(), &["register", "--config", "reg.toml"]);
    ok(&o);
    let m = json(&dir.path().join("out/metrics.json"));
    assert!(m["landmark_icp"]["e_mean"].as_f64().unwrap() < 0.1, "{m}");
    assert_eq!(m["angle_warning"], Value::Bool(false));
    let t = json(&dir.path().join("out/transform.json"));
    assert!(t["convention"].as_str().unwrap().contains("row-major"));
    assert!((t["matrix"][0][3].as_f64().unwrap() - 3.0).abs() < 1e-6);
}

#[test]
fn missing_input_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("reg.toml"),
        "[inputs.a]\nsurface = \"nope.ply\"\nlandmarks = \"l.json\"\n[inputs.b]\nsurface = \"nope.ply\"\nlandmarks = \"l.json\"\n",
    )
    .unwrap();
    let o = facereg(dir.path(), &["register", "--config", "reg.toml"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("facereg-error kind=io code=3:"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "sed = 3\n").unwrap();
    let o = facereg(dir.path(), &["register", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("facereg-error kind=config code=2:"));
    fs::write(dir.path().join("empty.toml"), "").unwrap();
    assert_eq!(code(&facereg(dir.path(), &["register", "--config", "empty.toml"])), 2);
}

#[test]
fn landmarks_outside_the_raster_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "[projection]\npixel_pitch = 0.01");
    let o = facereg(dir.path(), &["register", "--config", "reg.toml"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("facereg-error kind=detection code=4:"));
}

#[test]
fn empty_subsurface_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");
    let o = facereg(dir.path(), &["register", "--config", "reg.toml", "--subsurface-radius-mm", "1e-9"]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("facereg-error kind=geometry code=5:"));
}

#[test]
fn narrow_angles_run_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");
    let o = facereg(
        dir.path(),
        &["register", "--config", "reg.toml", "--phi1-deg", "4.5", "--phi2-deg", "-4.5"],
    );
    ok(&o);
    let m = json(&dir.path().join("out/metrics.json"));
    assert_eq!(m["angle_warning"], Value::Bool(true));
    assert!((m["epsilon_rad"].as_f64().unwrap() - std::f64::consts::PI / 20.0).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&o.stderr).contains("facereg-warning"));
}

#[test]
fn metrics_on_identical_surfaces_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h.toml"), "density = 0.5\n").unwrap();
    ok(&facereg(dir.path(), &["synth", "--head", "h.toml", "--out-dir", "h"]));
    let o = facereg(dir.path(), &["metrics", "--x", "h/surface.ply", "--y", "h/surface.ply", "--out", "m.json"]);
    ok(&o);
    let m = json(&dir.path().join("m.json"));
    assert_eq!(m["e_sup"].as_f64(), Some(0.0));
    assert_eq!(m["e_mean"].as_f64(), Some(0.0));
}

#[test]
fn staged_run_matches_register_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "[detector]\nnoise_sigma_px = 0.7");
    ok(&facereg(dir.path(), &["register", "--config", "reg.toml"]));
    let staged = ["--config", "reg.toml", "--out-dir", "staged"];
    for side in ["a", "b"] {
        for view in ["1", "2"] {
            let mut args = vec!["project", "--side", side, "--view", view];
            args.extend(staged);
            ok(&facereg(dir.path(), &args));
            args[0] = "detect";
            ok(&facereg(dir.path(), &args));
        }
        let mut args = vec!["lift", "--side", side];
        args.extend(staged);
        ok(&facereg(dir.path(), &args));
    }
    let mut args = vec!["icp"];
    args.extend(staged);
    ok(&facereg(dir.path(), &args));
    let mut files = vec!["transform.json".to_string(), "registration.json".to_string()];
    for side in ["a", "b"] {
        files.push(format!("landmarks3d_{side}.json"));
        for view in [1, 2] {
            files.push(format!("projection_{side}_{view}.png"));
            files.push(format!("projection_{side}_{view}.json"));
            files.push(format!("landmarks2d_{side}_{view}.json"));
        }
    }
    for f in files {
        let mono = fs::read(dir.path().join("out").join(&f)).unwrap();
        let stage = fs::read(dir.path().join("staged").join(&f)).unwrap();
        assert!(mono == stage, "{f} differs");
    }
}

#[test]
fn seed_flag_changes_noisy_detections_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "[detector]\nnoise_sigma_px = 1.0");
    let run = |seed: &str, out: &str| {
        ok(&facereg(dir.path(), &["register", "--config", "reg.toml", "--seed", seed, "--out-dir", out]));
        fs::read(dir.path().join(out).join("transform.json")).unwrap()
    };
    let a = run("5", "r1");
    let b = run("5", "r2");
    let c = run("6", "r3");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        fs::read(dir.path().join("r1/metrics.json")).unwrap(),
        fs::read(dir.path().join("r2/metrics.json")).unwrap()
    );
}

#[test]
fn sweep_writes_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), "epsilons = [0.6981317007977318, 1.0471975511965976]\n").unwrap();
    let o = facereg(dir.path(), &["sweep", "--sweep", "s.toml", "--trials", "3", "--out-dir", "sw"]);
    ok(&o);
    let trials = fs::read_to_string(dir.path().join("sw/sweep_trials.csv")).unwrap();
    assert!(trials.starts_with("epsilon_rad,sigma_px,trial,e_poi_mm,failed\n"));
    assert_eq!(trials.lines().count(), 1 + 2 * 3);
    let agg = fs::read_to_string(dir.path().join("sw/sweep_aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");
    ok(&facereg(dir.path(), &["register", "--config", "reg.toml", "--threads", "1", "--out-dir", "t1"]));
    ok(&facereg(dir.path(), &["register", "--config", "reg.toml", "--threads", "4", "--out-dir", "t4"]));
    for f in ["transform.json", "metrics.json", "registered.ply", "distance_colormap.ply"] {
        assert_eq!(
            fs::read(dir.path().join("t1").join(f)).unwrap(),
            fs::read(dir.path().join("t4").join(f)).unwrap(),
            "{f}"
        );
    }
}

const STUB_BRIDGE: &str = r#"
import json, math, sys
truth = {}
for side, path in (("a", sys.argv[1]), ("b", sys.argv[2])):
    truth[side] = json.load(open(path))["landmarks"]
for line in sys.stdin:
    req = json.loads(line)
    img = req["image_path"]
    cal = json.load(open(img[:-4] + ".json"))
    side = "a" if "projection_a_" in img else "b"
    c, s = math.cos(cal["phi"]), math.sin(cal["phi"])
    out = []
    for l in truth[side]:
        x, y, z = l["point"]
        out.append({"index": l["index"],
                    "col": cal["s0"] + (c * x - s * y) / cal["pixel_pitch"],
                    "row": cal["z0"] - z / cal["pixel_pitch"]})
    print(json.dumps({"detected": True, "landmarks": out}), flush=True)
"#;

#[test]
fn external_detector_bridge_completes_a_registration() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");
    fs::write(dir.path().join("bridge.py"), STUB_BRIDGE).unwrap();
    let cmd = "python3 bridge.py a/landmarks.json b/landmarks.json";
    let o = facereg(
        dir.path(),
        &["register", "--config", "reg.toml", "--detector", "external", "--external-cmd", cmd, "--out-dir", "ext"],
    );
    ok(&o);
    let m = json(&dir.path().join("ext/metrics.json"));
    assert!(m["landmark_icp"]["e_mean"].as_f64().unwrap() < 0.1, "{m}");

    fs::write(dir.path().join("blind.py"), "import sys\nfor _ in sys.stdin:\n    print('{\"detected\": false, \"landmarks\": []}', flush=True)\n").unwrap();
    let o = facereg(
        dir.path(),
        &["register", "--config", "reg.toml", "--detector", "external", "--external-cmd", "python3 blind.py", "--out-dir", "blind"],
    );
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no face detected"));
}
