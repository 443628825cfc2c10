use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use siamhand::camera_geometry::{project_marker, MarkerCubeSpec, MarkerDetection};
use siamhand::synth_oracle::default_rig;

fn siamhand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamhand")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = siamhand(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    siamhand(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, value.to_string()).unwrap();
    p
}

#[test]
fn fit_recovers_noiseless_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    let fit = tmp.path().join("fit");
    ok(&["synth", "--out", s(&synth), "--count", "5", "--sigma", "0", "--seed", "11"]);
    ok(&["fit", "--out", s(&fit), "--input", s(&synth.join("scenes.jsonl"))]);
    let summary = json_file(&fit.join("summary.json"));
    assert_eq!(summary["fitted"], 5);
    assert!(summary["mean_3d_error_mm"].as_f64().unwrap() < 1e-3, "{summary}");
    for name in ["config.json", "run.json", "fits.jsonl"] {
        assert!(fit.join(name).is_file(), "{name}");
    }
    assert_eq!(json_file(&fit.join("run.json"))["subcommand"], "fit");
}

#[test]
fn reruns_and_thread_counts_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    ok(&["synth", "--out", s(&synth), "--count", "6", "--seed", "5"]);
    let scenes = synth.join("scenes.jsonl");
    let again = tmp.path().join("synth-again");
    ok(&["synth", "--out", s(&again), "--count", "6", "--seed", "5"]);
    for name in ["config.json", "run.json", "scenes.jsonl", "summary.json"] {
        assert_eq!(std::fs::read(synth.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }

    let one = tmp.path().join("fit1");
    let two = tmp.path().join("fit2");
    ok(&["fit", "--out", s(&one), "--input", s(&scenes), "--jobs", "1"]);
    ok(&["fit", "--out", s(&two), "--input", s(&scenes), "--jobs", "2"]);
    for name in ["fits.jsonl", "summary.json"] {
        assert_eq!(std::fs::read(one.join(name)).unwrap(), std::fs::read(two.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn train_lift_writes_a_trace_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = tmp.path().join("pairs");
    ok(&["synth", "--out", s(&pairs), "--count", "20", "--pairs", "--seed", "2"]);
    let cfg = write(
        tmp.path(),
        "lift.json",
        &json!({"settings": {"hidden": [32], "train": {"max_steps": 40, "eval_interval": 10, "batch_size": 8}}}),
    );
    let mut traces = Vec::new();
    for mode in ["siamese", "random-pair"] {
        let out = tmp.path().join(mode);
        ok(&[
            "train-lift",
            "--out",
            s(&out),
            "--input",
            s(&pairs.join("pairs.jsonl")),
            "--mode",
            mode,
            "--config",
            s(&cfg),
        ]);
        let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        let lines: Vec<&str> = trace.lines().collect();
        assert_eq!(lines[0], "step,train_loss,val_loss");
        assert_eq!(lines.len(), 6, "{trace}");
        let summary = json_file(&out.join("summary.json"));
        assert_eq!(summary["steps"], 40);
        assert!(summary["val_mean_3d_error_mm"].as_f64().unwrap().is_finite());
        assert!(out.join("model.json").is_file());
        traces.push(trace);
    }
    // same initial weights and validation set, different batches
    assert_eq!(traces[0].lines().nth(1), traces[1].lines().nth(1));
    assert_ne!(traces[0], traces[1]);
}

#[test]
fn train_grasp_separates_the_prototypes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grasp");
    ok(&["train-grasp", "--out", s(&out), "--seed", "1"]);
    let summary = json_file(&out.join("summary.json"));
    assert!(summary["overall_accuracy"].as_f64().unwrap() > 0.9, "{summary}");
    let confusion = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 18);
}

#[test]
fn calibrate_recovers_rig_extrinsics() {
    let tmp = tempfile::tempdir().unwrap();
    let cube = MarkerCubeSpec::standard(80.0, 30.0, 0).unwrap();
    let rig = default_rig();
    let cameras: Vec<Value> = rig
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let centre = cam.center();
            let detections: Vec<MarkerDetection> = cube
                .markers
                .iter()
                .filter(|m| {
                    let c = m.corners;
                    let e1: Vec<f64> = (0..3).map(|a| c[1][a] - c[0][a]).collect();
                    let e2: Vec<f64> = (0..3).map(|a| c[3][a] - c[0][a]).collect();
                    let n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
                    let mid: Vec<f64> = (0..3).map(|a| c.iter().map(|p| p[a]).sum::<f64>() / 4.0).collect();
                    (0..3).map(|a| n[a] * (centre[a] - mid[a])).sum::<f64>() > 0.0
                })
                .filter_map(|m| {
                    let corners = project_marker(m, &cam.extrinsic, &cam.intrinsics).ok()?;
                    Some(MarkerDetection {
                        id: m.id,
                        corners,
                        confidence: 1.0,
                    })
                })
                .collect();
            json!({"name": format!("cam{i}"), "intrinsics": cam.intrinsics, "detections": detections})
        })
        .collect();
    let input = write(tmp.path(), "calib.json", &json!({"cube": cube, "cameras": cameras}));
    let out = tmp.path().join("calib");
    ok(&["calibrate", "--out", s(&out), "--input", s(&input)]);
    let result = json_file(&out.join("cameras.json"));
    for (cam, truth) in result.as_array().unwrap().iter().zip(&rig) {
        let est: siamhand::camera_geometry::CameraModel = serde_json::from_value(cam["camera"].clone()).unwrap();
        assert!((est.center() - truth.center()).norm() < 1e-4, "{cam}");
        assert!(cam["rms_px"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn eval_commands_on_hand_computed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    // distances 2, 5, 0, 35
    let pck = write(
        tmp.path(),
        "pck.json",
        &json!({"space": "2d_px", "pred": [[[10, 10], [20, 25]], [[0, 0], [5, 5]]], "gt": [[[10, 12], [20, 20]], [[0, 0], [5, 40]]]}),
    );
    let out = tmp.path().join("pck");
    ok(&["eval-pck", "--out", s(&out), "--input", s(&pck)]);
    let summary = json_file(&out.join("summary.json"));
    assert_eq!(summary["evaluated"], 4);
    assert!((summary["mean_error"].as_f64().unwrap() - 10.5).abs() < 1e-12);
    let csv = std::fs::read_to_string(out.join("pck.csv")).unwrap();
    assert_eq!(csv.lines().nth(3), Some("2,0.5"));
    assert_eq!(csv.lines().count(), 32);

    let grasp = write(tmp.path(), "grasp.json", &json!({"classes": 3, "predictions": [0, 1, 2, 2], "truths": [0, 1, 1, 2]}));
    let out = tmp.path().join("eg");
    ok(&["eval-grasp", "--out", s(&out), "--input", s(&grasp)]);
    assert_eq!(json_file(&out.join("summary.json"))["overall_accuracy"], 0.75);
    let csv = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().nth(2), Some("1,0,1,1,0.5"));

    let bad = write(tmp.path(), "bad.json", &json!({"classes": 2, "predictions": [0, 2], "truths": [0, 1]}));
    assert_eq!(code(&["eval-grasp", "--out", s(&tmp.path().join("x")), "--input", s(&bad)]), 1);
}

#[test]
fn bootstrap_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let cfg = write(tmp.path(), "boot.json", &json!({"settings": {"scenes": 8}}));
    ok(&["bootstrap", "--out", s(&runs.join("boot")), "--config", s(&cfg), "--seed", "3"]);
    let rounds = std::fs::read_to_string(runs.join("boot").join("rounds.csv")).unwrap();
    let bias: Vec<f64> = rounds.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(bias.len() >= 2 && bias.windows(2).all(|w| w[1] < w[0]), "{rounds}");

    ok(&["synth", "--out", s(&runs.join("synth")), "--count", "2"]);
    let report = tmp.path().join("report");
    ok(&["report", "--out", s(&report), "--input", s(&runs)]);
    let entries = json_file(&report.join("report.json"));
    let names: Vec<&str> = entries.as_array().unwrap().iter().map(|e| e["subcommand"].as_str().unwrap()).collect();
    assert_eq!(names, ["bootstrap", "synth"]);
    assert!(std::fs::read_to_string(report.join("report.csv")).unwrap().starts_with("run,subcommand,seed,metric,value"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = s(&tmp.path().join("out")).to_string();
    let report = siamhand(&["report", "--out", &out, "--input", s(&empty)]);
    assert_eq!(report.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&report.stderr).contains("no run directories"));

    assert_eq!(code(&["fit", "--bogus"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["fit", "--out", &out, "--input", s(&tmp.path().join("missing.jsonl"))]), 1);

    let unknown = write(tmp.path(), "unknown.json", &json!({"settings": {"nope": 1}}));
    assert_eq!(code(&["synth", "--out", &out, "--config", s(&unknown)]), 2);
    assert_eq!(code(&["synth", "--out", &out, "--jobs", "0"]), 2);
    let bad_rate = write(tmp.path(), "rate.json", &json!({"settings": {"train": {"learning_rate": -1.0}}}));
    assert_eq!(code(&["train-grasp", "--out", &out, "--config", s(&bad_rate)]), 2);

    let garbage = tmp.path().join("garbage.jsonl");
    std::fs::write(&garbage, "not json\n").unwrap();
    assert_eq!(code(&["fit", "--out", &out, "--input", s(&garbage)]), 1);
}
