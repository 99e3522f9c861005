use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use graspkp::gktb::{write_bundle, write_planes};
use graspkp::{ideal_bundle, EncoderConfig, Grasp, Grid2D};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspkp")).args(args).output().expect("binary runs")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("stdout line is JSON"))
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn grasp(x: f64, y: f64, deg: f64, w: f64) -> Grasp {
    Grasp {
        x,
        y,
        theta: deg.to_radians(),
        w,
        h: None,
    }
}

fn write_ideal(dir: &Path, grasps: &[Grasp], classes: usize, size: usize) -> std::path::PathBuf {
    let enc = EncoderConfig::new(classes, 4, size, size);
    let bundle = ideal_bundle(grasps, &enc, 3).unwrap();
    let path = dir.join("b.gktb");
    write_bundle(&bundle, File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn group_recovers_ideal_grasps() {
    let dir = TempDir::new().unwrap();
    let truth = [grasp(60.0, 70.0, 20.0, 40.0), grasp(160.0, 150.0, -45.0, 50.0)];
    let bundle = write_ideal(dir.path(), &truth, 18, 227);
    let out = run(&["group", "--bundle", p(&bundle), "--profile", "cornell"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    assert_eq!(lines[0]["metadata"]["command"], "group");
    assert_eq!(lines.len(), 3);
    for t in &truth {
        let hit = lines[1..].iter().any(|r| {
            (r["x"].as_f64().unwrap() - t.x).abs() < 1.0
                && (r["y"].as_f64().unwrap() - t.y).abs() < 1.0
                && (r["w"].as_f64().unwrap() - t.w).abs() < 1.0
        });
        assert!(hit, "{t:?} not found in {lines:?}");
    }
}

#[test]
fn group_echoes_overrides() {
    let dir = TempDir::new().unwrap();
    let bundle = write_ideal(dir.path(), &[grasp(200.0, 200.0, 0.0, 60.0)], 36, 512);
    let out = run(&["group", "--bundle", p(&bundle), "--profile", "ajd", "--tau-orient", "0.3", "--top", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let meta = &json_lines(&out)[0]["metadata"];
    assert_eq!(meta["overrides"]["tau_orient"], 0.3);
    assert_eq!(meta["overrides"]["top"], 4);
    assert_eq!(meta["thresholds"]["tau_orient"], 0.3);
}

#[test]
fn profile_mismatch_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let bundle = write_ideal(dir.path(), &[grasp(100.0, 100.0, 0.0, 40.0)], 18, 227);
    let out = run(&["group", "--bundle", p(&bundle), "--profile", "ajd"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn encode_group_evaluate_pipeline() {
    let dir = TempDir::new().unwrap();
    let ann = dir.path().join("truth.jsonl");
    fs::write(
        &ann,
        "{\"image_id\":\"a\",\"x\":60,\"y\":60,\"theta_deg\":10,\"w\":50,\"h\":20}\n\
         {\"image_id\":\"a\",\"x\":150,\"y\":120,\"theta_deg\":-60,\"w\":40,\"h\":20}\n",
    )
    .unwrap();
    let bundle = dir.path().join("a.gktb");
    let out = run(&["encode", "--annotations", p(&ann), "--out", p(&bundle), "--mode", "ideal"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["group", "--bundle", p(&bundle), "--image-id", "a"]);
    assert_eq!(out.status.code(), Some(0));
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, &out.stdout).unwrap();
    let out = run(&["evaluate", "--pred", p(&pred), "--truth", p(&ann)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &json_lines(&out)[0];
    assert_eq!(report["total"], 1);
    assert_eq!(report["accuracy"], 1.0);
}

#[test]
fn evaluate_missing_file_exits_two() {
    let dir = TempDir::new().unwrap();
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, "{\"x\":1,\"y\":1,\"theta_deg\":0,\"w\":10}\n").unwrap();
    let out = run(&["evaluate", "--pred", p(&pred), "--truth", p(&dir.path().join("nope.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["group", "--bundle"]).status.code(), Some(1));
    assert_eq!(run(&["evaluate", "--policy", "best"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn score_ranks_open_grasp_first() {
    let dir = TempDir::new().unwrap();
    let (h, w) = (100, 100);
    let mut depth = Grid2D::filled(h, w, 1000.0f32);
    for r in 40..60 {
        for c in 45..55 {
            depth.set(r, c, 960.0);
        }
    }
    let depth_path = dir.path().join("d.gktb");
    write_planes(File::create(&depth_path).unwrap(), &[("depth", &depth)]).unwrap();
    let grasps = dir.path().join("g.jsonl");
    // the narrow vertical grasp lands its fingers on the block
    fs::write(
        &grasps,
        "{\"x\":50,\"y\":50,\"theta_deg\":90,\"w\":14,\"h\":10}\n\
         {\"x\":50,\"y\":50,\"theta_deg\":0,\"w\":12,\"h\":10}\n",
    )
    .unwrap();
    let gripper = dir.path().join("gripper.json");
    fs::write(&gripper, "{\"finger_thickness_mm\":6,\"finger_length_mm\":8}").unwrap();
    let out = run(&["score", "--grasps", p(&grasps), "--depth", p(&depth_path), "--gripper", p(&gripper)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    assert_eq!(lines[0]["metadata"]["command"], "score");
    assert_eq!(lines[1]["input_rank"], 1);
    assert!(lines[1]["total"].as_f64().unwrap() > lines[2]["total"].as_f64().unwrap());
}

#[test]
fn seeded_simulation_is_reproducible() {
    let args = ["simulate-binpick", "--seed", "9", "--objects", "4", "--trials", "2", "--detector", "oracle"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let lines = json_lines(&a);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["summary"]["success_rate_percent"], 100.0);
}

#[test]
fn always_fail_stops_after_five() {
    let out = run(&["simulate-binpick", "--detector", "always-fail"]);
    assert_eq!(out.status.code(), Some(0));
    let trial = &json_lines(&out)[1];
    assert_eq!(trial["attempts"].as_array().unwrap().len(), 5);
    assert_eq!(trial["stop"], "consecutive-failures");
}

#[test]
fn filter_writes_report() {
    let dir = TempDir::new().unwrap();
    let (ann, masks) = (dir.path().join("ann"), dir.path().join("masks"));
    fs::create_dir_all(&ann).unwrap();
    fs::create_dir_all(&masks).unwrap();
    // object pixels lie inside the 20x10 grasp centred at (32, 32)
    let mut full = Grid2D::zeros(64, 64);
    for r in 29..35 {
        for c in 24..40 {
            full.set(r, c, 1.0f32);
        }
    }
    let mut corner = Grid2D::zeros(64, 64);
    corner.set(0, 0, 1.0f32);
    for (id, mask) in [("img1", &full), ("img2", &corner)] {
        write_planes(File::create(masks.join(format!("{id}.gktb"))).unwrap(), &[("mask", mask)]).unwrap();
        fs::write(ann.join(format!("{id}.jsonl")), "{\"x\":32,\"y\":32,\"theta_deg\":0,\"w\":20,\"h\":10}\n").unwrap();
    }
    let report = dir.path().join("report.json");
    let out = run(&["filter-jacquard", "--annotations", p(&ann), "--masks", p(&masks), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["kept"], 1);
    assert_eq!(v["removed"], 1);
    assert_eq!(v["records"][0]["imageId"], "img1");
    assert_eq!(v["records"][0]["decision"], "keep");
}

#[test]
fn gradcheck_and_selftest_pass() {
    let out = run(&["gradcheck", "--points", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let v = &json_lines(&out)[0];
    assert_eq!(v["losses"].as_array().unwrap().len(), 5);
    let out = run(&["selftest", "--sets", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn gradcheck_rejects_step_out_of_range() {
    let out = run(&["gradcheck", "--points", "5", "--loss", "detection", "--step", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}
