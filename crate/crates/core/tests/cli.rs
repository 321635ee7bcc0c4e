mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use agro::sim::MissionSummary;
use agro::yieldkit::io::{format_labels, Manifest, ManifestEntry, Operation};
use agro::yieldkit::{BoundingBox, EvalReport};
use common::fixture;
use serde_json::Value;
use tempfile::TempDir;

fn agro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agro")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_fixture(out: &Path, extra: &[&str]) -> Output {
    let world = fixture("orchard.json");
    let mission = fixture("mission_two_rows.json");
    let mut args = vec!["run", "--world", path(&world), "--mission", path(&mission), "--start", "3,10.5,0", "--out", path(out)];
    args.extend_from_slice(extra);
    agro(&args)
}

fn summary(out: &Path) -> MissionSummary {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_completes_and_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let o = run_fixture(dir.path(), &["--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["telemetry.ndjson", "geotags.csv", "geotags.geojson", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let s = summary(dir.path());
    assert_eq!((s.waypoints_hit, s.waypoints_total, s.captures), (2, 2, 2));
    assert!(s.min_clearance_m.unwrap() > 0.0);
    assert!(s.completion_time_s.is_some());
    let log_lines = fs::read_to_string(dir.path().join("telemetry.ndjson")).unwrap().lines().count();
    assert_eq!(log_lines, s.frames);
    // stdout carries the same summary.
    let printed: MissionSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, s);
    let csv = fs::read_to_string(dir.path().join("geotags.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus one row per capture");
}

#[test]
fn different_seeds_change_the_noise_not_the_outcome() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run_fixture(a.path(), &["--seed", "1"]).status.code(), Some(0));
    assert_eq!(run_fixture(b.path(), &["--seed", "2"]).status.code(), Some(0));
    let log = |d: &TempDir| fs::read(d.path().join("telemetry.ndjson")).unwrap();
    assert_ne!(log(&a), log(&b));
    assert_eq!(summary(a.path()).captures, summary(b.path()).captures);
}

#[test]
fn missing_world_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let mission = fixture("mission_two_rows.json");
    let o = agro(&["run", "--world", "/nonexistent/world.json", "--mission", path(&mission), "--seed", "1", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn seed_is_mandatory() {
    let dir = TempDir::new().unwrap();
    let o = run_fixture(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(agro(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(agro(&["fly"]).status.code(), Some(1));
    assert_eq!(agro(&["--help"]).status.code(), Some(0));
}

#[test]
fn low_battery_fails_prearm_and_names_it() {
    let dir = TempDir::new().unwrap();
    let o = run_fixture(dir.path(), &["--seed", "1", "--battery-v", "9.0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("pre-arm failed") && err.contains("battery"), "{err}");
}

#[test]
fn rc_loss_ends_in_hold_with_domain_exit() {
    let dir = TempDir::new().unwrap();
    let o = run_fixture(dir.path(), &["--seed", "1", "--rc-loss-at", "8"]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(dir.path());
    assert_eq!(s.final_mode, Some(agro::mission::MissionState::Hold));
    assert!(s.completion_time_s.is_none());
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 3, "start": [3.0, 10.5, 0.0]}"#).unwrap();
    let from_file = dir.path().join("file");
    let from_flag = dir.path().join("flag");
    let reference = dir.path().join("reference");
    assert_eq!(run_fixture(&from_file, &["--config", path(&cfg)]).status.code(), Some(0));
    assert_eq!(run_fixture(&from_flag, &["--config", path(&cfg), "--seed", "5"]).status.code(), Some(0));
    assert_eq!(run_fixture(&reference, &["--seed", "5"]).status.code(), Some(0));
    let log = |d: &Path| fs::read(d.join("telemetry.ndjson")).unwrap();
    assert_eq!(log(&from_flag), log(&reference));
    assert_ne!(log(&from_file), log(&reference));

    fs::write(&cfg, r#"{"seed": 3, "colour": "red"}"#).unwrap();
    let o = run_fixture(&from_file, &["--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn replay_reproduces_the_live_summary() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_fixture(dir.path(), &["--seed", "11"]).status.code(), Some(0));
    let log = dir.path().join("telemetry.ndjson");
    let out = dir.path().join("replayed.json");
    let o = agro(&["replay", "--log", path(&log), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(out).unwrap(), fs::read(dir.path().join("summary.json")).unwrap());

    let empty = dir.path().join("empty.ndjson");
    fs::write(&empty, "").unwrap();
    let o = agro(&["replay", "--log", path(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    let s: MissionSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s.frames, 0);
}

// ---- eval ----

/// A 7×7 lattice cell as a box; cells never overlap.
fn cell(k: usize) -> BoundingBox {
    let (r, c) = ((k / 7) as f64, (k % 7) as f64);
    BoundingBox::from_corners(c / 7.0 + 0.01, r / 7.0 + 0.01, (c + 1.0) / 7.0 - 0.01, (r + 1.0) / 7.0 - 0.01).unwrap()
}

fn write_dir(dir: &Path, files: &[(String, Vec<BoundingBox>)]) {
    fs::create_dir_all(dir).unwrap();
    for (id, boxes) in files {
        fs::write(dir.join(format!("{id}.txt")), format_labels(boxes)).unwrap();
    }
}

fn eval(gt: &Path, pred: &Path) -> (Output, Option<EvalReport>) {
    let o = agro(&["eval", "--gt", path(gt), "--pred", path(pred)]);
    let report = serde_json::from_slice(&o.stdout).ok();
    (o, report)
}

#[test]
fn eval_reproduces_the_published_counts() {
    // 50 images × 47 boxes = 2350 ground-truth boxes. Predictions copy all
    // but 213 of them and add 42 strays on the two spare lattice cells.
    let dir = TempDir::new().unwrap();
    let (mut gt, mut pred) = (vec![], vec![]);
    let mut dropped = 0;
    for i in 0..50 {
        let id = format!("tree_{i:02}");
        let boxes: Vec<BoundingBox> = (0..47).map(cell).collect();
        let drop = if dropped < 213 { (213 - dropped).min(5) } else { 0 };
        dropped += drop;
        let mut p: Vec<BoundingBox> = boxes[drop..].iter().map(|b| b.with_confidence(0.9)).collect();
        if i < 21 {
            p.extend([cell(47).with_confidence(0.6), cell(48).with_confidence(0.6)]);
        }
        gt.push((id.clone(), boxes));
        pred.push((id, p));
    }
    assert_eq!(dropped, 213);
    write_dir(&dir.path().join("gt"), &gt);
    write_dir(&dir.path().join("pred"), &pred);
    let (o, report) = eval(&dir.path().join("gt"), &dir.path().join("pred"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report.unwrap();
    assert_eq!((r.confusion.tp, r.confusion.fn_, r.confusion.fp), (2137, 213, 42));
    assert!((r.accuracy_pct.unwrap() - 89.34).abs() <= 0.005);
    assert!(stderr(&o).contains("accuracy 89.34%"), "{}", stderr(&o));
}

#[test]
fn eval_with_no_predictions_misses_everything() {
    let dir = TempDir::new().unwrap();
    write_dir(&dir.path().join("gt"), &[("a".into(), vec![cell(0), cell(1)]), ("b".into(), vec![cell(5)])]);
    fs::create_dir_all(dir.path().join("pred")).unwrap();
    let (o, report) = eval(&dir.path().join("gt"), &dir.path().join("pred"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let c = report.unwrap().confusion;
    assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 3));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let gt: Vec<(String, Vec<BoundingBox>)> = (0..4).map(|i| (format!("im{i}"), (i..i + 5).map(cell).collect())).collect();
    let pred: Vec<(String, Vec<BoundingBox>)> = gt.iter().map(|(id, b)| (id.clone(), b.iter().map(|b| b.with_confidence(1.0)).collect())).collect();
    write_dir(&dir.path().join("gt"), &gt);
    write_dir(&dir.path().join("pred"), &pred);
    let (_, report) = eval(&dir.path().join("gt"), &dir.path().join("pred"));
    let r = report.unwrap();
    assert_eq!(r.accuracy_pct, Some(100.0));
    assert_eq!(r.ap50, Some(1.0));
}

#[test]
fn eval_input_errors() {
    let dir = TempDir::new().unwrap();
    write_dir(&dir.path().join("gt"), &[("a".into(), vec![cell(0)])]);
    write_dir(&dir.path().join("pred"), &[("z".into(), vec![cell(0).with_confidence(0.9)])]);
    let (o, _) = eval(&dir.path().join("gt"), &dir.path().join("pred"));
    assert_eq!(o.status.code(), Some(2), "no overlapping ids");
    let (o, _) = eval(&dir.path().join("gt"), &dir.path().join("missing"));
    assert_eq!(o.status.code(), Some(1));
    fs::write(dir.path().join("pred/a.txt"), "0 0.5 0.5 0.1 0.1\n").unwrap();
    let (o, _) = eval(&dir.path().join("gt"), &dir.path().join("pred"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a.txt:1"), "{}", stderr(&o));
}

// ---- prep ----

fn write_dataset(dir: &Path, images: &[(String, u32, u32, Vec<BoundingBox>)]) {
    fs::create_dir_all(dir.join("labels")).unwrap();
    let entries = images
        .iter()
        .map(|(id, w, h, boxes)| {
            fs::write(dir.join("labels").join(format!("{id}.txt")), format_labels(boxes)).unwrap();
            ManifestEntry { image_id: id.clone(), width_px: *w, height_px: *h, split: None, source: None, augment: None }
        })
        .collect();
    let m = Manifest { images: entries, ..Default::default() };
    fs::write(dir.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
}

fn read_manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_boxes(dir: &Path, id: &str) -> Vec<BoundingBox> {
    let p = dir.join("labels").join(format!("{id}.txt"));
    agro::yieldkit::io::parse_labels(&fs::read_to_string(&p).unwrap(), false, &p).unwrap()
}

#[test]
fn prep_tiles_a_full_frame_and_remaps_boxes() {
    let dir = TempDir::new().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    // Boxes inside one tile, across a vertical seam, and across all four
    // tiles meeting at (3050, 3472).
    let px = |x0: f64, y0: f64, x1: f64, y1: f64| BoundingBox::from_corners(x0 / 9152.0, y0 / 6944.0, x1 / 9152.0, y1 / 6944.0).unwrap();
    let boxes = vec![px(100.0, 100.0, 300.0, 260.0), px(6000.0, 500.0, 6200.0, 700.0), px(2950.0, 3400.0, 3150.0, 3600.0)];
    write_dataset(&input, &[("frame".into(), 9152, 6944, boxes.clone())]);
    let o = agro(&["prep", "--input", path(&input), "--out", path(&out), "--tile", "3x2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_manifest(&out);
    assert_eq!(m.images.len(), 6);
    assert_eq!(m.operations, vec![Operation::Tile { grid: (3, 2) }]);
    let mut total_area = 0u64;
    for e in &m.images {
        total_area += e.width_px as u64 * e.height_px as u64;
        assert!(e.width_px as u64 * e.height_px as u64 <= 12_000_000);
        assert_eq!(e.source.as_deref(), Some("frame"));
    }
    assert_eq!(total_area, 9152 * 6944);
    // Oracle: intersect every box with every tile rectangle in pixels.
    let xs = [0.0, 3050.0, 6101.0, 9152.0];
    let ys = [0.0, 3472.0, 6944.0];
    for row in 0..2 {
        for col in 0..3 {
            let (tx0, ty0, tx1, ty1) = (xs[col], ys[row], xs[col + 1], ys[row + 1]);
            let mut want = vec![];
            for b in &boxes {
                let [x0, y0, x1, y1] = b.to_pixels(9152, 6944);
                let (cx0, cy0, cx1, cy1) = (x0.max(tx0), y0.max(ty0), x1.min(tx1), y1.min(ty1));
                if cx1 > cx0 && cy1 > cy0 {
                    want.push([cx0 - tx0, cy0 - ty0, cx1 - tx0, cy1 - ty0]);
                }
            }
            let got = read_boxes(&out, &format!("frame_r{row}c{col}"));
            assert_eq!(got.len(), want.len(), "tile r{row}c{col}");
            for (g, w) in got.iter().zip(&want) {
                let p = g.to_pixels((tx1 - tx0) as u32, (ty1 - ty0) as u32);
                for k in 0..4 {
                    assert!((p[k] - w[k]).abs() < 1e-6, "tile r{row}c{col}: {p:?} vs {w:?}");
                }
            }
        }
    }
}

fn dataset_145(dir: &Path) {
    let images: Vec<_> = (0..145)
        .map(|i| {
            let n = 1 + i % 60;
            (format!("tree_{i:03}"), 3050, 3472, (0..n.min(49)).map(cell).collect())
        })
        .collect();
    write_dataset(dir, &images);
}

#[test]
fn prep_emits_one_negative_per_positive_image() {
    let dir = TempDir::new().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    dataset_145(&input);
    let o = agro(&["prep", "--input", path(&input), "--out", path(&out), "--negatives"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_manifest(&out);
    let negatives: Vec<_> = m.images.iter().filter(|e| e.image_id.ends_with("_neg")).collect();
    assert_eq!(negatives.len(), 145);
    assert!(matches!(&m.operations[0], Operation::Negatives { emitted: 145, skipped } if skipped.is_empty()));
    for e in negatives {
        assert!(read_boxes(&out, &e.image_id).is_empty());
    }
}

#[test]
fn prep_split_is_reproducible_and_complete() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    dataset_145(&input);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = agro(&["prep", "--input", path(&input), "--out", path(&out), "--split", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read_to_string(out.join("manifest.json")).unwrap()
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let m: Manifest = serde_json::from_str(&a).unwrap();
    let count = |s: &str| m.images.iter().filter(|e| e.split.as_deref() == Some(s)).count();
    assert_eq!(count("train") + count("val") + count("test"), 145);
    assert_eq!(vec![count("train"), count("val"), count("test")], agro::yieldkit::split::apportion(145, &[0.8, 0.1, 0.1]));
    assert_eq!(m.seed, Some(9));
}

#[test]
fn prep_rejects_bad_annotations_with_location() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    write_dataset(&input, &[("a".into(), 600, 400, vec![cell(0)])]);
    fs::write(input.join("labels/a.txt"), "0 0.5 0.5 0.1 0.1\n0 0.5 0.5 0.1\n").unwrap();
    let o = agro(&["prep", "--input", path(&input), "--out", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a.txt:2"), "{}", stderr(&o));
    let o = agro(&["prep", "--input", path(&dir.path().join("nowhere")), "--out", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_runs_headless_for_a_fixed_duration() {
    let dir = TempDir::new().unwrap();
    let world = fixture("orchard.json");
    let o = agro(&["serve", "--world", path(&world), "--seed", "1", "--telemetry-port", "0", "--duration", "3", "--fast", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let frames = agro::telemetry::read_log(dir.path().join("telemetry.ndjson")).unwrap();
    assert_eq!(frames.len(), 30);
    assert!(frames.iter().all(|f| !f.armed));
    let v: Value = serde_json::from_str(fs::read_to_string(dir.path().join("telemetry.ndjson")).unwrap().lines().next().unwrap()).unwrap();
    assert!(v.get("mode").is_some());
}
