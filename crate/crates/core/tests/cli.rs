use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panotrack::metrics::EvalReport;
use panotrack::tracker::TrackFrame;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_panotrack"));
    c.env("RUST_LOG", "warn");
    c
}

fn scenarios() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios"].iter().collect()
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_run_config(dir: &Path, strategy: &str, scenario: &str) -> PathBuf {
    let p = dir.join(format!("run_{strategy}.json"));
    let body = serde_json::json!({ "strategy": strategy, "scenario": scenarios().join(scenario) });
    fs::write(&p, body.to_string()).unwrap();
    p
}

fn track(dir: &Path, strategy: &str, scenario: &str) -> PathBuf {
    let out = dir.join(format!("track_{strategy}_{scenario}"));
    let cfg = write_run_config(dir, strategy, scenario);
    run(bin().args(["track", "--config"]).arg(&cfg).arg("--out").arg(&out));
    out
}

fn eval(dir: &Path, run_dir: &Path) -> EvalReport {
    let out = dir.join("eval").join(run_dir.file_name().unwrap());
    run(bin()
        .args(["eval", "--gt"])
        .arg(run_dir.join("ground_truth.jsonl"))
        .arg("--tracks")
        .arg(run_dir.join("tracks.jsonl"))
        .args(["--bin-width", "1"])
        .arg("--out")
        .arg(&out));
    assert!(out.join("error_vs_distance.csv").exists());
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn target_ids(run_dir: &Path) -> Vec<u64> {
    let mut ids: Vec<u64> = fs::read_to_string(run_dir.join("tracks.jsonl"))
        .unwrap()
        .lines()
        .flat_map(|l| serde_json::from_str::<TrackFrame>(l).unwrap().tracks)
        .filter(|t| t.is_target)
        .map(|t| t.id)
        .collect();
    ids.dedup();
    ids
}

#[test]
fn simulate_circle_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("circle_2m.json");
    for name in ["a", "b"] {
        run(bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(name)));
    }
    let gt = fs::read_to_string(dir.path().join("a/ground_truth.jsonl")).unwrap();
    assert_eq!(gt.lines().count(), 300);
    for f in ["ground_truth.jsonl", "frames.jsonl", "scenario.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }

    run(bin().args(["simulate", "--config"]).arg(&cfg).args(["--seed", "9", "--out"]).arg(dir.path().join("c")));
    // world poses do not depend on the seed, only the detector noise does
    assert_eq!(fs::read(dir.path().join("a/frames.jsonl")).unwrap(), fs::read(dir.path().join("c/frames.jsonl")).unwrap());
    let snap: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c/scenario.json")).unwrap()).unwrap();
    assert_eq!(snap["seed"], 9);
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["simulate", "--config", "/nonexistent.json", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"fps\": 30.0,\n  \"duration\": \"long\"\n}\n").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));

    let invalid = dir.path().join("invalid.json");
    fs::write(&invalid, r#"{"fps": -1.0, "duration": 1.0, "agents": []}"#).unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&invalid).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let both = dir.path().join("both.json");
    fs::write(&both, r#"{"scenario": "a.json", "detections": "b.jsonl"}"#).unwrap();
    let out = bin().args(["track", "--config"]).arg(&both).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dets = dir.path().join("dets.jsonl");
    fs::write(&dets, "{\"frame\":0,\"t\":0.0,\"detections\":[]}\n\n{\"frame\":1,\"t\":\"x\"}\n").unwrap();
    let cfg = dir.path().join("replay.json");
    fs::write(&cfg, r#"{"detections": "dets.jsonl"}"#).unwrap();
    let out = bin().args(["track", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dets.jsonl:3:"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn tiles_and_roi_track_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let tiles = track(dir.path(), "tiles", "circle_2m.json");
    let roi = track(dir.path(), "roi", "circle_2m.json");
    for d in [&tiles, &roi] {
        let r = eval(dir.path(), d);
        assert_eq!((r.m1, r.m2), (1.0, 1.0));
        assert!(r.m3.unwrap() < 0.3);
    }
    assert_eq!(target_ids(&tiles).len(), target_ids(&roi).len());

    let again = dir.path().join("again");
    run(bin()
        .args(["track", "--config"])
        .arg(write_run_config(dir.path(), "tiles", "circle_2m.json"))
        .arg("--out")
        .arg(&again));
    for f in ["detections.jsonl", "tracks.jsonl", "ground_truth.jsonl"] {
        assert_eq!(fs::read(tiles.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn strategy_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_run_config(dir.path(), "tiles", "range_sweep.json");
    let out = dir.path().join("ff");
    run(bin().args(["track", "--config"]).arg(&cfg).args(["--strategy", "fullframe", "--out"]).arg(&out));
    let r = eval(dir.path(), &out);
    let far: Vec<f64> = r.error_vs_distance.iter().filter(|b| b.bin_center_m > 5.0).map(|b| b.miss_rate).collect();
    assert!(!far.is_empty() && far.iter().all(|&m| m == 1.0), "{far:?}");
}

#[test]
fn replay_of_detections_matches_live_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let live = track(dir.path(), "roi", "seam_crossing.json");
    let cfg = dir.path().join("replay.json");
    fs::write(&cfg, serde_json::json!({ "detections": live.join("detections.jsonl") }).to_string()).unwrap();
    let replay = dir.path().join("replay");
    run(bin().args(["track", "--config"]).arg(&cfg).arg("--out").arg(&replay));
    assert!(fs::read_to_string(live.join("tracks.jsonl")).unwrap() == fs::read_to_string(replay.join("tracks.jsonl")).unwrap());
}

#[test]
fn sensitivity_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s/sens.csv");
    run(bin().args(["sensitivity", "--distances", "1,2,4,8", "--out"]).arg(&out));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pixel_error_px,1m,2m,4m,8m"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 5.0, 10.0]);
    assert!(rows[0][1..].iter().all(|&v| v == 0.0));
    for r in &rows[1..] {
        assert!(r[1..].windows(2).all(|w| w[0] < w[1]));
    }
    assert!((rows[3][2] - 0.0799).abs() < 0.001);
}
