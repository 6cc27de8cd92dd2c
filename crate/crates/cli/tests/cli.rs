use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shail_cli::render::View;
use shail_core::geometry::Vec2;
use shail_core::scenario::parse_tracks;
use shail_core::simulator::parse_replay_log;

const SCENE: &str = r#"
seed = 3
[data.synthetic]
seed = 7
max_vehicles = 6
duration = 40.0
[train.shail]
steps_per_iter = 256
n_workers = 2
hidden = [16]
[train.shail.disc]
hidden = [16]
[train.gail]
steps_per_iter = 256
n_workers = 2
hidden = [16]
[train.gail.disc]
hidden = [16]
[eval]
n_episodes = 6
"#;

fn shail(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shail"))
        .current_dir(dir)
        .env_remove("SHAIL_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SCENE).unwrap();
    dir
}

fn single_error_line(out: &Output, code: &str) {
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{code}]: ")), "{err}");
}

#[test]
fn gen_synthetic_is_seeded_and_reparses() {
    let d = workspace();
    for name in ["a.csv", "b.csv"] {
        ok(&shail(
            d.path(),
            &["gen-synthetic", "--seed", "7", "--max-vehicles", "8", "--out", name],
        ));
    }
    let a = fs::read_to_string(d.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.path().join("b.csv")).unwrap());
    assert_eq!(parse_tracks(&a).unwrap().tracks.len(), 8);

    ok(&shail(d.path(), &["gen-synthetic", "--arrival-rate", "0", "--out", "empty.csv"]));
    let empty = fs::read_to_string(d.path().join("empty.csv")).unwrap();
    assert!(parse_tracks(&empty).unwrap().tracks.is_empty());
}

#[test]
fn output_root_variable_relocates_outputs() {
    let d = workspace();
    let root = d.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_shail"))
        .current_dir(d.path())
        .env("SHAIL_OUTPUT_ROOT", &root)
        .args(["gen-synthetic", "--max-vehicles", "3", "--out", "data/x.csv"])
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("data/x.csv").exists());
    assert!(!d.path().join("data/x.csv").exists());
}

#[test]
fn zero_iterations_writes_initial_checkpoint_only() {
    let d = workspace();
    ok(&shail(
        d.path(),
        &[
            "train",
            "--config",
            "run.toml",
            "--kind",
            "shail",
            "--iterations",
            "0",
            "--out",
            "r0",
        ],
    ));
    let mut cks: Vec<String> = fs::read_dir(d.path().join("r0/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    cks.sort();
    assert_eq!(cks, ["iter_00000.json", "latest.json"]);
    assert_eq!(fs::read_to_string(d.path().join("r0/metrics.jsonl")).unwrap_or_default(), "");
    // the stored config is the resolved one and loads back
    let stored = fs::read_to_string(d.path().join("r0/config.toml")).unwrap();
    assert!(shail_core::config::RunConfig::from_toml(&stored).is_ok());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = workspace();
    for kind in ["gail", "shail"] {
        let full = format!("{kind}_full");
        let split = format!("{kind}_split");
        ok(&shail(
            d.path(),
            &["train", "--config", "run.toml", "--kind", kind, "--iterations", "4", "--out", &full],
        ));
        ok(&shail(
            d.path(),
            &[
                "train",
                "--config",
                "run.toml",
                "--kind",
                kind,
                "--iterations",
                "2",
                "--out",
                &split,
            ],
        ));
        ok(&shail(
            d.path(),
            &[
                "train",
                "--config",
                "run.toml",
                "--kind",
                kind,
                "--iterations",
                "4",
                "--out",
                &split,
                "--resume",
            ],
        ));
        let read = |run: &str, f: &str| fs::read(d.path().join(run).join(f)).unwrap();
        assert_eq!(read(&full, "metrics.jsonl"), read(&split, "metrics.jsonl"), "{kind}");
        assert_eq!(
            read(&full, "checkpoints/latest.json"),
            read(&split, "checkpoints/latest.json"),
            "{kind}"
        );
    }
}

#[test]
fn reruns_are_bit_identical() {
    let d = workspace();
    for run in ["x", "y"] {
        ok(&shail(
            d.path(),
            &["train", "--config", "run.toml", "--kind", "hail", "--iterations", "2", "--out", run],
        ));
        ok(&shail(
            d.path(),
            &[
                "evaluate",
                "--config",
                "run.toml",
                "--kind",
                "idm",
                "--seeds",
                "1,2",
                "--out",
                &format!("e{run}"),
            ],
        ));
    }
    let read = |p: &str| fs::read(d.path().join(p)).unwrap();
    assert_eq!(read("x/metrics.jsonl"), read("y/metrics.jsonl"));
    for f in ["summary.json", "summary.txt", "idm_seed1.json", "idm_seed2.json"] {
        assert_eq!(read(&format!("ex/{f}")), read(&format!("ey/{f}")), "{f}");
    }
}

#[test]
fn invalid_kind_is_a_usage_error() {
    let d = workspace();
    let out = shail(d.path(), &["train", "--kind", "ppo", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
    single_error_line(&out, "USAGE");
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = workspace();
    fs::write(d.path().join("bad.toml"), format!("{SCENE}\n[train.bc]\nepohcs = 3\n")).unwrap();
    let out = shail(d.path(), &["train", "--config", "bad.toml", "--kind", "bc", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    single_error_line(&out, "CONFIG");
}

#[test]
fn expert_evaluation_is_perfect_and_tabulated() {
    let d = workspace();
    let table = ok(&shail(
        d.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--kind",
            "expert_replay",
            "--seeds",
            "0,1,2,3,4",
            "--out",
            "ev",
        ],
    ));
    assert!(table.contains("expert_replay"), "{table}");
    let rows: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("ev/summary.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    for seed in 0..5 {
        let r: serde_json::Value =
            serde_json::from_slice(&fs::read(d.path().join(format!("ev/expert_replay_seed{seed}.json"))).unwrap()).unwrap();
        assert_eq!(r["success_rate"], 1.0);
        assert_eq!(r["rmse_10s"], 0.0);
        assert_eq!(r["mean_abs_dv"], 0.0);
        assert_eq!(r["accel_jsd"], 0.0);
    }
}

#[test]
fn missing_checkpoint_is_a_clear_error() {
    let d = workspace();
    let out = shail(
        d.path(),
        &["evaluate", "--config", "run.toml", "--checkpoint", "nope.json", "--out", "ev"],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.json"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

/// Mean of the `points` attribute of the `ego-box` polygon.
fn ego_box_center(svg: &str) -> (f64, f64) {
    let line = svg.lines().find(|l| l.contains(r#"id="ego-box""#)).unwrap();
    let pts = line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    let xy: Vec<(f64, f64)> = pts
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let n = xy.len() as f64;
    (xy.iter().map(|p| p.0).sum::<f64>() / n, xy.iter().map(|p| p.1).sum::<f64>() / n)
}

#[test]
fn render_draws_one_frame_per_record() {
    let d = workspace();
    ok(&shail(
        d.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--kind",
            "idm",
            "--episodes",
            "1",
            "--replays",
            "--out",
            "ev",
        ],
    ));
    let log_path = d.path().join("ev/replays/idm_seed3_ep0000.jsonl");
    let records = parse_replay_log(&fs::read_to_string(&log_path).unwrap()).unwrap();
    assert!(!records.is_empty());
    ok(&shail(
        d.path(),
        &["render", "--log", log_path.to_str().unwrap(), "--out", "frames"],
    ));
    let mut frames: Vec<_> = fs::read_dir(d.path().join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
    frames.sort();
    assert_eq!(frames.len(), records.len());
    for (rec, path) in records.iter().zip(&frames) {
        let svg = fs::read_to_string(path).unwrap();
        let (cx, cy) = ego_box_center(&svg);
        let (ex, ey) = View::new(rec.scene_bounds).to_image(Vec2::new(rec.ego.x, rec.ego.y));
        assert!((cx - ex).abs() < 1e-6 && (cy - ey).abs() < 1e-6, "{}", path.display());
        assert_eq!(svg.matches(r#"class="sector""#).count(), 5);
        assert_eq!(svg.matches(r#"class="vehicle""#).count(), rec.vehicles.len());
    }

    fs::write(d.path().join("empty.jsonl"), "").unwrap();
    let msg = ok(&shail(d.path(), &["render", "--log", "empty.jsonl", "--out", "none"]));
    assert!(msg.contains("rendered 0 frames"));
}
