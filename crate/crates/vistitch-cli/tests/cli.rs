//! End-to-end tests that drive the compiled binary the way a user would:
//! write a config, run subcommands, inspect the artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_vistitch");

/// A small, fast experiment: easy task, identical environments, tiny
/// networks, one seed. Everything downstream of this config is
/// deterministic.
const SMALL_CONFIG: &str = "\
[run]
output_dir = \"run\"
log_level = \"warn\"

[experiment]
id = \"cli-small\"
task = \"reach\"
variant = \"disent\"
preset = \"identity\"
image_height = 12
image_width = 12
demo_count = 6
anchor_count = 4
latent_dim = 8
gmm_modes = 2
epochs = 3
batch_size = 16
learning_rate = 0.001
eval_episodes = 20
seeds = [0]
";

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap())
        .unwrap_or_else(|e| panic!("bad json {}: {e}", path.display()))
}

#[test]
fn rejects_unknown_config_keys_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_CONFIG.replace("demo_count", "demo_cuont");
    let config = write_config(dir.path(), &bad);
    let out = run_cli(&["collect", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("demo_cuont"), "stderr: {stderr}");
}

#[test]
fn stage_commands_fail_loudly_when_prerequisites_are_missing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    // Replay before collect: the missing dataset must name the fix.
    let out = run_cli(&["replay", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("collect"), "stderr: {stderr}");
}

#[test]
fn collect_is_deterministic_and_preview_matches_the_golden_frame() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let preview_a = dir_a.path().join("preview.pgm");
    for (dir, preview) in [(&dir_a, Some(&preview_a)), (&dir_b, None)] {
        let config = write_config(dir.path(), SMALL_CONFIG);
        let mut args = vec!["collect", "--config", config.to_str().unwrap()];
        let preview_str;
        if let Some(p) = preview {
            preview_str = p.to_str().unwrap().to_string();
            args.push("--preview");
            args.push(&preview_str);
        }
        assert_ok(&run_cli(&args));
    }
    let bin_a = std::fs::read(dir_a.path().join("run/datasets/seed0_source.bin")).unwrap();
    let bin_b = std::fs::read(dir_b.path().join("run/datasets/seed0_source.bin")).unwrap();
    assert_eq!(bin_a, bin_b, "same config produced different datasets");

    let summary = read_json(&dir_a.path().join("run/collect_summary.json"));
    assert_eq!(summary["demo_count"], 6);
    assert_eq!(summary["seeds"][0]["trajectories"], 6);
    assert!(summary["seeds"][0]["steps"].as_u64().unwrap() > 0);

    let golden_path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/preview_golden.pgm");
    let preview = std::fs::read(&preview_a).unwrap();
    assert!(preview.starts_with(b"P5\n12 12\n255\n"));
    let golden = std::fs::read(&golden_path).unwrap();
    assert_eq!(preview, golden, "preview frame drifted from the golden file");
}

#[test]
fn replay_at_zero_deviation_reproduces_source_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&["collect", "--config", config.to_str().unwrap()]));
    assert_ok(&run_cli(&["replay", "--config", config.to_str().unwrap()]));

    let run = dir.path().join("run");
    let source = std::fs::read(run.join("datasets/seed0_source.bin")).unwrap();
    let replayed = std::fs::read(run.join("datasets/seed0_replayed.bin")).unwrap();
    // Identity preset and zero deviation: same states, same cameras.
    assert_eq!(source, replayed);

    let summary = read_json(&run.join("replay_summary.json"));
    assert_eq!(summary["deviation"], 0.0);
    assert_eq!(
        summary["seeds"][0]["source_steps"],
        summary["seeds"][0]["replayed_steps"]
    );
    assert_eq!(
        summary["seeds"][0]["source_checksum"],
        summary["seeds"][0]["replayed_checksum"]
    );
}

#[test]
fn anchors_select_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&["collect", "--config", config.to_str().unwrap()]));
    assert_ok(&run_cli(&["anchors", "--config", config.to_str().unwrap()]));
    let run = dir.path().join("run");
    assert!(run.join("anchors/seed0_index.json").exists());
    let summary = read_json(&run.join("anchor_summary.json"));
    assert_eq!(summary["requested"], 4);
    assert_eq!(summary["seeds"][0]["anchor_count"], 4);
}

#[test]
fn interrupted_training_resumed_matches_one_shot_training() {
    let one_shot = tempfile::tempdir().unwrap();
    let config = write_config(one_shot.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&["train", "--config", config.to_str().unwrap()]));

    let split = tempfile::tempdir().unwrap();
    let config2 = write_config(split.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&[
        "train",
        "--config",
        config2.to_str().unwrap(),
        "--stop-after",
        "1",
    ]));
    // Midway there is no stitched policy yet.
    assert!(!split.path().join("run/checkpoints/seed0_stitched.bin").exists());
    assert_ok(&run_cli(&["train", "--config", config2.to_str().unwrap(), "--resume"]));

    for name in ["policy1", "policy2", "stitched"] {
        let a = std::fs::read(one_shot.path().join(format!("run/checkpoints/seed0_{name}.bin")))
            .unwrap();
        let b = std::fs::read(split.path().join(format!("run/checkpoints/seed0_{name}.bin")))
            .unwrap();
        assert_eq!(a, b, "{name} checkpoint diverged after resume");
    }
    for name in ["policy1", "policy2"] {
        let a = std::fs::read_to_string(
            one_shot.path().join(format!("run/train_logs/seed0_{name}.csv")),
        )
        .unwrap();
        let b = std::fs::read_to_string(
            split.path().join(format!("run/train_logs/seed0_{name}.csv")),
        )
        .unwrap();
        assert_eq!(a, b, "{name} training log diverged after resume");
        // Header plus one row per epoch.
        assert_eq!(a.trim_end().lines().count(), 1 + 3);
    }
    let summary = read_json(&split.path().join("run/train_summary.json"));
    assert_eq!(summary["seeds"][0]["policy1"]["epochs_done"], 3);
    assert_eq!(summary["seeds"][0]["stitched"], true);
    assert_eq!(summary["variant"], "disent");

    // Resume without anything saved is an error, not a fresh start.
    let empty = tempfile::tempdir().unwrap();
    let config3 = write_config(empty.path(), SMALL_CONFIG);
    let out = run_cli(&["train", "--config", config3.to_str().unwrap(), "--resume"]);
    assert!(!out.status.success());
}

#[test]
fn full_pipeline_stitch_eval_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&["stitch-eval", "--config", config.to_str().unwrap()]));
    let run = dir.path().join("run");

    // results.csv schema and row count: 1 seed x 5 cells.
    let csv = std::fs::read_to_string(run.join("results.csv")).unwrap();
    let mut lines = csv.trim_end().lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment_id,policy_variant,env,seed,episodes,successes,rate"
    );
    assert_eq!(lines.count(), 5);

    // Identical environments: the stitched policy must track policy1.
    let results = read_json(&run.join("results.json"));
    let rate = |policy: &str, env: &str| {
        results["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["policy_variant"] == policy && r["env"] == env)
            .unwrap()["rate"]
            .as_f64()
            .unwrap()
    };
    let bound = 2.0 / (20f64).sqrt();
    assert!(
        (rate("stitched", "env3") - rate("policy1", "env3")).abs() <= bound,
        "self-transfer drifted: stitched {} vs policy1 {}",
        rate("stitched", "env3"),
        rate("policy1", "env3")
    );

    // Analyze twice: identical bytes, correct sample counts, all plots.
    assert_ok(&run_cli(&["analyze", "--config", config.to_str().unwrap()]));
    let analysis_dir = run.join("analysis");
    let first: Vec<(PathBuf, Vec<u8>)> = ["analysis.json", "seed0_distance.json"]
        .iter()
        .map(|f| {
            let p = analysis_dir.join(f);
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    assert_ok(&run_cli(&["analyze", "--config", config.to_str().unwrap()]));
    for (path, bytes) in &first {
        assert_eq!(
            &std::fs::read(path).unwrap(),
            bytes,
            "{} changed between identical runs",
            path.display()
        );
    }
    let distance = read_json(&analysis_dir.join("seed0_distance.json"));
    let n = distance["sample_count"].as_u64().unwrap();
    assert!(n > 0);
    assert_eq!(
        distance["per_sample_cos"].as_array().unwrap().len() as u64,
        n
    );
    for f in [
        "seed0_pca_policy1_slot2.svg",
        "seed0_pca_policy2_slot2.svg",
        "seed0_pca_policy1_slot2.json",
        "seed0_pca_policy2_slot2.json",
        "seed0_gradcam_slot1.pgm",
        "seed0_gradcam_slot2.pgm",
        "seed0_gradcam_slot1.svg",
        "seed0_gradcam_slot2.svg",
    ] {
        assert!(analysis_dir.join(f).exists(), "missing analysis artifact {f}");
    }

    // Report renders the stored results.
    assert_ok(&run_cli(&["report", "--config", config.to_str().unwrap()]));
    let md = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(md.contains("# Results: cli-small"));
    assert!(md.contains("| stitched | env3 |"));
    let svg = std::fs::read_to_string(run.join("report.svg")).unwrap();
    assert!(svg.contains(">stitched</text>"));
}

#[test]
fn sweep_over_one_value_equals_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&run_cli(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "deviation",
        "--values",
        "0.0",
    ]));
    let sweep_dir = dir.path().join("run/sweep_deviation");
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    // Header plus one row per (value x seed) = 1.
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("deviation,seed,"));

    // The aggregated row matches the single run's own results.
    let value_run = read_json(&sweep_dir.join("0_0/results.json"));
    let stitched = value_run["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["policy_variant"] == "stitched")
        .unwrap()["rate"]
        .as_f64()
        .unwrap();
    let last_field: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(last_field, stitched);

    let svg = std::fs::read_to_string(sweep_dir.join("sweep.svg")).unwrap();
    for series in ["policy1", "policy2", "stitched"] {
        assert!(svg.contains(&format!(">{series}</text>")), "missing series {series}");
    }
}

#[test]
fn environment_variables_override_output_dir_and_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = Command::new(BIN)
        .args(["collect", "--config", config.to_str().unwrap()])
        .env("VISTITCH_OUT_DIR", other.path())
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(other.path().join("datasets/seed0_source.bin").exists());
    assert!(!dir.path().join("run").exists());

    let out = Command::new(BIN)
        .args(["collect", "--config", config.to_str().unwrap()])
        .env("VISTITCH_PARALLELISM", "not-a-number")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
