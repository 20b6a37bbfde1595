use std::fs;
use std::process::Command;

const TINY: &str = "benchmark.n_tasks=2
benchmark.variations=2
arch.width=8
arch.depth=2
sac.batch_size=16
replay.capacity=1000
replay.warmup=20
run.total_env_steps=100
run.eval_every=50
run.eval_episodes=1
run.probe_batch=16
";

fn mtrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtrl"))
}

#[test]
fn run_writes_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out_dir = tmp.path().join("out");
    let out = mtrl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--set", "run.seed=3"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("run.seed=3\n"));
    assert!(manifest.contains("status=completed\n"));
    let csv = fs::read_to_string(out_dir.join("run.csv")).unwrap();
    assert!(csv.starts_with("step,seed,task_id,success_rate,iqm_success,"));
}

#[test]
fn unknown_key_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "sac.not_a_knob=1\n").unwrap();
    let out = mtrl().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_knob"));
}

#[test]
fn sweep_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("base.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out_dir = tmp.path().join("sweep");
    let out = mtrl()
        .args([
            "sweep",
            "--preset",
            "width_scaling",
            "--seeds",
            "2",
            "--steps",
            "60",
            "--widths",
            "4,8",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("SimpleFF-w4") && stdout.contains("SimpleFF-w8"));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    fs::remove_file(out_dir.join("summary.csv")).unwrap();

    let out = mtrl()
        .args(["report", "--in"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(out_dir.join("summary.csv")).unwrap(),
        summary
    );
    assert!(out_dir.join("fig_params_tasks_dormant.csv").exists());
}

#[test]
fn unknown_preset_is_rejected() {
    let out = mtrl()
        .args(["sweep", "--preset", "bogus", "--steps", "1", "--out", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
