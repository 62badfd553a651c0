use std::path::Path;
use std::process::{Command, Output};

fn accr(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_accr"));
    cmd.args(args).env_remove("ACCR_OUTPUT_DIR").env_remove("ACCR_DEVICE").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn prepare(dir: &Path) -> String {
    let data = dir.join("data");
    ok(accr(
        &[
            "prepare-data",
            "--task",
            "paired",
            "--size",
            "8",
            "--n-train",
            "8",
            "--n-test",
            "4",
            "--out",
            data.to_str().unwrap(),
        ],
        &[],
    ));
    data.to_string_lossy().into_owned()
}

const TINY: &[&str] = &["--epochs-constant", "1", "--epochs-decay", "1", "--batch-size", "4"];

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--variant", "cr", "--out", run.to_str().unwrap()];
    args.extend_from_slice(TINY);
    ok(accr(&args, &[]));
    assert!(run.join("metrics.jsonl").exists());
    assert!(run.join("checkpoints").read_dir().unwrap().count() == 2);
    let json = ok(accr(&["evaluate", "--run", run.to_str().unwrap(), "--data", &data], &[]));
    let metrics: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(metrics["mse"].as_f64().unwrap() >= 0.0);
    assert!(metrics["feature_distance"].as_f64().unwrap() >= 0.0);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path());
    let root = dir.path().join("root");
    let mut args = vec!["train", "--data", &data, "--seed", "3"];
    args.extend_from_slice(TINY);
    ok(accr(&args, &[("ACCR_OUTPUT_DIR", root.to_str().unwrap())]));
    assert!(root.join("accr-seed3").join("metrics.jsonl").exists());
}

#[test]
fn unknown_device_and_variant_fail() {
    let out = accr(&["report", "--dir", "."], &[("ACCR_DEVICE", "cuda")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cpu"));
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path());
    assert!(!accr(&["train", "--data", &data, "--variant", "nope"], &[]).status.success());
}

#[test]
fn plan_runs_resumes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan-out");
    let plan = format!(
        r#"
output_dir = "{}"
seeds = [0, 1]
variants = [
  {{ name = "baseline", delta = {{ variant = "baseline" }} }},
  {{ name = "accr", delta = {{ variant = "accr" }} }},
]

[task]
kind = "paired"
size = 8
n_train = 8
n_test = 4

[base]
epochs_constant = 1
epochs_decay = 1
batch_size = 4
generator = {{ in_channels = 3, out_channels = 3, width = 4, downsampling = 1, res_blocks = 1, norm = true }}
discriminator = {{ in_channels = 3, width = 4, strides = [2, 1], norm = true }}
"#,
        out.display()
    );
    let plan_path = dir.path().join("plan.toml");
    std::fs::write(&plan_path, plan).unwrap();
    let text = ok(accr(&["run-plan", "--plan", plan_path.to_str().unwrap()], &[]));
    assert!(text.contains("baseline") && text.contains("accr"), "{text}");
    let runs: Vec<_> = ["baseline", "accr"]
        .iter()
        .flat_map(|v| [0, 1].map(|s| out.join("runs").join(v).join(format!("seed-{s}")).join("report.json")))
        .collect();
    assert!(runs.iter().all(|p| p.exists()));
    assert!(out.join("summary.txt").exists() && out.join("summary.json").exists());

    let before: Vec<_> = runs.iter().map(|p| std::fs::metadata(p).unwrap().modified().unwrap()).collect();
    ok(accr(&["run-plan", "--plan", plan_path.to_str().unwrap()], &[]));
    let after: Vec<_> = runs.iter().map(|p| std::fs::metadata(p).unwrap().modified().unwrap()).collect();
    assert_eq!(before, after);

    let report = ok(accr(&["report", "--dir", out.to_str().unwrap()], &[]));
    assert_eq!(report, std::fs::read_to_string(out.join("summary.txt")).unwrap());
}

#[test]
fn report_on_empty_directory_says_no_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(accr(&["report", "--dir", dir.path().to_str().unwrap()], &[]));
    assert_eq!(text, "no results\n");
}
