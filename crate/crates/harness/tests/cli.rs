use std::path::Path;
use std::process::Command;

fn rvae(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rvae"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RVAE_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &std::process::Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_train_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    ok(&rvae(&["generate", "--n", "200", "--output-dir", &p("gen")], dir.path()));
    for f in ["data.csv", "latents.csv", "truth.json", "metrics.csv", "summary.json"] {
        assert!(dir.path().join("gen").join(f).exists(), "{f}");
    }
    ok(&rvae(
        &["train", "--data", &p("gen/data.csv"), "--steps", "60", "--output-dir", &p("train")],
        dir.path(),
    ));
    let trace = std::fs::read_to_string(dir.path().join("train/metrics.csv")).unwrap();
    assert!(trace.starts_with("epoch,elbo,rec,reg,seed,build_id,config_hash\n"));
    ok(&rvae(
        &[
            "evaluate",
            "--checkpoint",
            &p("train/model.json"),
            "--reference",
            &p("gen/truth.json"),
            "--data",
            &p("gen/data.csv"),
            "--m",
            "64",
            "--output-dir",
            &p("eval"),
        ],
        dir.path(),
    ));
    let metrics = std::fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    let metric_names: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(metric_names, ["elbo", "rec", "reg", "w2"]);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&rvae(
            &[
                "consistency-study",
                "--manifold",
                "sphere:2",
                "--n",
                "100",
                "--log-sigma2=-4,-2",
                "--replicates",
                "1",
                "--restarts",
                "1",
                "--steps",
                "50",
                "--m",
                "32",
                "--seed",
                seed,
                "--jobs",
                "2",
                "--output-dir",
                out.to_str().unwrap(),
            ],
            dir.path(),
        ));
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn output_dir_falls_back_to_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_rvae"))
        .args(["generate", "--n", "10"])
        .current_dir(dir.path())
        .env("RVAE_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    ok(&out);
    assert!(target.join("metrics.csv").exists());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[w2]\nm = 0\n").unwrap();
    let out = rvae(&["compare-methods", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("w2.m"));

    std::fs::write(&cfg, "experiment = \"spd-study\"\n").unwrap();
    let out = rvae(&["closed-form-1d", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());

    let out = rvae(&["train", "--output-dir", "x"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset"));

    let out = rvae(&["generate", "--manifold", "torus:2"], dir.path());
    assert!(!out.status.success());
}
