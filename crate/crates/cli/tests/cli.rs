use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bgrpo(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgrpo"))
        .args(args)
        .env("BGRPO_OUTPUT_ROOT", root.join("runs"))
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sample_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Small train/eval pair plus a baseline run; returns (train, eval, run dir).
fn baseline_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let train = dir.join("train.feat");
    let eval = dir.join("eval.feat");
    ok(&bgrpo(dir, &["gen", "--dim", "8", "--per-class", "20", "--seed", "3", "--out", s(&train)]));
    ok(&bgrpo(dir, &["gen", "--dim", "8", "--per-class", "10", "--seed", "3", "--sample-seed", "4", "--out", s(&eval)]));
    let run = dir.join("base");
    ok(&bgrpo(
        dir,
        &[
            "train-baseline", "--train", s(&train), "--eval", s(&eval), "--epochs", "3", "--hidden", "16",
            "--split-fraction", "0.5", "--run-dir", s(&run),
        ],
    ));
    (train, eval, run)
}

#[test]
fn gen_writes_requested_samples_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.feat");
    let stdout = ok(&bgrpo(dir.path(), &["gen", "--classes", "6", "--dim", "32", "--per-class", "200", "--seed", "1", "--out", s(&out)]));
    assert!(stdout.contains("1200 samples"));
    assert_eq!(sample_lines(&out).len(), 1200);
    let spec = fs::read_to_string(dir.path().join("d.spec.toml")).unwrap();
    assert!(spec.contains("mean_seed = 1"), "{spec}");
}

#[test]
fn gen_second_view_shares_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.feat");
    ok(&bgrpo(dir.path(), &["gen", "--dim", "4", "--per-class", "5", "--out", s(&out), "--second-view"]));
    let ids = |p: &Path| -> Vec<String> {
        sample_lines(p).iter().map(|l| l.split('\t').next().unwrap().to_owned()).collect()
    };
    let view = dir.path().join("a_view2.feat");
    assert_eq!(ids(&out), ids(&view));
    assert_ne!(fs::read_to_string(&out).unwrap(), fs::read_to_string(&view).unwrap());
}

#[test]
fn gen_rejects_non_positive_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = bgrpo(dir.path(), &["gen", "--sigma", "0", "--out", s(&dir.path().join("x.feat"))]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn gen_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.feat");
    let b = dir.path().join("b.feat");
    ok(&bgrpo(dir.path(), &["gen", "--dim", "4", "--per-class", "5", "--name", "x", "--out", s(&a)]));
    ok(&bgrpo(dir.path(), &["gen", "--dim", "4", "--per-class", "5", "--name", "x", "--out", s(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn baseline_run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, run) = baseline_fixture(dir.path());
    for f in ["config.toml", "report.csv", "baseline.ckpt", "rl_half.feat", "warmup_half.feat"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(report.lines().nth(1).unwrap().starts_with("1,warmup,"));
    let config = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("warmup_epochs = 3"), "{config}");
    assert!(config.contains("hidden = 16"), "{config}");
}

#[test]
fn numbered_run_directories_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval, _) = baseline_fixture(dir.path());
    let args = ["train-baseline", "--train", s(&train), "--eval", s(&eval), "--epochs", "1", "--hidden", "4"];
    ok(&bgrpo(dir.path(), &args));
    ok(&bgrpo(dir.path(), &args));
    let runs = dir.path().join("runs");
    assert!(runs.join("baseline-001/baseline.ckpt").is_file());
    assert!(runs.join("baseline-002/baseline.ckpt").is_file());
    // Identical inputs give identical outputs.
    for f in ["baseline.ckpt", "report.csv", "config.toml"] {
        assert_eq!(
            fs::read(runs.join("baseline-001").join(f)).unwrap(),
            fs::read(runs.join("baseline-002").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_epochs_checkpoint_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval, _) = baseline_fixture(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&bgrpo(
            dir.path(),
            &["train-baseline", "--train", s(&train), "--eval", s(&eval), "--epochs", "0", "--seed", seed, "--run-dir", s(&out)],
        ));
        fs::read_to_string(out.join("baseline.ckpt")).unwrap()
    };
    assert_eq!(run("z1", "5"), run("z2", "5"));
    assert_ne!(run("z3", "5"), run("z4", "6"));
}

#[test]
fn missing_train_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let eval = dir.path().join("eval.feat");
    ok(&bgrpo(dir.path(), &["gen", "--dim", "4", "--per-class", "3", "--out", s(&eval)]));
    let out = bgrpo(dir.path(), &["train-baseline", "--train", "/nonexistent/train.feat", "--eval", s(&eval)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[io]:") && err.contains("/nonexistent/train.feat"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval, _) = baseline_fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[paths]\ntrain = \"{}\"\neval = \"{}\"\n[model]\nhidden = 8\n[train]\nwarmup_epochs = 2\nbatch_size = 16\n",
            s(&train),
            s(&eval)
        ),
    )
    .unwrap();
    let run = dir.path().join("cfg");
    ok(&bgrpo(dir.path(), &["train-baseline", "--config", s(&cfg), "--epochs", "1", "--run-dir", s(&run)]));
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("warmup_epochs = 1"));
    assert!(snapshot.contains("batch_size = 16"));
    assert!(snapshot.contains("hidden = 8"));
    assert_eq!(fs::read_to_string(run.join("report.csv")).unwrap().lines().count(), 2);

    fs::write(&cfg, "[train]\nlearning_rat = 1\n").unwrap();
    let out = bgrpo(dir.path(), &["train-baseline", "--config", s(&cfg)]);
    assert!(stderr(&out).starts_with("error[config]:"), "{}", stderr(&out));
}

#[test]
fn bgrpo_run_and_ablation_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, eval, base) = baseline_fixture(dir.path());
    let ckpt = base.join("baseline.ckpt");
    let rl = base.join("rl_half.feat");
    for mode in ["positive_clip", "signed", "none"] {
        let run = dir.path().join(format!("rl_{mode}"));
        let stdout = ok(&bgrpo(
            dir.path(),
            &[
                "train-bgrpo", "--baseline", s(&ckpt), "--rl", s(&rl), "--eval", s(&eval), "--reward", "r1",
                "--delta", "0.5", "--C", "1", "--epochs", "2", "--advantage-mode", mode, "--checkpoint-every", "1",
                "--run-dir", s(&run),
            ],
        ));
        assert!(stdout.contains("macro_f1"));
        let report = fs::read_to_string(run.join("report.csv")).unwrap();
        assert_eq!(report.lines().count(), 3);
        assert!(report.lines().nth(1).unwrap().starts_with("1,bgrpo,"));
        assert!(run.join("bgrpo.ckpt").is_file());
        assert!(run.join("checkpoints/bgrpo_epoch0002.ckpt").is_file());
        assert!(fs::read_to_string(run.join("summary.toml")).unwrap().contains("best_epoch"));
        assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains(&format!("advantage_mode = \"{mode}\"")));
    }
}

#[test]
fn teacher_rewards_need_a_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let (_, eval, base) = baseline_fixture(dir.path());
    let out = bgrpo(
        dir.path(),
        &[
            "train-bgrpo", "--baseline", s(&base.join("baseline.ckpt")), "--rl", s(&base.join("rl_half.feat")),
            "--eval", s(&eval), "--reward", "r3",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error[config]:"), "{}", stderr(&out));
}

#[test]
fn checkpoint_teacher_over_second_view() {
    let dir = tempfile::tempdir().unwrap();
    let (_, eval, base) = baseline_fixture(dir.path());
    let rl = base.join("rl_half.feat");
    // The baseline doubles as a teacher over the identical view.
    let run = dir.path().join("teach");
    ok(&bgrpo(
        dir.path(),
        &[
            "train-bgrpo", "--baseline", s(&base.join("baseline.ckpt")), "--rl", s(&rl), "--eval", s(&eval),
            "--reward", "r3", "--teacher", s(&base.join("baseline.ckpt")), "--teacher-features", s(&rl),
            "--epochs", "1", "--run-dir", s(&run),
        ],
    ));
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "1.0", "{report}");

    let missing = bgrpo(
        dir.path(),
        &[
            "train-bgrpo", "--baseline", s(&base.join("baseline.ckpt")), "--rl", s(&rl), "--eval", s(&eval),
            "--reward", "r5", "--teacher", s(&base.join("baseline.ckpt")),
        ],
    );
    assert!(stderr(&missing).starts_with("error[config]:"), "{}", stderr(&missing));
}

#[test]
fn eval_perfect_model_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("perfect.ckpt");
    fs::write(
        &ckpt,
        "bgrpo-checkpoint version=1\ndims 2 2 2\nw1 1 0 0 1\nb1 0 0\nw2 1 0 0 1\nb2 0 0\n",
    )
    .unwrap();
    let data = dir.path().join("pts.feat");
    fs::write(&data, "# dim=2 classes=2\na\t0\t1 0\nb\t1\t0 1\nc\t0\t2 0.5\nd\t1\t0.1 3\n").unwrap();
    let out_csv = dir.path().join("m.csv");
    let stdout = ok(&bgrpo(dir.path(), &["eval", "--checkpoint", s(&ckpt), "--eval", s(&data), "--out", s(&out_csv)]));
    assert!(stdout.contains("macro_f1 1.0000"), "{stdout}");
    let records = bgrpo::report::read_records(&out_csv).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].macro_f1, 1.0);

    let stdout = ok(&bgrpo(dir.path(), &["eval", "--checkpoint", s(&ckpt), "--eval", s(&data)]));
    assert!(stdout.contains("perfect_eval_pts.csv"), "{stdout}");
    assert!(dir.path().join("perfect_eval_pts.csv").is_file());
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, base) = baseline_fixture(dir.path());
    let other = dir.path().join("wide.feat");
    ok(&bgrpo(dir.path(), &["gen", "--dim", "5", "--per-class", "2", "--out", s(&other)]));
    let out = bgrpo(dir.path(), &["eval", "--checkpoint", s(&base.join("baseline.ckpt")), "--eval", s(&other)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[dimension]:"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_and_fails_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for loss in ["ce", "bgrpo"] {
        let stdout = ok(&bgrpo(dir.path(), &["gradcheck", "--loss", loss, "--seed", "4"]));
        assert!(stdout.contains("PASS"), "{stdout}");
    }
    let out = bgrpo(dir.path(), &["gradcheck", "--tol", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
