use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlvr-forge"))
        .args(args)
        .env("RLVR_FORGE_LOG", "error")
        .output()
        .expect("spawn rlvr-forge")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn help_lists_every_command() {
    let o = forge(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["synth", "refine", "train", "mine", "distill", "eval", "report", "toy-corpus"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert!(text.contains("RLVR_FORGE_LOG"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["synth", "--graph", "no/such/kg.jsonl", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train.grpo]\nlearning_rat = 1.0\n").unwrap();
    let o = forge(&["toy-corpus", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);

    let o = forge(&[
        "refine",
        "--in",
        s(&fixture("refine_input.jsonl")),
        "--validator",
        "oracle-of-delphi",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_is_deterministic_and_writes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = forge(&[
            "synth",
            "--graph",
            s(&fixture("mini_kg.jsonl")),
            "--count",
            "25",
            "--seed",
            "5",
            "--out-dir",
            s(dir.path()),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.jsonl");
    assert_eq!(a, run("b.jsonl"));
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 25);
    assert!(dir.path().join("resolved_config.toml").exists());
}

#[test]
fn synth_zero_count_writes_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.jsonl");
    let o = forge(&[
        "synth",
        "--graph",
        s(&fixture("mini_kg.jsonl")),
        "--count",
        "0",
        "--out-dir",
        s(dir.path()),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read(&out).unwrap().is_empty());
}

#[test]
fn refine_splits_verified_flagged_and_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("refined.jsonl");
    let o = forge(&[
        "refine",
        "--in",
        s(&fixture("refine_input.jsonl")),
        "--out-dir",
        s(dir.path()),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(out.clone()), 10);
    assert_eq!(lines(dir.path().join("refined.flagged.jsonl")), 0);
    assert_eq!(lines(dir.path().join("refined.rejected.jsonl")), 2);
    let refined = std::fs::read_to_string(&out).unwrap();
    assert!(refined.contains("\"difficulty\""));
}

fn train_small(dir: &Path, corpus: &Path) -> Vec<u8> {
    std::fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[train.grpo]\nlearning_rate = 4.0\nmax_iterations = 60\n[train.curriculum]\nsparsity_window = 10\n",
    )
    .unwrap();
    let o = forge(&["train", "--config", s(&cfg), "--in", s(corpus), "--out-dir", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(dir.join("trace.jsonl")).unwrap()
}

#[test]
fn train_reruns_are_byte_identical_and_feed_mine_and_eval() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("toy.jsonl");
    let o = forge(&[
        "toy-corpus",
        "--count",
        "80",
        "--seed",
        "3",
        "--out-dir",
        s(root.path()),
        "--out",
        s(&corpus),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let trace = train_small(&a, &corpus);
    assert!(!trace.is_empty());
    assert_eq!(trace, train_small(&b, &corpus));
    assert_eq!(
        std::fs::read(a.join("train_report.json")).unwrap(),
        std::fs::read(b.join("train_report.json")).unwrap()
    );

    let ck = a.join("checkpoint.bin");
    let o = forge(&["mine", "--in", s(&corpus), "--checkpoint", s(&ck), "--out-dir", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(a.join("hard_pool.jsonl").exists());

    let (e1, e2) = (root.path().join("e1"), root.path().join("e2"));
    for (dir, model) in [(&e1, "base"), (&e2, "tuned")] {
        let o = forge(&[
            "eval",
            "--checkpoint",
            s(&ck),
            "--bench",
            s(&fixture("bench")),
            "--model",
            model,
            "--out-dir",
            s(dir),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("toy_bench"));
        assert!(dir.join("toy_bench.results.jsonl").exists());
    }
    let o = forge(&["report", "--in", s(&e1), "--in", s(&e2), "--out-dir", s(root.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("base") && table.contains("tuned"));
    assert!(root.path().join("report.txt").exists());
}

#[test]
fn distill_fixture_run_reports_outcome_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&[
        "distill",
        "--in",
        s(&fixture("distill_items.jsonl")),
        "--transcript",
        s(&fixture("distill_transcript.jsonl")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("passed_first 3, passed_refined 4, dropped 3"), "{stdout}");
    let sft = std::fs::read_to_string(dir.path().join("sft.jsonl")).unwrap();
    assert_eq!(sft.lines().count(), 7);
}

#[test]
fn unreachable_eval_endpoint_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("http.toml");
    std::fs::write(
        &cfg,
        "[eval]\nadapter = \"http\"\n[eval.endpoint]\nurl = \"http://127.0.0.1:9/v1\"\n",
    )
    .unwrap();
    let o = forge(&["eval", "--config", s(&cfg), "--bench", s(&fixture("bench")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
