use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rfl_cli::config::RunConfig;
use rfl_cli::selftest::{tape_ctc, Selftest};
use rfl_cli::{grid_of, run_selftest, EXIT_DIVERGED, EXIT_SELFTEST, EXIT_USAGE};
use rfl_core::train::ablation::Preset;

fn rfl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--channels",
    "8",
    "--hidden",
    "8",
    "--batch-size",
    "8",
    "-q",
];

fn generate(dir: &Path, name: &str, count: &str, seed: &str) {
    let out = rfl(
        &[
            "generate", "--count", count, "--seed", seed, "--out", name, "-q",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn generate_writes_a_manifest_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "a", "100", "7");
    generate(tmp.path(), "b", "100", "7");
    let manifest = fs::read_to_string(tmp.path().join("a/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 100);
    assert_eq!(
        manifest,
        fs::read_to_string(tmp.path().join("b/manifest.tsv")).unwrap()
    );
    for i in [0, 57, 99] {
        let name = format!("images/{i:06}.pgm");
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap()
        );
    }
    let config = fs::read_to_string(tmp.path().join("a/config.txt")).unwrap();
    assert!(config.contains("seed=7\n") && config.contains("count=100\n"));
}

#[test]
fn generate_prints_the_length_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfl(
        &[
            "generate", "--count", "50", "--l-min", "3", "--l-max", "3", "--out", "c",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("length 3: 50"), "{}", stdout(&out));
}

#[test]
fn infeasible_length_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfl(&["generate", "--l-max", "30", "--out", "d"], tmp.path());
    assert_eq!(code(&out), EXIT_USAGE as i32);
    assert!(stderr(&out).contains("canvas"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_exit_with_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfl(&["train", "--data", "absent", "--out", "t"], tmp.path());
    assert_eq!(code(&out), EXIT_USAGE as i32);
    assert!(stderr(&out).contains("absent"));
    generate(tmp.path(), "d", "8", "1");
    let out = rfl(
        &["eval", "--checkpoint", "gone.bin", "--data", "d"],
        tmp.path(),
    );
    assert_eq!(code(&out), EXIT_USAGE as i32);
    assert!(stderr(&out).contains("gone.bin"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&rfl(&["frobnicate"], tmp.path())), EXIT_USAGE as i32);
    let out = rfl(
        &["train", "--out", "t", "--set", "no_such_key=1"],
        tmp.path(),
    );
    assert_eq!(code(&out), EXIT_USAGE as i32);
    assert!(stderr(&out).contains("no_such_key"));
}

#[test]
fn train_then_eval_and_replay_from_echoed_config() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", "16", "3");
    let mut args = vec![
        "train", "--data", "d", "--test", "d", "--out", "t1", "--epochs", "2", "--seed", "5",
    ];
    args.extend_from_slice(TINY);
    let out = rfl(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["config.txt", "curve.csv", "checkpoint.bin", "report.csv"] {
        assert!(tmp.path().join("t1").join(f).is_file(), "{f}");
    }

    let out = rfl(
        &[
            "eval",
            "--checkpoint",
            "t1/checkpoint.bin",
            "--data",
            "d",
            "--out",
            "e",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(tmp.path().join("t1/report.csv")).unwrap();
    assert_eq!(stdout(&out), report);
    assert_eq!(
        fs::read_to_string(tmp.path().join("e/report.csv")).unwrap(),
        report
    );
    assert!(report.starts_with("scope,n,word_accuracy,count_correct_ratio,rmse,rel_rmse\nall,16,"));

    let out = rfl(
        &["train", "--config", "t1/config.txt", "--out", "t2", "-q"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["config.txt", "curve.csv", "checkpoint.bin", "report.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("t1").join(f)).unwrap(),
            fs::read(tmp.path().join("t2").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn untrained_model_scores_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "8", "1");
    generate(tmp.path(), "test", "1000", "2");
    let mut args = vec![
        "train", "--data", "train", "--out", "t", "--epochs", "1", "--lr", "1e-12",
    ];
    args.extend_from_slice(TINY);
    assert_eq!(code(&rfl(&args, tmp.path())), 0);
    let out = rfl(
        &["eval", "--checkpoint", "t/checkpoint.bin", "--data", "test"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let all: Vec<String> = stdout(&out)
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();
    assert_eq!(all[1], "1000");
    let accuracy: f64 = all[2].parse().unwrap();
    assert!(accuracy < 0.05, "{accuracy}");
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", "16", "3");
    let mut args = vec![
        "train", "--data", "d", "--out", "t", "--epochs", "2", "--lr", "1e200",
    ];
    args.extend_from_slice(TINY);
    let out = rfl(&args, tmp.path());
    assert_eq!(code(&out), EXIT_DIVERGED as i32, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn chosen_adaptor_configuration_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", "8", "3");
    let mut args = vec![
        "train",
        "--data",
        "d",
        "--out",
        "t",
        "--epochs",
        "1",
        "--adaptor",
        "bidirectional",
        "--fusion-c2r",
        "mul",
        "--fusion-r2c",
        "add",
    ];
    args.extend_from_slice(TINY);
    assert_eq!(code(&rfl(&args, tmp.path())), 0);
    let config = fs::read_to_string(tmp.path().join("t/config.txt")).unwrap();
    for line in ["adaptor=bidirectional", "fusion_c2r=mul", "fusion_r2c=add"] {
        assert!(config.lines().any(|l| l == line), "{line}");
    }
}

#[test]
fn presets_expand_to_their_grids() {
    let mut cfg = RunConfig::default();
    for (preset, runs) in [("table1", 4), ("table2", 7), ("table3", 5), ("table5", 8)] {
        cfg.set("preset", preset).unwrap();
        assert_eq!(grid_of(&cfg).unwrap().variants.len(), runs, "{preset}");
    }
    cfg.preset = Preset::Table5;
    cfg.only = vec!["nope".into()];
    assert!(grid_of(&cfg).is_err());
}

#[test]
fn ablate_writes_tables_and_per_run_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "ablate",
        "--preset",
        "table1",
        "--only",
        "regression+balance,ce",
        "--seeds",
        "1",
        "--train-count",
        "16",
        "--test-count",
        "8",
        "--epochs",
        "1",
        "--channels",
        "8",
        "--batch-size",
        "8",
        "--out",
        "g",
        "-q",
    ];
    let out = rfl(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let g = tmp.path().join("g");
    for f in ["config.txt", "results.csv", "tables.txt"] {
        assert!(g.join(f).is_file(), "{f}");
    }
    for v in ["regression+balance", "ce"] {
        for f in ["config.txt", "curve.csv", "checkpoint.bin", "report.csv"] {
            assert!(g.join(v).join("seed1").join(f).is_file(), "{v}/{f}");
        }
    }
    let results = fs::read_to_string(g.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 + 2, "{results}");
}

#[test]
fn selftest_passes_and_catches_a_corrupted_ctc() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfl(&["selftest"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("ctc oracle"));

    fn off_by_a_little(
        lp: &[f64],
        frames: usize,
        classes: usize,
        label: &[usize],
        blank: usize,
    ) -> f64 {
        tape_ctc(lp, frames, classes, label, blank) + 1e-6
    }
    let err = run_selftest(&Selftest {
        ctc: off_by_a_little,
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), EXIT_SELFTEST);
    assert!(err.to_string().contains("ctc oracle"));
}
