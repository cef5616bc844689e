//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! Run alone with `cargo test --release -p rfl-cli --test acceptance`.
//! Run directories are kept under the cargo target tmpdir for inspection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rfl_cli::config::RunConfig;
use rfl_cli::grid_of;
use rfl_cli::selftest::{fusion_suite, gradient_suite, Selftest, Suite};
use rfl_core::data::{generate_samples, CorpusSpec};
use rfl_core::losses::ClassBalance;
use rfl_core::model::{DecoderKind, Model, ModelConfig, Prediction};
use rfl_core::train::ablation::{run_ablation, run_dir, Preset, RunRecord, REPORT_FILE};
use rfl_core::train::{train_step, AdaDelta, EvalReport, CURVE_FILE};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn suite_outcome(suite: &Suite) -> Outcome {
    let failed: Vec<String> = suite
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    let detail = if failed.is_empty() {
        format!("{}/{} checks", suite.passed(), suite.checks.len())
    } else {
        failed.join("; ")
    };
    Outcome::new(suite.ok(), detail)
}

fn ctc_oracle() -> Outcome {
    suite_outcome(&Selftest::default().ctc_suite())
}

fn gradients() -> Outcome {
    suite_outcome(&gradient_suite())
}

fn adaptor_identities() -> Outcome {
    suite_outcome(&fusion_suite())
}

fn metrics() -> Outcome {
    let pred = |text: &str, count| Prediction {
        text: Some(text.into()),
        count: Some(count),
    };
    let truths = vec!["abc".to_string(), "de".to_string()];
    let hand =
        EvalReport::from_predictions(&[pred("abc", 2), pred("de", 2)], &truths).expect("scores");
    let c = hand.overall.count.expect("count metrics");
    let (rmse, rel) = (0.5f64.sqrt(), 0.125f64.sqrt());
    let hand_ok =
        (c.rmse - rmse).abs() < 1e-9 && (c.rel_rmse - rel).abs() < 1e-9 && c.correct_ratio == 0.5;
    let perfect =
        EvalReport::from_predictions(&[pred("abc", 3), pred("de", 2)], &truths).expect("scores");
    let p = perfect.overall.count.expect("count metrics");
    let perfect_ok = (p.correct_ratio, p.rmse, p.rel_rmse) == (1.0, 0.0, 0.0)
        && perfect.overall.word_accuracy == Some(1.0);
    Outcome::new(
        hand_ok && perfect_ok,
        format!(
            "rmse {:.5} rel {:.5} ratio {}; perfect ({}, {}, {})",
            c.rmse, c.rel_rmse, c.correct_ratio, p.correct_ratio, p.rmse, p.rel_rmse
        ),
    )
}

/// Full-batch steps on sixteen samples until the joint loss falls below a
/// tenth of its first value.
fn overfit(decoder: DecoderKind) -> Outcome {
    let corpus = generate_samples(&CorpusSpec {
        count: 16,
        seed: 11,
        ..CorpusSpec::default()
    })
    .expect("corpus");
    let cfg = ModelConfig {
        decoder,
        ..ModelConfig::default()
    };
    let mut model = Model::build(&cfg, 1).expect("model");
    let balance = ClassBalance::from_lengths(&corpus.lengths(), cfg.max_len).expect("balance");
    let mut opt = AdaDelta::new(model.store(), 1.0);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let (images, texts) = corpus.batch(&all).expect("batch");
    let mut initial = None;
    let mut last = f64::NAN;
    for step in 1..=500 {
        match train_step(&mut model, &mut opt, &images, &texts, Some(&balance)) {
            Ok(loss) => last = loss.total,
            Err(e) => return Outcome::new(false, format!("step {step}: {e}")),
        }
        let first = *initial.get_or_insert(last);
        if last < 0.1 * first {
            return Outcome::new(true, format!("{first:.4} -> {last:.4} in {step} steps"));
        }
    }
    Outcome::new(
        false,
        format!(
            "{:.4} -> {last:.4} after 500 steps",
            initial.unwrap_or(f64::NAN)
        ),
    )
}

fn grid_records(
    preset: Preset,
    only: &[&str],
    decoder: DecoderKind,
    name: &str,
) -> Result<Vec<RunRecord>, String> {
    let mut cfg = RunConfig {
        preset,
        only: only.iter().map(|s| s.to_string()).collect(),
        ..RunConfig::default()
    };
    cfg.model.decoder = decoder;
    let grid = grid_of(&cfg).map_err(|e| e.to_string())?;
    let dir = out_dir(name);
    let records = run_ablation(&grid, &dir, 1).map_err(|e| e.to_string())?;
    if let Some(bad) = records.iter().find(|r| r.outcome.is_err()) {
        return Err(format!(
            "{} seed {} failed: {:?}",
            bad.variant, bad.seed, bad.outcome
        ));
    }
    Ok(records)
}

/// Per-variant values by seed.
fn by_variant(
    records: &[RunRecord],
    value: impl Fn(&EvalReport) -> Option<f64>,
) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let v = r.outcome.as_ref().ok().and_then(&value).unwrap_or(f64::NAN);
        out.entry(r.variant.clone()).or_default().push(v);
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn wins(a: &[f64], b: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    a.iter().zip(b).filter(|(x, y)| better(**x, **y)).count()
}

fn fmt(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn joint_training_trend() -> Outcome {
    let names = ["rcg-only", "cnt-only", "jt", "bidirectional"];
    let records = match grid_records(
        Preset::Table5,
        &names,
        DecoderKind::ParalAttn,
        "joint_training",
    ) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e),
    };
    let acc = by_variant(&records, |r| r.overall.word_accuracy);
    let rmse = by_variant(&records, |r| r.overall.count.map(|c| c.rmse));
    let (bi, jt, rcg) = (&acc["bidirectional"], &acc["jt"], &acc["rcg-only"]);
    let order = mean(bi) >= mean(jt) && mean(jt) >= mean(rcg);
    let beat = wins(bi, rcg, |a, b| a > b);
    let count_wins = wins(&rmse["bidirectional"], &rmse["cnt-only"], |a, b| a <= b);
    Outcome::new(
        order && beat >= 2 && count_wins >= 2,
        format!(
            "accuracy bi {} jt {} rcg {} (means {:.3} {:.3} {:.3}), bi>rcg {beat}/3; rmse bi {} cnt {} ({count_wins}/3)",
            fmt(bi),
            fmt(jt),
            fmt(rcg),
            mean(bi),
            mean(jt),
            mean(rcg),
            fmt(&rmse["bidirectional"]),
            fmt(&rmse["cnt-only"]),
        ),
    )
}

fn counting_loss_trend() -> Outcome {
    let records = match grid_records(Preset::Table1, &[], DecoderKind::Ctc, "counting_loss") {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e),
    };
    let ratio = by_variant(&records, |r| r.overall.count.map(|c| c.correct_ratio));
    let best = &ratio["regression+balance"];
    let others: Vec<f64> = ratio
        .iter()
        .filter(|(k, _)| k.as_str() != "regression+balance")
        .map(|(_, v)| mean(v))
        .collect();
    let top = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let seeds = best.iter().filter(|&&b| b >= top).count();
    let all = ratio
        .iter()
        .map(|(k, v)| format!("{k} {}", fmt(v)))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(
        seeds >= 2,
        format!("{all}; best other mean {top:.3}, {seeds}/3 seeds at or above"),
    )
}

/// Every preset at reduced scale, once sequentially and once on two workers.
fn determinism() -> Outcome {
    let mut compared = 0;
    for &preset in Preset::ALL {
        let mut cfg = RunConfig {
            preset,
            ..RunConfig::default()
        };
        for (k, v) in [
            ("seeds", "1,2"),
            ("train_count", "48"),
            ("test_count", "24"),
            ("epochs", "2"),
            ("batch_size", "16"),
            ("channels", "8"),
            ("hidden", "16"),
            ("norm_refresh", "2"),
        ] {
            cfg.set(k, v).expect("setting");
        }
        let grid = grid_of(&cfg).expect("grid");
        let dirs = [
            out_dir(&format!("determinism/{preset}-a")),
            out_dir(&format!("determinism/{preset}-b")),
        ];
        for (dir, jobs) in dirs.iter().zip([1, 2]) {
            if let Err(e) = run_ablation(&grid, dir, jobs) {
                return Outcome::new(false, format!("{preset}: {e}"));
            }
        }
        for v in &grid.variants {
            for &seed in &grid.seeds {
                for file in [CURVE_FILE, REPORT_FILE] {
                    let read = |d: &Path| fs::read(run_dir(d, &v.name, seed).join(file)).ok();
                    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
                    if a.is_none() || a != b {
                        return Outcome::new(
                            false,
                            format!("{preset} {} seed {seed}: {file} differs", v.name),
                        );
                    }
                    compared += 1;
                }
            }
        }
    }
    Outcome::new(true, format!("{compared} files identical across reruns"))
}

type Criterion = (&'static str, Duration, Box<dyn Fn() -> Outcome>);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(m * 60);
    let criteria: Vec<Criterion> = vec![
        (
            "1 ctc oracle",
            Duration::from_secs(10),
            Box::new(ctc_oracle),
        ),
        ("2 gradient suite", minutes(3), Box::new(gradients)),
        (
            "3 adaptor identities",
            Duration::from_secs(30),
            Box::new(adaptor_identities),
        ),
        (
            "4 metric correctness",
            Duration::from_secs(10),
            Box::new(metrics),
        ),
        (
            "5 overfit ctc",
            minutes(5),
            Box::new(|| overfit(DecoderKind::Ctc)),
        ),
        (
            "5 overfit bilstm-attn",
            minutes(5),
            Box::new(|| overfit(DecoderKind::BilstmAttn)),
        ),
        (
            "5 overfit paral-attn-simplified",
            minutes(5),
            Box::new(|| overfit(DecoderKind::ParalAttn)),
        ),
        (
            "6 joint training trend",
            minutes(60),
            Box::new(joint_training_trend),
        ),
        (
            "7 counting loss trend",
            minutes(30),
            Box::new(counting_loss_trend),
        ),
        ("8 determinism", minutes(30), Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, budget, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let passed = outcome.passed && took <= *budget;
        failed += usize::from(!passed);
        let status = if passed { "PASS" } else { "FAIL" };
        let over = if took > *budget {
            ", over time budget"
        } else {
            ""
        };
        println!(
            "{status} criterion {name}: {} ({:.1}s of {}s{over})",
            outcome.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
