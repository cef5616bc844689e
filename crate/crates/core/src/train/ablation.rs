//! Multi-variant, multi-seed experiment grids.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::metrics::{evaluate, EvalReport};
use super::trainer::{train, TrainConfig, CHECKPOINT_FILE};
use crate::data::{generate_samples, Corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::losses::CountMode;
use crate::model::{AdaptorMode, Fusion, Model, ModelConfig, Tasks};

pub const REPORT_FILE: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const RESULTS_FILE: &str = "results.csv";
pub const TABLES_FILE: &str = "tables.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    /// Variant whose same-seed checkpoint provides the frozen branch.
    pub pretrained_from: Option<String>,
}

impl Variant {
    fn new(name: &str, model: ModelConfig) -> Self {
        Self {
            name: name.into(),
            model,
            pretrained_from: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Counting objective: classification or regression, with or without
    /// class balance.
    Table1,
    /// Fusion operator per exchange direction.
    Table2,
    /// Feature enhancement on or off per direction.
    Table3,
    /// Single-task, joint, fixed, one-way and bidirectional training.
    Table5,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            "table3" => Ok(Preset::Table3),
            "table5" => Ok(Preset::Table5),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}`; expected table1, table2, table3 or table5"
            ))),
        }
    }
}

impl Preset {
    pub const ALL: &'static [Preset] = &[
        Preset::Table1,
        Preset::Table2,
        Preset::Table3,
        Preset::Table5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
            Preset::Table3 => "table3",
            Preset::Table5 => "table5",
        }
    }

    pub fn variants(self, base: &ModelConfig) -> Vec<Variant> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            c.pretrained = None;
            f(&mut c);
            c
        };
        let joint = with(&|c| {
            c.tasks = Tasks::Both;
            c.adaptor = AdaptorMode::Jt;
        });
        match self {
            Preset::Table1 => [
                ("ce", CountMode::Classification, false),
                ("ce+balance", CountMode::Classification, true),
                ("regression", CountMode::Regression, false),
                ("regression+balance", CountMode::Regression, true),
            ]
            .into_iter()
            .map(|(name, mode, balance)| {
                Variant::new(
                    name,
                    with(&|c| {
                        c.tasks = Tasks::CntOnly;
                        c.adaptor = AdaptorMode::None;
                        c.count_mode = mode;
                        c.class_balance = balance;
                    }),
                )
            })
            .collect(),
            Preset::Table2 => {
                let mut out = vec![Variant::new("jt", joint)];
                for (dir, adaptor) in [("c2r", AdaptorMode::UniC2r), ("r2c", AdaptorMode::UniR2c)] {
                    for fusion in Fusion::ALL {
                        out.push(Variant::new(
                            &format!("{dir}-{fusion}"),
                            with(&|c| {
                                c.tasks = Tasks::Both;
                                c.adaptor = adaptor;
                                match adaptor {
                                    AdaptorMode::UniC2r => c.fusion_c2r = *fusion,
                                    _ => c.fusion_r2c = *fusion,
                                }
                            }),
                        ));
                    }
                }
                out
            }
            Preset::Table3 => {
                let mut out = vec![Variant::new("jt", joint)];
                for (dir, adaptor) in [("c2r", AdaptorMode::UniC2r), ("r2c", AdaptorMode::UniR2c)] {
                    for fe in [false, true] {
                        let name = if fe {
                            format!("{dir}+fe")
                        } else {
                            dir.to_string()
                        };
                        out.push(Variant::new(
                            &name,
                            with(&|c| {
                                c.tasks = Tasks::Both;
                                c.adaptor = adaptor;
                                c.fe = fe;
                            }),
                        ));
                    }
                }
                out
            }
            Preset::Table5 => {
                let mode = |tasks: Tasks, adaptor: AdaptorMode| {
                    with(&|c| {
                        c.tasks = tasks;
                        c.adaptor = adaptor;
                    })
                };
                let fixed = |name: &str, adaptor, from: &str| Variant {
                    pretrained_from: Some(from.into()),
                    ..Variant::new(name, mode(Tasks::Both, adaptor))
                };
                vec![
                    Variant::new("rcg-only", mode(Tasks::RcgOnly, AdaptorMode::None)),
                    Variant::new("cnt-only", mode(Tasks::CntOnly, AdaptorMode::None)),
                    Variant::new("jt", joint),
                    fixed("fixed-cnt", AdaptorMode::FixedCnt, "cnt-only"),
                    Variant::new("uni-c2r", mode(Tasks::Both, AdaptorMode::UniC2r)),
                    fixed("fixed-rcg", AdaptorMode::FixedRcg, "rcg-only"),
                    Variant::new("uni-r2c", mode(Tasks::Both, AdaptorMode::UniR2c)),
                    Variant::new(
                        "bidirectional",
                        mode(Tasks::Both, AdaptorMode::Bidirectional),
                    ),
                ]
            }
        }
    }
}

/// Every variant trains on the same corpora with the same seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub train_spec: CorpusSpec,
    pub test_spec: CorpusSpec,
    pub eval_batch: usize,
}

impl AblationGrid {
    /// Keeps only the named variants, in grid order.
    pub fn retain(&mut self, names: &[&str]) {
        self.variants.retain(|v| names.contains(&v.name.as_str()));
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "ablation grid needs at least one variant and one seed".into(),
            ));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].iter().any(|o| o.name == v.name) {
                return Err(Error::Config(format!("variant `{}` appears twice", v.name)));
            }
            if let Some(from) = &v.pretrained_from {
                let Some(dep) = self.variants.iter().find(|o| &o.name == from) else {
                    return Err(Error::Config(format!(
                        "`{}` needs variant `{from}`, not in grid",
                        v.name
                    )));
                };
                if dep.pretrained_from.is_some() {
                    return Err(Error::Config(format!(
                        "`{from}` itself depends on a checkpoint"
                    )));
                }
            }
        }
        self.train_spec.validate()?;
        self.test_spec.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
    pub final_loss: Option<f64>,
}

pub fn run_dir(root: &Path, variant: &str, seed: u64) -> PathBuf {
    root.join(variant).join(format!("seed{seed}"))
}

fn run_one(
    grid: &AblationGrid,
    variant: &Variant,
    seed: u64,
    data: (&Corpus, &Corpus),
    root: &Path,
) -> Result<(EvalReport, f64)> {
    let dir = &run_dir(root, &variant.name, seed);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cfg = variant.model.clone();
    if let Some(from) = &variant.pretrained_from {
        cfg.pretrained = Some(run_dir(root, from, seed).join(CHECKPOINT_FILE));
    }
    let tc = TrainConfig {
        seed,
        ..grid.train.clone()
    };
    let mut text = cfg.to_text();
    writeln!(
        text,
        "seed={seed}\nepochs={}\nbatch_size={}\nlr={}\nnorm_refresh={}",
        tc.epochs, tc.batch_size, tc.lr, tc.norm_refresh
    )
    .expect("writing to a String");
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, text).map_err(|e| Error::io(&config_path, e))?;
    let mut model = Model::build(&cfg, seed)?;
    let curve = train(&mut model, data.0, &tc, Some(dir))?;
    let report = evaluate(&model, data.1, grid.eval_batch)?;
    let path = dir.join(REPORT_FILE);
    fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok((report, curve.last().map_or(f64::NAN, |e| e.loss)))
}

/// Runs `jobs` in up to `threads` worker threads; results keep job order.
fn parallel<T: Send, R: Send>(jobs: Vec<T>, threads: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = jobs.len();
    let queue: Vec<Mutex<Option<T>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i]
                    .lock()
                    .expect("job lock")
                    .take()
                    .expect("each job taken once");
                let r = f(job);
                *results[i].lock().expect("result lock") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result lock").expect("every job ran"))
        .collect()
}

/// Trains and evaluates every (variant, seed) pair. Variants that load a
/// pretrained branch run after the others. A failed run is recorded and the
/// grid continues. Writes `results.csv` and `tables.txt` under `out_dir`.
pub fn run_ablation(grid: &AblationGrid, out_dir: &Path, jobs: usize) -> Result<Vec<RunRecord>> {
    grid.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_corpus = generate_samples(&grid.train_spec)?;
    let test_corpus = generate_samples(&grid.test_spec)?;
    let mut records: Vec<Option<RunRecord>> = vec![None; grid.variants.len() * grid.seeds.len()];
    for phase in [false, true] {
        let pending: Vec<(usize, &Variant, u64)> = grid
            .variants
            .iter()
            .enumerate()
            .filter(|(_, v)| v.pretrained_from.is_some() == phase)
            .flat_map(|(vi, v)| {
                grid.seeds
                    .iter()
                    .enumerate()
                    .map(move |(si, &s)| (vi * grid.seeds.len() + si, v, s))
            })
            .collect();
        let done = parallel(pending, jobs, |(slot, v, seed)| {
            let dep_failed = v
                .pretrained_from
                .as_ref()
                .is_some_and(|from| !run_dir(out_dir, from, seed).join(REPORT_FILE).exists());
            let result = if dep_failed {
                Err(Error::Checkpoint(format!(
                    "prerequisite `{}` failed for seed {seed}",
                    v.pretrained_from.as_deref().unwrap_or_default()
                )))
            } else {
                run_one(grid, v, seed, (&train_corpus, &test_corpus), out_dir)
            };
            if let Err(e) = &result {
                log::error!("{} seed {seed} FAILED: {e}", v.name);
            }
            let (outcome, final_loss) = match result {
                Ok((r, loss)) => (Ok(r), Some(loss)),
                Err(e) => (Err(e.to_string()), None),
            };
            (
                slot,
                RunRecord {
                    variant: v.name.clone(),
                    seed,
                    outcome,
                    final_loss,
                },
            )
        });
        for (slot, r) in done {
            records[slot] = Some(r);
        }
    }
    let records: Vec<RunRecord> = records.into_iter().flatten().collect();
    let csv = results_csv(&grid.variants, &records);
    let path = out_dir.join(RESULTS_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let table = summary_table(&grid.variants, &records);
    let path = out_dir.join(TABLES_FILE);
    fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

type Metric = fn(&EvalReport) -> Option<f64>;

const METRICS: [(&str, Metric); 4] = [
    ("word_accuracy", |r| r.overall.word_accuracy),
    ("count_correct_ratio", |r| {
        r.overall.count.map(|c| c.correct_ratio)
    }),
    ("rmse", |r| r.overall.count.map(|c| c.rmse)),
    ("rel_rmse", |r| r.overall.count.map(|c| c.rel_rmse)),
];

fn summaries(records: &[&RunRecord]) -> Vec<String> {
    METRICS
        .iter()
        .map(|(_, m)| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok().and_then(m))
                .collect();
            mean_std(&vals).map_or("NA".into(), |(mu, sd)| format!("{mu:.4}±{sd:.4}"))
        })
        .collect()
}

/// One row per run, then one `mean±std` row per variant.
pub fn results_csv(variants: &[Variant], records: &[RunRecord]) -> String {
    let mut out = String::from("variant,seed,status");
    for (name, _) in METRICS {
        write!(out, ",{name}").expect("writing to a String");
    }
    out.push_str(",final_loss\n");
    for r in records {
        match &r.outcome {
            Ok(rep) => {
                write!(out, "{},{},ok", r.variant, r.seed).expect("writing to a String");
                for (_, m) in METRICS {
                    write!(
                        out,
                        ",{}",
                        m(rep).map_or("NA".into(), |v| format!("{v:.6}"))
                    )
                    .expect("writing to a String");
                }
                writeln!(out, ",{:.6}", r.final_loss.unwrap_or(f64::NAN))
                    .expect("writing to a String");
            }
            Err(_) => writeln!(out, "{},{},FAILED,NA,NA,NA,NA,NA", r.variant, r.seed)
                .expect("writing to a String"),
        }
    }
    for v in variants {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.variant == v.name).collect();
        let ok = runs.iter().filter(|r| r.outcome.is_ok()).count();
        writeln!(
            out,
            "{},mean±std,{ok}/{},{},NA",
            v.name,
            runs.len(),
            summaries(&runs).join(",")
        )
        .expect("writing to a String");
    }
    out
}

/// Aligned plain-text summary, one line per variant.
pub fn summary_table(variants: &[Variant], records: &[RunRecord]) -> String {
    let mut rows = vec![{
        let mut h = vec!["variant".to_string(), "runs".to_string()];
        h.extend(METRICS.iter().map(|(n, _)| n.to_string()));
        h
    }];
    for v in variants {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.variant == v.name).collect();
        let ok = runs.iter().filter(|r| r.outcome.is_ok()).count();
        let mut row = vec![v.name.clone(), format!("{ok}/{}", runs.len())];
        row.extend(summaries(&runs));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
