//! `rfl`: corpus generation, training, evaluation, ablation grids and a
//! built-in self test.

pub mod config;
pub mod logger;
pub mod selftest;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rfl_core::data::{generate_corpus, load_corpus, Corpus, MANIFEST};
use rfl_core::model::Model;
use rfl_core::seed;
use rfl_core::train::ablation::{
    run_ablation, AblationGrid, REPORT_FILE, RESULTS_FILE, TABLES_FILE,
};
use rfl_core::train::{evaluate, train, EvalReport, CHECKPOINT_FILE};

use config::{RunConfig, Section};
use selftest::Selftest;

pub const EXIT_OK: u8 = 0;
pub const EXIT_SELFTEST: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("self test failed: {0}")]
    Selftest(String),
    #[error(transparent)]
    Core(#[from] rfl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Selftest(_) => EXIT_SELFTEST,
            CliError::Core(rfl_core::Error::Divergence { .. }) => EXIT_DIVERGED,
            CliError::Usage(_) | CliError::Core(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rfl",
    version,
    about = "Counting-assisted text recognition on synthetic word images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled corpus of word images.
    Generate(GenerateArgs),
    /// Train one model on a corpus.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Train and score a preset grid of variants over several seeds.
    Ablate(AblateArgs),
    /// Run the built-in oracle, gradient, adaptor and renderer checks.
    Selftest(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// key=value file applied before flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Extra setting; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only errors on stderr.
    #[arg(short, long)]
    pub quiet: bool,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<String>,
    #[arg(long)]
    pub l_min: Option<usize>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub decoder: Option<String>,
    #[arg(long)]
    pub adaptor: Option<String>,
    #[arg(long)]
    pub fusion_c2r: Option<String>,
    #[arg(long)]
    pub fusion_r2c: Option<String>,
    #[arg(long)]
    pub count_mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training manifest, or a directory holding `manifest.tsv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional held-out corpus scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Single-task checkpoint for fixed adaptor modes.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Writes `report.csv` here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub preset: Option<String>,
    /// Concurrent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated subset of the preset's variants.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
    v.as_ref().map(|v| (key, v.to_string()))
}

impl ModelArgs {
    fn settings(&self) -> Vec<(&'static str, String)> {
        [
            opt("decoder", &self.decoder),
            opt("adaptor", &self.adaptor),
            opt("fusion_c2r", &self.fusion_c2r),
            opt("fusion_r2c", &self.fusion_r2c),
            opt("count_mode", &self.count_mode),
            opt("lambda", &self.lambda),
            opt("channels", &self.channels),
            opt("hidden", &self.hidden),
            opt("epochs", &self.epochs),
            opt("batch_size", &self.batch_size),
            opt("lr", &self.lr),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Defaults, then the config file, then named flags, then `--set`.
fn resolve(common: &CommonArgs, named: Vec<(&'static str, String)>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(file) = &common.config {
        cfg.load(file)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    for (k, v) in named {
        cfg.set(k, &v)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn manifest_path(p: &Path) -> Result<PathBuf, CliError> {
    let file = if p.is_dir() {
        p.join(MANIFEST)
    } else {
        p.to_path_buf()
    };
    if !file.is_file() {
        return Err(CliError::Usage(format!(
            "corpus not found: {}",
            file.display()
        )));
    }
    Ok(file)
}

fn load(p: &Path) -> Result<Corpus, CliError> {
    Ok(load_corpus(&manifest_path(p)?)?)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn histogram_text(hist: &[usize]) -> String {
    let mut out = String::new();
    for (len, n) in hist.iter().enumerate().filter(|(_, &n)| n > 0) {
        writeln!(out, "length {len}: {n}").expect("writing to a String");
    }
    out
}

fn cmd_generate(a: &GenerateArgs) -> Result<String, CliError> {
    let named = [
        opt("count", &a.count),
        opt("alphabet", &a.alphabet),
        opt("l_min", &a.l_min),
        opt("l_max", &a.l_max),
        opt("noise", &a.noise),
    ];
    let mut cfg = resolve(&a.common, named.into_iter().flatten().collect())?;
    cfg.corpus.seed = cfg.seed;
    cfg.corpus.validate()?;
    let (manifest, hist) = generate_corpus(&cfg.corpus, &a.out)?;
    cfg.echo(&a.out, &[Section::Corpus])?;
    Ok(format!(
        "manifest: {}\n{}",
        manifest.display(),
        histogram_text(&hist)
    ))
}

fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    let mut named = a.model.settings();
    named.extend(opt("data", &a.data.as_ref().map(|p| p.display())));
    named.extend(opt("test", &a.test.as_ref().map(|p| p.display())));
    named.extend(opt(
        "pretrained",
        &a.pretrained.as_ref().map(|p| p.display()),
    ));
    let mut cfg = resolve(&a.common, named)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("train needs --data (or `data=` in the config)".into()))?;
    let corpus = load(&data)?;
    let test = cfg.test.as_deref().map(load).transpose()?;
    if let Some(p) = &cfg.model.pretrained {
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "pretrained checkpoint not found: {}",
                p.display()
            )));
        }
    }
    cfg.train.seed = cfg.seed;
    let mut model = Model::build(&cfg.model, cfg.seed)?;
    cfg.echo(&a.out, &[Section::Model, Section::Train, Section::Data])?;
    log::info!(
        "training {} parameters on {} samples for {} epochs",
        model.census(),
        corpus.len(),
        cfg.train.epochs
    );
    let curve = train(&mut model, &corpus, &cfg.train, Some(&a.out))?;
    let mut out = String::new();
    if let Some(last) = curve.last() {
        writeln!(
            out,
            "final loss {:.6} after {} epochs",
            last.loss, last.epoch
        )
        .expect("writing to a String");
    }
    writeln!(out, "checkpoint: {}", a.out.join(CHECKPOINT_FILE).display())
        .expect("writing to a String");
    if let Some(test) = test {
        let report = evaluate(&model, &test, cfg.eval_batch)?;
        write(&a.out.join(REPORT_FILE), &report.to_csv())?;
        out.push_str(&report.to_csv());
    }
    Ok(out)
}

/// Scores a saved model. The configuration defaults to the `config.txt`
/// next to the checkpoint.
pub fn eval_checkpoint(
    checkpoint: &Path,
    cfg: &RunConfig,
    corpus: &Corpus,
) -> Result<EvalReport, CliError> {
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint not found: {}",
            checkpoint.display()
        )));
    }
    let model = Model::restore(&cfg.model, checkpoint)?;
    Ok(evaluate(&model, corpus, cfg.eval_batch)?)
}

fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    let mut common = a.common.clone();
    if common.config.is_none() {
        let beside = a
            .checkpoint
            .with_file_name(rfl_core::train::ablation::CONFIG_FILE);
        if beside.is_file() {
            common.config = Some(beside);
        }
    }
    let named = opt("data", &a.data.as_ref().map(|p| p.display()))
        .into_iter()
        .collect();
    let cfg = resolve(&common, named)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("eval needs --data".into()))?;
    let corpus = load(&data)?;
    let report = eval_checkpoint(&a.checkpoint, &cfg, &corpus)?;
    let csv = report.to_csv();
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        write(&dir.join(REPORT_FILE), &csv)?;
    }
    Ok(csv)
}

/// The grid an `ablate` configuration expands to. Both corpora derive from
/// the configuration seed.
pub fn grid_of(cfg: &RunConfig) -> Result<AblationGrid, CliError> {
    let mut grid = AblationGrid {
        variants: cfg.preset.variants(&cfg.model),
        seeds: cfg.seeds.clone(),
        train: cfg.train.clone(),
        train_spec: rfl_core::data::CorpusSpec {
            count: cfg.train_count,
            seed: seed::derive(cfg.seed, "train-corpus"),
            ..cfg.corpus.clone()
        },
        test_spec: rfl_core::data::CorpusSpec {
            count: cfg.test_count,
            seed: seed::derive(cfg.seed, "test-corpus"),
            ..cfg.corpus.clone()
        },
        eval_batch: cfg.eval_batch,
    };
    if !cfg.only.is_empty() {
        let known: Vec<&str> = grid.variants.iter().map(|v| v.name.as_str()).collect();
        if let Some(bad) = cfg.only.iter().find(|n| !known.contains(&n.as_str())) {
            return Err(CliError::Usage(format!(
                "preset {} has no variant `{bad}`; variants: {}",
                cfg.preset,
                known.join(", ")
            )));
        }
        let names: Vec<&str> = cfg.only.iter().map(String::as_str).collect();
        grid.retain(&names);
    }
    grid.validate()?;
    Ok(grid)
}

fn cmd_ablate(a: &AblateArgs) -> Result<String, CliError> {
    let mut named = a.model.settings();
    named.extend(opt("preset", &a.preset));
    named.extend(opt("jobs", &a.jobs));
    named.extend(opt("seeds", &a.seeds));
    named.extend(opt("only", &a.only));
    named.extend(opt("train_count", &a.train_count));
    named.extend(opt("test_count", &a.test_count));
    let cfg = resolve(&a.common, named)?;
    let grid = grid_of(&cfg)?;
    cfg.echo(
        &a.out,
        &[
            Section::Corpus,
            Section::Model,
            Section::Train,
            Section::Grid,
        ],
    )?;
    let records = run_ablation(&grid, &a.out, cfg.jobs.max(1))?;
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    let table = fs::read_to_string(a.out.join(TABLES_FILE)).unwrap_or_default();
    let mut out = format!("{table}\nresults: {}\n", a.out.join(RESULTS_FILE).display());
    if failed > 0 {
        writeln!(out, "{failed} of {} runs FAILED", records.len()).expect("writing to a String");
    }
    Ok(out)
}

/// Runs every suite and renders the per-suite summary.
pub fn run_selftest(test: &Selftest) -> Result<String, CliError> {
    let mut out = String::new();
    let mut failed = Vec::new();
    for suite in test.run() {
        writeln!(
            out,
            "{:<20} {}/{} passed",
            suite.name,
            suite.passed(),
            suite.checks.len()
        )
        .expect("writing to a String");
        for c in suite.checks.iter().filter(|c| !c.passed) {
            writeln!(out, "  FAIL {}: {}", c.name, c.detail).expect("writing to a String");
        }
        if !suite.ok() {
            failed.push(suite.name);
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(CliError::Selftest(failed.join(", ")))
    }
}

fn common(cmd: &Command) -> &CommonArgs {
    match cmd {
        Command::Generate(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Ablate(a) => &a.common,
        Command::Selftest(a) => a,
    }
}

/// Executes a parsed command and returns what it prints on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let c = common(&cli.command);
    logger::init(c.quiet, c.verbose);
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Selftest(_) => run_selftest(&Selftest::default()),
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("rfl: {e}");
            e.exit_code()
        }
    }
}
