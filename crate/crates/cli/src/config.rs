//! Key=value run configuration shared by every subcommand.
//!
//! Values are layered: defaults, then the `--config` file, then flags. The
//! effective configuration is written back in the same format, so a run
//! directory's `config.txt` can be fed to `--config` to repeat the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rfl_core::data::CorpusSpec;
use rfl_core::model::ModelConfig;
use rfl_core::train::ablation::{Preset, CONFIG_FILE};
use rfl_core::train::TrainConfig;

use crate::CliError;

/// Which keys a subcommand reads and echoes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Corpus,
    Model,
    Train,
    Data,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Single source of randomness. `generate` renders with it directly,
    /// `train` seeds initialization and shuffling, `ablate` derives both
    /// corpora from it.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub eval_batch: usize,
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub only: Vec<String>,
    pub jobs: usize,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            test: None,
            eval_batch: 100,
            preset: Preset::Table5,
            seeds: vec![1, 2, 3],
            only: Vec::new(),
            jobs: 1,
            train_count: 5000,
            test_count: 1000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{value}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn usage(e: rfl_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting. Keys shared between the renderer and the model
    /// (`alphabet`, `height`, `width`) update both.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let c = &mut self.corpus;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "count" => c.count = parse(key, value)?,
            "l_min" => c.min_len = parse(key, value)?,
            "l_max" => c.max_len = parse(key, value)?,
            "noise" => c.noise = parse(key, value)?,
            "scale_min" => c.min_scale = parse(key, value)?,
            "scale_max" => c.max_scale = parse(key, value)?,
            "gap_jitter" => c.gap_jitter = parse(key, value)?,
            "shift_jitter" => c.shift_jitter = parse(key, value)?,
            "vertical_jitter" => c.vertical_jitter = parse(key, value)?,
            "invert_prob" => c.invert_prob = parse(key, value)?,
            "alphabet" | "height" | "width" => {
                self.model.set(key, value).map_err(usage)?;
                c.alphabet = self.model.alphabet.clone();
                c.height = self.model.height;
                c.width = self.model.width;
            }
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "norm_refresh" => self.train.norm_refresh = parse(key, value)?,
            "data" => self.data = path(value),
            "test" => self.test = path(value),
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "preset" => self.preset = value.parse().map_err(usage)?,
            "seeds" => self.seeds = list(key, value)?,
            "only" => self.only = list(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "train_count" => self.train_count = parse(key, value)?,
            "test_count" => self.test_count = parse(key, value)?,
            _ => {
                if !self.model.set(key, value).map_err(usage)? {
                    return Err(CliError::Usage(format!("unknown setting `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn load(&mut self, file: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(file)
            .map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key=value", file.display(), n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", file.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn entries(&self, sections: &[Section]) -> Vec<(String, String)> {
        let mut out = vec![("seed".to_string(), self.seed.to_string())];
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        let c = &self.corpus;
        for s in sections {
            match s {
                Section::Corpus => {
                    if !sections.contains(&Section::Model) {
                        push("alphabet", c.alphabet.clone());
                        push("height", c.height.to_string());
                        push("width", c.width.to_string());
                    }
                    if !sections.contains(&Section::Grid) {
                        push("count", c.count.to_string());
                    }
                    push("l_min", c.min_len.to_string());
                    push("l_max", c.max_len.to_string());
                    push("noise", c.noise.to_string());
                    push("scale_min", c.min_scale.to_string());
                    push("scale_max", c.max_scale.to_string());
                    push("gap_jitter", c.gap_jitter.to_string());
                    push("shift_jitter", c.shift_jitter.to_string());
                    push("vertical_jitter", c.vertical_jitter.to_string());
                    push("invert_prob", c.invert_prob.to_string());
                }
                Section::Model => {
                    for (k, v) in self.model.entries() {
                        push(k, v);
                    }
                }
                Section::Train => {
                    push("epochs", self.train.epochs.to_string());
                    push("batch_size", self.train.batch_size.to_string());
                    push("lr", self.train.lr.to_string());
                    push("norm_refresh", self.train.norm_refresh.to_string());
                    push("eval_batch", self.eval_batch.to_string());
                }
                Section::Data => {
                    let show = |p: &Option<PathBuf>| {
                        p.as_ref()
                            .map(|p| p.display().to_string())
                            .unwrap_or_default()
                    };
                    push("data", show(&self.data));
                    push("test", show(&self.test));
                }
                Section::Grid => {
                    push("preset", self.preset.to_string());
                    push("seeds", join(&self.seeds));
                    push("only", self.only.join(","));
                    push("jobs", self.jobs.to_string());
                    push("train_count", self.train_count.to_string());
                    push("test_count", self.test_count.to_string());
                }
            }
        }
        out
    }

    pub fn to_text(&self, sections: &[Section]) -> String {
        let mut out = String::new();
        for (k, v) in self.entries(sections) {
            writeln!(out, "{k}={v}").expect("writing to a String");
        }
        out
    }

    /// Writes the effective configuration to `dir/config.txt`.
    pub fn echo(&self, dir: &Path, sections: &[Section]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        let file = dir.join(CONFIG_FILE);
        fs::write(&file, self.to_text(sections))
            .map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
        Ok(file)
    }
}
