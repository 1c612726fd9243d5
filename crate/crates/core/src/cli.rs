//! Command-line front end: config handling and the six commands.
//!
//! Settings resolve in order: built-in defaults, `--config` file, `--set`
//! overrides, then the `--out-dir` / `--seed` flags.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use thiserror::Error;

use crate::attribution::{attribute_dataset, profiles_from_csv, profiles_to_csv, DEFAULT_STEPS};
use crate::data::{
    encode_sequence, graph_build_count, parse_dataset, parse_fasta_str, reset_graph_build_count, split_dataset,
    synthetic_aromatic_dataset, write_dataset_csv, Sequence, TaskKind,
};
use crate::encoders::{graph_encode_count, reset_graph_encode_count, CoModel, Route, SeqEncoderConfig};
use crate::fusion::{FusionConfig, FusionKind};
use crate::metrics::compare_models;
use crate::training::{default_lambda, evaluate, infer, train, TrainConfig};

pub const CONFIG_FILE: &str = "config.cfg";

/// Every accepted key with its default. An empty `lambda` means the task default.
const KEYS: &[(&str, &str)] = &[
    ("task", "regression"),
    ("num_classes", "2"),
    ("epochs", "30"),
    ("batch_size", "32"),
    ("learning_rate", "0.001"),
    ("seed", "5"),
    ("fusion", "repcon"),
    ("delta", "0.5"),
    ("lambda", ""),
    ("tau", "0.5"),
    ("normalize", "false"),
    ("d_model", "64"),
    ("heads", "4"),
    ("seq_layers", "2"),
    ("d_ff", "128"),
    ("max_len", "50"),
    ("graph_layers", "3"),
    ("pred_hidden_layers", "1"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("dataset", ""),
    ("split", "0.8,0.1,0.1"),
    ("out_dir", "out"),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("line {line}: key {key:?} given twice")]
    Duplicate { key: String, line: usize },
    #[error("invalid value {value:?} for key {key:?}: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("config key {0:?} must be set")]
    Missing(String),
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Flat key/value run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: IndexMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn load_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate { key: k.to_string(), line: i + 1 });
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        self.load_str(&text)
    }

    /// Applies one `--set key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: kv.to_string() })?;
        self.set(k.trim(), v)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let value = self.get(key);
        value.parse().map_err(|e: T::Err| ConfigError::Invalid {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn task(&self) -> Result<TaskKind, ConfigError> {
        self.parse("task")
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.parse("seed")
    }

    pub fn lambda(&self) -> Result<f64, ConfigError> {
        if self.get("lambda").is_empty() {
            Ok(default_lambda(self.task()?))
        } else {
            self.parse("lambda")
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            task: self.task()?,
            num_classes: self.parse("num_classes")?,
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            learning_rate: self.parse("learning_rate")?,
            seed: self.seed()?,
            fusion: FusionConfig {
                kind: self.parse::<FusionKind>("fusion")?,
                delta: self.parse("delta")?,
                lambda: self.lambda()?,
                tau: self.parse("tau")?,
                normalize: self.parse("normalize")?,
            },
            seq: SeqEncoderConfig {
                d: self.parse("d_model")?,
                heads: self.parse("heads")?,
                layers: self.parse("seq_layers")?,
                d_ff: self.parse("d_ff")?,
                max_len: self.parse("max_len")?,
            },
            graph_layers: self.parse("graph_layers")?,
            pred_hidden_layers: self.parse("pred_hidden_layers")?,
            beta1: self.parse("beta1")?,
            beta2: self.parse("beta2")?,
            adam_eps: self.parse("adam_eps")?,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid {
            key: "(training)".into(),
            value: String::new(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn split_ratios(&self) -> Result<(f64, f64, f64), ConfigError> {
        let value = self.get("split");
        let invalid = |reason: &str| ConfigError::Invalid {
            key: "split".into(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let parts = value
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(&e.to_string()))?;
        match parts[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(invalid("expected three comma-separated ratios")),
        }
    }

    pub fn dataset(&self) -> Result<PathBuf, ConfigError> {
        match self.get("dataset") {
            "" => Err(ConfigError::Missing("dataset".into())),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// Every key with the value actually used; `lambda` is made explicit.
    pub fn resolved_text(&self) -> Result<String, ConfigError> {
        let mut out = String::new();
        for (k, v) in &self.values {
            let v = if k == "lambda" { self.lambda()?.to_string() } else { v.clone() };
            let _ = writeln!(out, "{k} = {v}");
        }
        Ok(out)
    }
}

#[derive(Debug, Parser)]
#[command(name = "comodel", version, about = "Peptide sequence/graph co-modeling")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured dataset; writes checkpoint, loss curve and metrics.
    Train,
    /// Sequence-only predictions for a FASTA file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fasta: PathBuf,
        /// Fail unless no graph was built or encoded during inference.
        #[arg(long)]
        assert_seq_only: bool,
    },
    /// Integrated-gradients attribution profiles for a dataset CSV or FASTA file.
    Attribute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "seq")]
        route: Route,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        /// Only attribute the first N peptides.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Similarity report between two profile CSVs.
    Compare { profiles_a: PathBuf, profiles_b: PathBuf },
    /// One training run per contrastive weight.
    SweepLambda {
        /// Comma-separated λ values.
        #[arg(long)]
        grid: String,
    },
    /// Synthetic dataset labelled by aromatic (F, W, Y) fraction.
    GenSynth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        max_len: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.set("out_dir", &dir.display().to_string())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.resolved_text()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Infer { checkpoint, fasta, assert_seq_only } => cmd_infer(&cfg, checkpoint, fasta, *assert_seq_only),
        Command::Attribute { checkpoint, input, route, steps, limit } => {
            cmd_attribute(&cfg, checkpoint, input, *route, *steps, *limit)
        }
        Command::Compare { profiles_a, profiles_b } => cmd_compare(&cfg, profiles_a, profiles_b),
        Command::SweepLambda { grid } => cmd_sweep_lambda(&cfg, grid),
        Command::GenSynth { n, max_len, output } => cmd_gen_synth(&cfg, *n, *max_len, output.as_deref()),
    }
}

fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    write_file(&dir.join(CONFIG_FILE), &cfg.resolved_text()?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(runtime)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(runtime)
}

fn load_model(path: &Path) -> Result<CoModel, CliError> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    CoModel::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display())).map_err(runtime)
}

fn load_split(cfg: &RunConfig) -> Result<crate::data::DatasetSplit, CliError> {
    let path = cfg.dataset()?;
    let max_len: usize = cfg.parse("max_len")?;
    let records = parse_dataset(&path, cfg.task()?, max_len)
        .with_context(|| format!("config key \"dataset\" ({})", path.display()))?;
    split_dataset(&records, cfg.split_ratios()?, cfg.seed()?).map_err(runtime)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let train_cfg = cfg.train_config()?;
    let split = load_split(cfg)?;
    let dir = cfg.out_dir();
    prepare_dir(&dir, cfg)?;
    let outcome = train(&split, &train_cfg).map_err(runtime)?;
    std::fs::write(dir.join("checkpoint.pcn"), outcome.model.to_bytes()).context("writing checkpoint")?;
    write_file(&dir.join("loss_curve.csv"), &outcome.curve.to_csv())?;
    let mut report = String::new();
    let _ = writeln!(report, "best_epoch={}", outcome.best_epoch);
    let _ = writeln!(report, "train_size={}", split.train.len());
    let _ = writeln!(report, "validation_size={}", split.validation.len());
    let _ = writeln!(report, "test_size={}", split.test.len());
    if !split.test.is_empty() {
        let metrics = evaluate(&outcome.model, &split.test).map_err(runtime)?;
        for line in metrics.report().lines() {
            let _ = writeln!(report, "test_{line}");
        }
    }
    write_file(&dir.join("metrics.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, fasta: &Path, assert_seq_only: bool) -> Result<(), CliError> {
    let model = load_model(checkpoint)?;
    let records = parse_fasta_str(&read_file(fasta)?, model.arch.seq.max_len).map_err(runtime)?;
    reset_graph_build_count();
    reset_graph_encode_count();
    let mut out = String::from("id,prediction\n");
    for r in &records {
        let y = infer(&encode_sequence(&r.sequence), &model)
            .map_err(|e| anyhow!("{e}; decoupled inference needs a model with its own sequence predictor"))?;
        match model.arch.task {
            TaskKind::Regression => {
                let _ = writeln!(out, "{},{:.6}", r.id, y[0]);
            }
            TaskKind::Classification => {
                let class = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
                let _ = writeln!(out, "{},{}", r.id, class);
            }
        }
    }
    let (builds, encodes) = (graph_build_count(), graph_encode_count());
    if assert_seq_only && (builds != 0 || encodes != 0) {
        bail_runtime(format!("sequence-only assertion failed: {builds} graph builds, {encodes} graph encodes"))?;
    }
    let dir = cfg.out_dir();
    prepare_dir(&dir, cfg)?;
    write_file(&dir.join("predictions.csv"), &out)?;
    if assert_seq_only {
        eprintln!("sequence-only inference verified: 0 graph builds, 0 graph encodes");
    }
    Ok(())
}

fn bail_runtime(msg: String) -> Result<(), CliError> {
    Err(CliError::Runtime(anyhow!(msg)))
}

/// Reads `(id, sequence)` pairs from FASTA (leading `>`) or a `sequence,label` CSV.
fn read_peptides(path: &Path, task: TaskKind, max_len: usize) -> Result<Vec<(String, Sequence)>, CliError> {
    let text = read_file(path)?;
    if text.trim_start().starts_with('>') {
        let recs = parse_fasta_str(&text, max_len).map_err(runtime)?;
        Ok(recs.into_iter().map(|r| (r.id, r.sequence)).collect())
    } else {
        let recs = parse_dataset(path, task, max_len).map_err(runtime)?;
        Ok(recs.into_iter().map(|r| (r.id, r.sequence)).collect())
    }
}

pub fn cmd_attribute(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    route: Route,
    steps: usize,
    limit: Option<usize>,
) -> Result<(), CliError> {
    if steps == 0 {
        return Err(CliError::Usage("--steps must be >= 1".into()));
    }
    let model = load_model(checkpoint)?;
    if !model.has_route(route) {
        return Err(runtime(anyhow!("checkpoint ({} fusion) has no {} route", model.kind(), route.name())));
    }
    if steps == 1 {
        eprintln!("warning: m=1 integrated gradients is a single-gradient estimate; expect a large completeness gap");
    }
    let mut peptides = read_peptides(input, model.arch.task, model.arch.seq.max_len)?;
    if let Some(n) = limit {
        peptides.truncate(n);
    }
    let profiles =
        attribute_dataset(&model, route, peptides.iter().map(|(id, s)| (id.as_str(), s)), steps).map_err(runtime)?;
    let dir = cfg.out_dir();
    prepare_dir(&dir, cfg)?;
    write_file(&dir.join(format!("profiles_{}.csv", route.name())), &profiles_to_csv(&profiles))
}

pub fn cmd_compare(cfg: &RunConfig, a: &Path, b: &Path) -> Result<(), CliError> {
    let load = |p: &Path| -> Result<_, CliError> {
        profiles_from_csv(&read_file(p)?).map_err(|e| runtime(anyhow!("{}: {e}", p.display())))
    };
    let report = compare_models(&load(a)?, &load(b)?).map_err(runtime)?;
    let csv = report.to_csv();
    let dir = cfg.out_dir();
    prepare_dir(&dir, cfg)?;
    write_file(&dir.join("similarity.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn parse_grid(grid: &str) -> Result<Vec<f64>, CliError> {
    let mut values = Vec::new();
    for part in grid.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: f64 = part.parse().map_err(|_| CliError::Usage(format!("bad λ value {part:?} in --grid")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("λ must be finite and >= 0, got {part}")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::Usage("--grid is empty".into()));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(values)
}

pub fn cmd_sweep_lambda(cfg: &RunConfig, grid: &str) -> Result<(), CliError> {
    let grid = parse_grid(grid)?;
    let base = cfg.train_config()?;
    let split = load_split(cfg)?;
    let dir = cfg.out_dir();
    prepare_dir(&dir, cfg)?;
    let mut out = String::from("lambda,val_metric\n");
    for lambda in grid {
        let mut run_cfg = base.clone();
        run_cfg.fusion.lambda = lambda;
        let outcome = train(&split, &run_cfg).with_context(|| format!("training with lambda={lambda}"))?;
        let best = &outcome.curve.rows[outcome.best_epoch - 1];
        let _ = writeln!(out, "{lambda},{:.6}", best.val_metric);
        eprintln!("lambda={lambda} best_epoch={} val_metric={:.6}", outcome.best_epoch, best.val_metric);
    }
    write_file(&dir.join("lambda_sweep.csv"), &out)?;
    print!("{out}");
    Ok(())
}

pub fn cmd_gen_synth(cfg: &RunConfig, n: usize, max_len: usize, output: Option<&Path>) -> Result<(), CliError> {
    if n < 10 {
        return Err(CliError::Usage(format!("--n must be >= 10, got {n}")));
    }
    if max_len < 2 {
        return Err(CliError::Usage(format!("--max-len must be >= 2, got {max_len}")));
    }
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir().join("synthetic.csv"));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    prepare_dir(dir, cfg)?;
    let records = synthetic_aromatic_dataset(n, max_len, cfg.seed()?);
    write_file(&path, &write_dataset_csv(&records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let mut c = RunConfig::default();
        c.load_str("# comment\nepochs = 3  # trailing\n\nfusion=concat\n").unwrap();
        assert_eq!(c.get("epochs"), "3");
        assert_eq!(c.train_config().unwrap().fusion.kind, FusionKind::Concat);
        assert_eq!(c.lambda().unwrap(), 1e-4);
        c.set("task", "classification").unwrap();
        assert_eq!(c.lambda().unwrap(), 0.05);
        assert_eq!(c.load_str("bogus = 1"), Err(ConfigError::UnknownKey("bogus".into())));
        assert!(matches!(c.load_str("epochs 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.load_str("seed=1\nseed=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        c.set("epochs", "many").unwrap();
        assert!(matches!(c.train_config(), Err(ConfigError::Invalid { key, .. }) if key == "epochs"));
        assert_eq!(RunConfig::default().dataset(), Err(ConfigError::Missing("dataset".into())));
    }

    #[test]
    fn resolved_config_reloads_identically() {
        let mut c = RunConfig::default();
        c.apply_override("lambda=0.01").unwrap();
        let text = c.resolved_text().unwrap();
        assert!(text.contains("lambda = 0.01\n"));
        let mut back = RunConfig::default();
        back.load_str(&text).unwrap();
        assert_eq!(back.resolved_text().unwrap(), text);
        assert_eq!(back.train_config().unwrap(), c.train_config().unwrap());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1e-3, 0,1e-5").unwrap(), vec![0.0, 1e-5, 1e-3]);
        assert!(matches!(parse_grid(""), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid("-1"), Err(CliError::Usage(_))));
    }
}
