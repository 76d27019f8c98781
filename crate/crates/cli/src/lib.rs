//! Command-line front end: one TOML run config, five commands, fixed output
//! names under `out_dir`, and a fixed exit-code taxonomy.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use arlnet::canon::to_canonical_json;
use arlnet::checkpoint::{load_checkpoint, save_checkpoint};
use arlnet::data::{load_csv, save_csv, synth_generate, Domain, FeatureDataset, SynthConfig};
use arlnet::gradsuite::{run_gradient_suite, GRADCHECK_SEED, GRADCHECK_TOLERANCE};
use arlnet::losses::mean_embed_dist;
use arlnet::model::ArlConfig;
use arlnet::train::{evaluate, run_ablation, train_two_stage, TrainConfig};
use arlnet::ArlError;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const CHECKPOINT_FILE: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics";
pub const ABLATION_FILE: &str = "ablation";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const GRADCHECK: i32 = 4;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            train_csv: "train.csv".into(),
            test_csv: "test.csv".into(),
            out_dir: "out".into(),
        }
    }
}

/// The single config file shared by every command. Relative paths resolve
/// against the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ArlConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            model: ArlConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Reads `path` and makes every relative path absolute against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| ArlError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.train_csv, &mut cfg.paths.test_csv, &mut cfg.paths.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum CliError {
    Arl(ArlError),
    GradCheck(Vec<String>),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Arl(ArlError::Config(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Arl(ArlError::Io { .. }) => exit::IO,
            CliError::Arl(ArlError::Training { .. }) => exit::DIVERGED,
            CliError::Arl(_) => exit::CONFIG,
            CliError::GradCheck(_) => exit::GRADCHECK,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Arl(e) => write!(f, "{e}"),
            CliError::GradCheck(failed) => write!(f, "gradient check failed for: {}", failed.join(", ")),
        }
    }
}

impl From<ArlError> for CliError {
    fn from(e: ArlError) -> Self {
        CliError::Arl(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "arlnet", version, about = "Adversarial regression learning on feature vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic train.csv and test.csv from the [synth] section.
    Generate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-stage training; writes checkpoint and metrics to out_dir.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a labelled CSV; writes predictions.csv.
    Eval {
        checkpoint: PathBuf,
        csv: PathBuf,
        /// Directory for predictions.csv; defaults to the checkpoint's.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train every loss ablation and write the ablation table to out_dir.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Scale one component's analytic gradient to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

/// Parses `args`, runs the command, prints to stdout/stderr and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            print!("{out}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a command and returns what it would print on success.
pub fn execute(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Generate { config, seed } => cmd_generate(config, *seed),
        Command::Train { config, seed } => cmd_train(config, *seed),
        Command::Eval {
            checkpoint,
            csv,
            out_dir,
        } => cmd_eval(checkpoint, csv, out_dir.as_deref()),
        Command::Ablate { config, seed } => cmd_ablate(config, *seed),
        Command::Gradcheck { corrupt } => cmd_gradcheck(corrupt.as_deref()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ArlError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| {
        ArlError::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        ArlError::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn cmd_generate(config: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    let (train, test) = synth_generate(&cfg.synth)?;
    for (ds, path) in [(&train, &cfg.paths.train_csv), (&test, &cfg.paths.test_csv)] {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        save_csv(ds, path)?;
    }
    let dist = mean_embed_dist(&train.features, &test.features)?;
    Ok(format!(
        "wrote {} ({} rows) and {} ({} rows)\nmean_embed_dist {dist:.6}\n",
        cfg.paths.train_csv.display(),
        train.len(),
        cfg.paths.test_csv.display(),
        test.len()
    ))
}

fn check_width(model: &ArlConfig, ds: &FeatureDataset, what: &str) -> Result<(), CliError> {
    if model.feat_dim != ds.d() {
        return Err(CliError::config(format!(
            "feature width mismatch: model feat_dim={} but {what} has {} feature columns",
            model.feat_dim,
            ds.d()
        )));
    }
    Ok(())
}

fn load_pair(cfg: &RunConfig) -> Result<(FeatureDataset, FeatureDataset), CliError> {
    let train = load_csv(&cfg.paths.train_csv, Domain::Train)?;
    let test = load_csv(&cfg.paths.test_csv, Domain::Test)?;
    if train.ages.is_none() {
        return Err(CliError::config(format!("{} has no age column", cfg.paths.train_csv.display())));
    }
    check_width(&cfg.model, &train, "the training CSV")?;
    check_width(&cfg.model, &test, "the test CSV")?;
    Ok((train, test))
}

pub fn cmd_train(config: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (train, test) = load_pair(&cfg)?;
    let run = train_two_stage(&cfg.model, &cfg.train, &train, &test)?;
    create_dir(&cfg.paths.out_dir)?;
    save_checkpoint(&run.trainer, cfg.paths.out_dir.join(CHECKPOINT_FILE))?;
    write_file(&cfg.paths.out_dir.join(METRICS_FILE), &run.history.to_jsonl()?)?;
    let mut out = format!(
        "trained {} + {} iterations\ncode distance after stage 1 {:.6}, after stage 2 {:.6}\n",
        cfg.train.iters_stage1, cfg.train.iters_stage2, run.after_stage1.dist_code, run.after_stage2.dist_code
    );
    if let (Some(a), Some(b)) = (run.test_mae_stage1, run.test_mae_stage2) {
        let _ = writeln!(out, "test MAE (evaluation only) after stage 1 {a:.4}, after stage 2 {b:.4}");
    }
    let _ = writeln!(out, "wrote {}", cfg.paths.out_dir.display());
    Ok(out)
}

pub fn cmd_eval(checkpoint: &Path, csv: &Path, out_dir: Option<&Path>) -> Result<String, CliError> {
    let trainer = load_checkpoint(checkpoint)?;
    let ds = load_csv(csv, Domain::Test)?;
    if ds.d() != trainer.model.config.feat_dim {
        return Err(CliError::config(format!(
            "feature width mismatch: checkpoint feat_dim={} but {} has {} feature columns",
            trainer.model.config.feat_dim,
            csv.display(),
            ds.d()
        )));
    }
    let ages = ds
        .ages
        .clone()
        .ok_or_else(|| CliError::config(format!("{} has no age column", csv.display())))?;
    let (err, pred) = evaluate(&trainer.model, &ds)?;
    let mut table = String::from("index,age_true,age_pred\n");
    for (i, (y, p)) in ages.iter().zip(&pred).enumerate() {
        let _ = writeln!(table, "{i},{y},{p}");
    }
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    write_file(&dir.join(PREDICTIONS_FILE), &table)?;
    Ok(format!("MAE {err:.4}\n"))
}

pub fn cmd_ablate(config: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (train, test) = load_pair(&cfg)?;
    if test.ages.is_none() {
        return Err(CliError::config(format!(
            "ablation reports test MAE; {} has no age column",
            cfg.paths.test_csv.display()
        )));
    }
    let table = run_ablation(&cfg.model, &cfg.train, &train, &test)?;
    let mut doc = to_canonical_json(&table)?;
    doc.push('\n');
    write_file(&cfg.paths.out_dir.join(ABLATION_FILE), &doc)?;
    let mut out = format!("{:<20} {:>10} {:>10}\n", "variant", "test_mae", "dist_code");
    for row in &table.rows {
        let _ = writeln!(out, "{:<20} {:>10.4} {:>10.4}", row.variant.name(), row.test_mae, row.dist_code);
    }
    Ok(out)
}

pub fn cmd_gradcheck(corrupt: Option<&str>) -> Result<String, CliError> {
    let checks = run_gradient_suite(GRADCHECK_SEED, corrupt)?;
    if let Some(name) = corrupt {
        if !checks.iter().any(|c| c.component == name) {
            return Err(CliError::config(format!("no gradient component named {name:?}")));
        }
    }
    let mut out = String::new();
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(out, "{:<30} {:>10.3e}  {verdict}", c.component, c.max_rel_error);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.component.clone()).collect();
    if failed.is_empty() {
        let _ = writeln!(out, "all {} components below {GRADCHECK_TOLERANCE:e}", checks.len());
        Ok(out)
    } else {
        print!("{out}");
        Err(CliError::GradCheck(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        let io = CliError::Arl(ArlError::Io {
            path: "x".into(),
            source: std::io::Error::other("gone"),
        });
        assert_eq!(io.exit_code(), exit::IO);
        assert_eq!(CliError::config("bad").exit_code(), exit::CONFIG);
        assert_eq!(CliError::Arl(ArlError::Usage("u".into())).exit_code(), exit::CONFIG);
        assert_eq!(CliError::Arl(ArlError::Checkpoint("c".into())).exit_code(), exit::CONFIG);
        let diverged = ArlError::Training {
            iteration: 4,
            last_good: Some(3),
            what: "nan".into(),
        };
        assert_eq!(CliError::Arl(diverged).exit_code(), exit::DIVERGED);
        assert_eq!(CliError::GradCheck(vec!["mape".into()]).exit_code(), exit::GRADCHECK);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(RunConfig::from_toml("schema_version = 1\n[train]\nlr = 0.1\n").is_ok());
        for text in [
            "schema_version = 1\n[train]\nrate = 0.1\n",
            "schema_version = 2\n",
            "[train]\nlr = 0.1\n",
            "schema_version = 1\n[train]\nlr = -1.0\n",
            "schema_version = 1\n[mystery]\n",
        ] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), exit::CONFIG, "{text}");
        }
    }

    #[test]
    fn absolute_paths_are_kept() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(&cfg, "schema_version = 1\n[paths]\nout_dir = \"/tmp/elsewhere\"\n").unwrap();
        let loaded = RunConfig::load(&cfg).unwrap();
        assert_eq!(loaded.paths.out_dir, PathBuf::from("/tmp/elsewhere"));
        assert_eq!(loaded.paths.test_csv, dir.path().join("test.csv"));
    }

    #[test]
    fn corrupting_an_unknown_component_is_a_usage_error() {
        assert_eq!(cmd_gradcheck(Some("nothing")).unwrap_err().exit_code(), exit::CONFIG);
    }
}
