//! Command-line front end. Configuration is resolved as defaults, then the
//! TOML file given by `--config`, then command-line flags; the resolved
//! configuration is written next to every artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::explain::{explain, project_prototypes, render_text, ProjectedModel, ProjectionOptions};
use crate::losses::SepSign;
use crate::metrics::{evaluate, Metrics};
use crate::store::{load_dataset, stratified_holdout, Dataset, EmbeddingRecord};
use crate::synth::random_instance;
use crate::train::{cross_validate, finite_diff_check, train, FdReport, TrainConfig};

/// Share of the training file held out for early stopping when no
/// validation file is given.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "protosarc", version, about = "Interpretable prototype-network sarcasm classifier")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Train without the incongruity loss.
    #[arg(long, global = true)]
    pub no_incongruity: bool,
    /// Sign of the separation terms in the objective (+1 or -1).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sep_sign: Option<SepSign>,
    /// Optimizer preset: batch 60, 30 accumulated batches per step, lr 1e-4.
    #[arg(long, global = true)]
    pub paper_settings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and the per-epoch history.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation file; defaults to a stratified 10% of the training file.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation; writes per-fold and mean metrics.
    Crossval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Replace prototypes with their nearest training embeddings.
    Project {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        sample_frac: Option<f64>,
        /// Search the whole pool instead of the prototype's own class.
        #[arg(long)]
        unrestricted: bool,
        /// Leave sentiment prototypes untouched.
        #[arg(long)]
        no_sentiment: bool,
    },
    /// Explain predictions of a projected model.
    Explain {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Record id to explain; repeatable.
        #[arg(long = "id")]
        ids: Vec<String>,
        /// Explain every record in the data file.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Accuracy, precision, recall and F1 of a checkpoint on a data file.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Check a trained model instead of a seeded random instance.
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Data file for crossval, evaluate and explain.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    pub folds: usize,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub sample_frac: Option<f64>,
    pub restricted: bool,
    pub sentiment: bool,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            sample_frac: None,
            restricted: true,
            sentiment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub top_k: usize,
    pub ids: Vec<String>,
    pub all: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            top_k: 3,
            ids: Vec::new(),
            all: false,
        }
    }
}

/// Shape of the random instance checked when no checkpoint is given. With a
/// checkpoint, the first `n` records of the data file form the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub step: f64,
    pub threshold: f64,
    pub n: usize,
    pub k_a: usize,
    pub k_b: usize,
    pub d_s: usize,
    pub d_m: usize,
    pub hidden: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            threshold: 1e-4,
            n: 8,
            k_a: 6,
            k_b: 4,
            d_s: 8,
            d_m: 8,
            hidden: 8,
        }
    }
}

/// Everything a command needs. `training.seed` is the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub no_incongruity: bool,
    pub paths: Paths,
    pub training: TrainConfig,
    pub crossval: CrossvalConfig,
    pub project: ProjectConfig,
    pub explain: ExplainConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            no_incongruity: false,
            paths: Paths::default(),
            training: TrainConfig::default(),
            crossval: CrossvalConfig::default(),
            project: ProjectConfig::default(),
            explain: ExplainConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply_common(&mut self, c: &CommonArgs) {
        if let Some(seed) = c.seed {
            self.training.seed = seed;
        }
        if let Some(out) = &c.out {
            self.out = out.clone();
        }
        if c.paper_settings {
            let p = TrainConfig::paper_settings();
            self.training.lr = p.lr;
            self.training.batch_size = p.batch_size;
            self.training.accum_steps = p.accum_steps;
        }
        if let Some(sign) = c.sep_sign {
            self.training.weights.sep_sign = sign;
        }
        self.no_incongruity |= c.no_incongruity;
        if self.no_incongruity {
            self.training.weights.inco = 0.0;
        }
    }

    fn apply_command(&mut self, cmd: &Command) {
        fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        match cmd {
            Command::Train { train, val } => {
                set(&mut self.paths.train, train);
                set(&mut self.paths.val, val);
            }
            Command::Crossval { data, folds } => {
                set(&mut self.paths.data, data);
                if let Some(k) = folds {
                    self.crossval.folds = *k;
                }
            }
            Command::Project {
                checkpoint,
                train,
                sample_frac,
                unrestricted,
                no_sentiment,
            } => {
                set(&mut self.paths.checkpoint, checkpoint);
                set(&mut self.paths.train, train);
                set(&mut self.project.sample_frac, sample_frac);
                self.project.restricted &= !unrestricted;
                self.project.sentiment &= !no_sentiment;
            }
            Command::Explain {
                checkpoint,
                data,
                ids,
                all,
                top_k,
            } => {
                set(&mut self.paths.checkpoint, checkpoint);
                set(&mut self.paths.data, data);
                if !ids.is_empty() {
                    self.explain.ids.clone_from(ids);
                }
                self.explain.all |= all;
                if let Some(k) = top_k {
                    self.explain.top_k = *k;
                }
            }
            Command::Evaluate { checkpoint, data } => {
                set(&mut self.paths.checkpoint, checkpoint);
                set(&mut self.paths.data, data);
            }
            Command::Gradcheck {
                checkpoint,
                data,
                step,
                threshold,
            } => {
                set(&mut self.paths.checkpoint, checkpoint);
                set(&mut self.paths.data, data);
                if let Some(s) = step {
                    self.gradcheck.step = *s;
                }
                if let Some(t) = threshold {
                    self.gradcheck.threshold = *t;
                }
            }
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_common(&cli.common);
    cfg.apply_command(&cli.command);
    cfg.training.validate()?;
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} file given (flag --{what} or paths.{what})")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let text = toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    write_file(&cfg.out.join(format!("{command}.config.toml")), &text)?;
    Ok(cfg.out.clone())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Train { .. } => cmd_train(&cfg),
        Command::Crossval { .. } => cmd_crossval(&cfg),
        Command::Project { .. } => cmd_project(&cfg),
        Command::Explain { .. } => cmd_explain(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Gradcheck { .. } => cmd_gradcheck(&cfg),
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    no_incongruity: bool,
    lambda_inco: f64,
    train_size: usize,
    val_size: usize,
    /// "file" or "holdout".
    val_source: &'static str,
    best_epoch: usize,
    best_val_loss: f64,
    stopped_epoch: usize,
    stopped_early: bool,
    wall_clock_secs: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(required(&cfg.paths.train, "train")?)?;
    let (fit_ds, val_ds, val_source) = match &cfg.paths.val {
        Some(p) => (data, load_dataset(p)?, "file"),
        None => {
            let (fit, val) = stratified_holdout(&data, HOLDOUT_FRACTION, cfg.training.seed);
            if val.is_empty() {
                return Err(Error::Data("training file too small to hold out a validation split".into()));
            }
            (data.subset(&fit, "fit"), data.subset(&val, "val"), "holdout")
        }
    };
    let out = prepare_out(cfg, "train")?;
    let (params, history) = train(&fit_ds, &val_ds, &cfg.training)?;
    save_checkpoint(&ProjectedModel::new(params), out.join("checkpoint.json"))?;

    let mut lines = String::new();
    for e in &history.epochs {
        lines.push_str(&serde_json::to_string(e).expect("serializable"));
        lines.push('\n');
    }
    write_file(&out.join("history.jsonl"), &lines)?;
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            seed: cfg.training.seed,
            no_incongruity: cfg.no_incongruity,
            lambda_inco: cfg.training.weights.inco,
            train_size: fit_ds.len(),
            val_size: val_ds.len(),
            val_source,
            best_epoch: history.best_epoch,
            best_val_loss: history.best_val_loss,
            stopped_epoch: history.stopped_epoch,
            stopped_early: history.stopped_early,
            wall_clock_secs: history.wall_clock_secs,
        },
    )?;
    let best = &history.epochs[history.best_epoch - 1];
    println!(
        "best epoch {} of {}: val loss {:.6}, val accuracy {:.4}, val F1 {:.4}",
        history.best_epoch, history.stopped_epoch, history.best_val_loss, best.val_metrics.accuracy, best.val_metrics.f1
    );
    Ok(())
}

pub fn cmd_crossval(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(required(&cfg.paths.data, "data")?)?;
    let out = prepare_out(cfg, "crossval")?;
    let summary = cross_validate(&data, &cfg.training, cfg.crossval.folds)?;
    write_json(&out.join("crossval.json"), &summary)?;
    let m = summary.mean;
    println!(
        "{}-fold mean: accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
        summary.k, m.accuracy, m.precision, m.recall, m.f1
    );
    Ok(())
}

pub fn cmd_project(cfg: &RunConfig) -> Result<()> {
    let model = load_checkpoint(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let data = load_dataset(required(&cfg.paths.train, "train")?)?;
    let out = prepare_out(cfg, "project")?;
    let opts = ProjectionOptions {
        sample_frac: cfg.project.sample_frac,
        seed: cfg.training.seed,
        restricted: cfg.project.restricted,
        sentiment: cfg.project.sentiment,
    };
    let projected = project_prototypes(&model, &data, &opts)?;
    save_checkpoint(&projected, out.join("projected.json"))?;
    let p = projected.projection.as_ref().expect("just projected");
    let max_dist = p.semantic.iter().map(|s| s.distance).fold(0.0, f64::max);
    println!(
        "projected {} semantic prototypes onto a pool of {} (sample_frac {}); largest move {:.6}",
        p.semantic.len(),
        p.pool_size,
        p.sample_frac,
        max_dist
    );
    Ok(())
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<()> {
    let model = load_checkpoint(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let data = load_dataset(required(&cfg.paths.data, "data")?)?;
    let records: Vec<&EmbeddingRecord> = if cfg.explain.all {
        data.records.iter().collect()
    } else if cfg.explain.ids.is_empty() {
        return Err(Error::Config("nothing to explain: give --id or --all".into()));
    } else {
        cfg.explain
            .ids
            .iter()
            .map(|id| data.find(id).ok_or_else(|| Error::Data(format!("unknown record id {id:?}"))))
            .collect::<Result<_>>()?
    };
    let explanations = records
        .iter()
        .map(|r| explain(&model, r, cfg.explain.top_k))
        .collect::<Result<Vec<_>>>()?;
    let out = prepare_out(cfg, "explain")?;
    let mut json = String::new();
    let mut text = String::new();
    for e in &explanations {
        json.push_str(&serde_json::to_string(e).expect("serializable"));
        json.push('\n');
        text.push_str(&render_text(e));
        text.push('\n');
    }
    write_file(&out.join("explanations.jsonl"), &json)?;
    write_file(&out.join("explanations.txt"), &text)?;
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

#[derive(Debug, Serialize)]
struct EvaluationReport<'a> {
    data: &'a Path,
    records: usize,
    metrics: Metrics,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let model = load_checkpoint(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let path = required(&cfg.paths.data, "data")?;
    let data = load_dataset(path)?;
    let metrics = evaluate(&model.params, &data)?;
    let out = prepare_out(cfg, "evaluate")?;
    write_json(
        &out.join("evaluation.json"),
        &EvaluationReport {
            data: path,
            records: data.len(),
            metrics,
        },
    )?;
    println!(
        "accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}{}",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1,
        if metrics.zero_division { " (zero division)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradcheckReport {
    source: &'static str,
    threshold: f64,
    passed: bool,
    #[serde(flatten)]
    report: FdReport,
}

fn first_records(data: &Dataset, n: usize) -> Vec<&EmbeddingRecord> {
    data.records.iter().take(n.max(1)).collect()
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    if !(g.step > 0.0 && g.threshold > 0.0) {
        return Err(Error::Config("gradcheck step and threshold must be positive".into()));
    }
    let seed = cfg.training.seed;
    let (report, source) = match &cfg.paths.checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let data = load_dataset(required(&cfg.paths.data, "data")?)?;
            let batch = first_records(&data, g.n);
            (finite_diff_check(&model.params, &batch, &cfg.training.weights, g.step, seed)?, "checkpoint")
        }
        None => {
            let (params, records) = random_instance(seed, g.n, g.k_a, g.k_b, g.d_s, g.d_m, g.hidden);
            params.validate()?;
            let batch: Vec<&EmbeddingRecord> = records.iter().collect();
            (finite_diff_check(&params, &batch, &cfg.training.weights, g.step, seed)?, "random")
        }
    };
    let passed = report.max_rel_err <= g.threshold;
    let out = prepare_out(cfg, "gradcheck")?;
    println!(
        "max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e}) over {} of {} parameters",
        report.max_rel_err, report.worst_path, report.analytic, report.numeric, report.checked, report.total_params
    );
    let worst = report.max_rel_err;
    write_json(
        &out.join("gradcheck.json"),
        &GradcheckReport {
            source,
            threshold: g.threshold,
            passed,
            report,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} above {}",
            g.threshold
        )))
    }
}
