//! The `jw` command-line tool.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed check, 2 on an
//! internal failure. Every subcommand writes its fully resolved arguments to
//! a JSON sidecar next to its main output.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use jw_core::bounds::{run_bound_suite, summarize, summary_table, InstanceShape, SuiteConfig};
use jw_core::distributions::{
    gen_two_moons_domains, gen_two_moons_labeled, load_domains, write_csv, DatasetSplit,
};
use jw_core::explain::{
    compose, gradient_times_input, lrp_gamma, write_relevance, GammaSchedule, RelevanceSidecar,
};
use jw_core::objective::CriticKind;
use jw_core::trainer::{
    evaluate, export_embeddings, fine_tune, load_checkpoint, save_checkpoint, train, EvalOptions,
    TrainConfig,
};
use jw_core::{derive_seed, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "jw",
    version,
    about = "Joint-distribution Wasserstein domain invariance experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-domain dataset (train.csv and test.csv).
    GenData(GenDataArgs),
    /// Train a feature extractor, classifier and domain critic.
    Train(TrainArgs),
    /// Evaluate accuracies and the exact joint W1 between domain representations.
    EvalWdist(EvalArgs),
    /// Check every transport inequality on random finite instances.
    VerifyBounds(VerifyArgs),
    /// Write LRP-γ relevance maps for selected inputs.
    Explain(ExplainArgs),
    /// Write feature-space embeddings of every point.
    ExportEmbeddings(ExportArgs),
    /// One extra epoch without the critic and with per-domain loss weights.
    FineTune(FineTuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    TwoMoons,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "two-moons")]
    pub kind: DataKind,
    /// Rotation of domain Q in degrees.
    #[arg(long, default_value_t = 35.0)]
    pub rotation: f64,
    /// Points per domain.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Labeled fraction of domain P.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Labeled fraction of domain Q (defaults to alpha).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset CSV with both domains.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML or JSON file with TrainConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `critic_kind`.
    #[arg(long, value_parser = parse_kind)]
    pub critic: Option<CriticKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub w_critic: Option<f64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines metrics log (defaults to `<out>.metrics.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the scale stored with the critic, else 1.
    #[arg(long)]
    pub label_scale: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub subsample_seed: u64,
    /// Metrics JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Instances per lemma-level bound.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Instances per theorem (defaults to min(count, 200)).
    #[arg(long)]
    pub theorem_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub label_scale: f64,
    #[arg(long, default_value_t = 20)]
    pub max_support: usize,
    #[arg(long, default_value_t = 4)]
    pub max_classes: usize,
    #[arg(long, default_value = "bound_reports.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Domain to take rows from.
    #[arg(long, default_value = "P")]
    pub domain: String,
    /// Row indices within the domain (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub index: Vec<usize>,
    /// Target class; defaults to the predicted class of each input.
    #[arg(long)]
    pub target: Option<usize>,
    /// Constant γ for every layer instead of the default schedule.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use Gradient×Input instead of LRP-γ.
    #[arg(long)]
    pub gradient_input: bool,
    /// Relevance CSV path; the sidecar is `<out>` with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FineTuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Classification weights `P,Q`; defaults to 0.75 on the worse domain.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<CriticKind, String> {
    s.parse()
}

/// Sidecar path `<out>.config.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    args: &'a A,
    resolved: C,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_sidecar<A: Serialize, C: Serialize>(
    out: &Path,
    command: &str,
    args: &A,
    resolved: C,
) -> Result<(), CliError> {
    write_json(
        &sidecar_path(out),
        &Resolved {
            command,
            args,
            resolved,
        },
    )
}

/// Command failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A check ran to completion and failed.
    Failed(String),
    Invalid(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Invalid(format!("i/o error on {}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => EXIT_INTERNAL,
            _ => EXIT_INVALID,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(m) | CliError::Invalid(m) => f.write_str(m),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    Ok(match path {
        Some(p) => TrainConfig::from_path(p)?,
        None => TrainConfig::default(),
    })
}

fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let beta = a.beta.unwrap_or(a.alpha);
    let (p, q) = match a.kind {
        DataKind::TwoMoons => {
            gen_two_moons_domains(a.n, a.rotation, a.noise, a.alpha, beta, a.seed)?
        }
    };
    let test_seed = derive_seed(a.seed, 100);
    let (tp, tq) = gen_two_moons_labeled(a.n, a.rotation, a.noise, test_seed)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let train_path = a.out.join("train.csv");
    write_csv(&train_path, &[&p, &q])?;
    write_csv(&a.out.join("test.csv"), &[&tp, &tq])?;
    #[derive(Serialize)]
    struct R {
        beta: f64,
        test_seed: u64,
    }
    write_sidecar(&train_path, "gen-data", a, R { beta, test_seed })
}

fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = a.critic {
        cfg.critic_kind = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(w) = a.w_critic {
        cfg.w_critic = w;
    }
    cfg.validate()?;
    let (p, q) = load_domains(&a.data)?;
    let out = train(&cfg, &p, &q)?;
    save_checkpoint(&out.model, out.critic.as_ref(), &a.out)?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    });
    out.log.write_jsonl(&log)?;
    write_sidecar(&a.out, "train", a, &cfg)
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    let (model, critic) = load_checkpoint(&a.model)?;
    let (p, q) = load_domains(&a.data)?;
    let opts = EvalOptions {
        label_scale: a
            .label_scale
            .unwrap_or_else(|| critic.as_ref().map_or(1.0, |c| c.label_scale)),
        subsample: a.subsample,
        subsample_seed: a.subsample_seed,
    };
    if !(opts.label_scale > 0.0) || opts.subsample == 0 {
        return Err(CliError::Invalid(
            "label scale and subsample must be positive".into(),
        ));
    }
    let m = evaluate(&model, critic.as_ref(), &p, &q, &opts)?;
    write_json(&a.out, &m)?;
    println!("{}", serde_json::to_string(&m).map_err(Error::from)?);
    write_sidecar(&a.out, "eval-wdist", a, opts)
}

fn verify_cmd(a: &VerifyArgs) -> Result<(), CliError> {
    let cfg = SuiteConfig {
        count: a.count,
        theorem_count: a.theorem_count,
        seed: a.seed,
        label_scale: a.label_scale,
        shape: InstanceShape {
            max_support: a.max_support,
            max_classes: a.max_classes,
            ..InstanceShape::default()
        },
    };
    let reports = run_bound_suite(&cfg)?;
    write_json(&a.out, &reports)?;
    let summary = summarize(&reports);
    print!("{}", summary_table(&summary));
    #[derive(Serialize)]
    struct R {
        counts: Vec<(String, usize)>,
        instance_shape: InstanceShapeOut,
    }
    #[derive(Serialize)]
    struct InstanceShapeOut {
        max_support: usize,
        max_classes: usize,
        dim: usize,
        min_prob: f64,
    }
    let r = R {
        counts: jw_core::bounds::BoundId::ALL
            .iter()
            .map(|b| (b.to_string(), cfg.count_for(*b)))
            .collect(),
        instance_shape: InstanceShapeOut {
            max_support: cfg.shape.max_support,
            max_classes: cfg.shape.max_classes,
            dim: cfg.shape.dim,
            min_prob: cfg.shape.min_prob,
        },
    };
    write_sidecar(&a.out, "verify-bounds", a, r)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} bound checks failed")));
    }
    Ok(())
}

fn pick_domain(p: DatasetSplit, q: DatasetSplit, name: &str) -> Result<DatasetSplit, CliError> {
    match name {
        "P" | "p" => Ok(p),
        "Q" | "q" => Ok(q),
        other => Err(CliError::Invalid(format!("unknown domain {other:?}"))),
    }
}

fn explain_cmd(a: &ExplainArgs) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&a.model)?;
    let (p, q) = load_domains(&a.data)?;
    let data = pick_domain(p, q, &a.domain)?;
    let layers = compose(&model)?.layers.len();
    let schedule = match a.gamma {
        Some(g) => GammaSchedule::constant(g, layers),
        None => GammaSchedule::default_for(layers),
    };
    let mut maps = Vec::new();
    for &i in &a.index {
        if i >= data.len() {
            return Err(CliError::Invalid(format!(
                "row {i} out of range for {} rows",
                data.len()
            )));
        }
        let x = data.features.row(i);
        let target = match a.target {
            Some(t) => t,
            None => model.predict(&data.features.select_rows(&[i]))?[0],
        };
        maps.push(if a.gradient_input {
            gradient_times_input(&model, x, target)?
        } else {
            lrp_gamma(&model, x, target, &schedule)?
        });
    }
    let sidecar = RelevanceSidecar {
        gamma_schedule: if a.gradient_input {
            vec![0.0; layers]
        } else {
            schedule.0.clone()
        },
        target_class: maps.iter().map(|m| m.target_class).collect(),
        inputs: a.index.clone(),
    };
    write_relevance(&maps, &sidecar, &a.out, &a.out.with_extension("json"))?;
    write_sidecar(&a.out, "explain", a, &sidecar)
}

fn export_cmd(a: &ExportArgs) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&a.model)?;
    let (p, q) = load_domains(&a.data)?;
    export_embeddings(&model, &[&p, &q], &a.out)?;
    write_sidecar(&a.out, "export-embeddings", a, ())
}

fn fine_tune_cmd(a: &FineTuneArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, critic) = load_checkpoint(&a.model)?;
    let (p, q) = load_domains(&a.data)?;
    let weights = match a.weights.as_deref() {
        Some(&[wp, wq]) if wp >= 0.0 && wq >= 0.0 => Some((wp, wq)),
        Some(_) => {
            return Err(CliError::Invalid(
                "--weights takes two nonnegative values `P,Q`".into(),
            ))
        }
        None => Some(jw_core::trainer::default_domain_weights(&model, &p, &q)?),
    };
    let tuned = fine_tune(&model, &cfg, &p, &q, weights)?;
    save_checkpoint(&tuned, critic.as_ref(), &a.out)?;
    #[derive(Serialize)]
    struct R<'a> {
        config: &'a TrainConfig,
        domain_weights: Option<(f64, f64)>,
    }
    write_sidecar(
        &a.out,
        "fine-tune",
        a,
        R {
            config: &cfg,
            domain_weights: weights,
        },
    )
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::EvalWdist(a) => eval_cmd(a),
        Command::VerifyBounds(a) => verify_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::ExportEmbeddings(a) => export_cmd(a),
        Command::FineTune(a) => fine_tune_cmd(a),
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_INVALID,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
