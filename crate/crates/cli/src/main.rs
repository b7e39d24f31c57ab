use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netinvert::{ConditioningMode, Error};

mod commands;
mod config;
mod manifest;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "netinvert", version, about = "Invert MNIST classifiers with a conditioned generator")]
struct Cli {
    /// JSON experiment config; unspecified fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory with the MNIST IDX files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the classifier and save `classifier.ckpt` (or `classifier_2d.ckpt`).
    TrainClassifier(TrainArgs),
    /// Train a generator against a frozen classifier.
    Invert(InvertArgs),
    /// Render sample grids, t-SNE maps and decision boundaries.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Insert a 2-unit layer before the logits (needed for boundary maps).
    #[arg(long)]
    penultimate_2d: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Label,
    Onehot,
    Soft,
}

impl From<ModeArg> for ConditioningMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Label => ConditioningMode::LabelEmbed,
            ModeArg::Onehot => ConditioningMode::OneHot,
            ModeArg::Soft => ConditioningMode::SoftVector,
        }
    }
}

#[derive(Args, Debug)]
struct InvertArgs {
    /// Classifier checkpoint [default: <out>/classifier.ckpt].
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, value_enum)]
    conditioning: Option<ModeArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Pair only same-label samples in the cosine term.
    #[arg(long)]
    cosine_per_class: bool,
    /// Leave the logits layer out of the cosine term.
    #[arg(long)]
    cosine_exclude_logits: bool,
    /// Suffix for output file names, to keep ablation runs apart.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    Grid,
    Tsne,
    Boundary,
    All,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    which: Which,
    /// Classifier checkpoint [default: <out>/classifier.ckpt].
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Generator checkpoint [default: <out>/generator_<mode>.ckpt].
    #[arg(long)]
    generator: Option<PathBuf>,
    /// 2-D classifier checkpoint [default: <out>/classifier_2d.ckpt].
    #[arg(long)]
    boundary_classifier: Option<PathBuf>,
    #[arg(long, value_enum)]
    conditioning: Option<ModeArg>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Kind { .. }
        | Error::Format { .. }
        | Error::Consistency(_)
        | Error::Integrity(_)
        | Error::Shape(_)
        | Error::Domain(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn resolve(cli: &Cli) -> netinvert::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    match &cli.command {
        Command::TrainClassifier(a) => {
            let t = &mut cfg.classifier_training;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.lr = a.lr.unwrap_or(t.lr);
            cfg.classifier.penultimate_2d |= a.penultimate_2d;
        }
        Command::Invert(a) => {
            if let Some(m) = a.conditioning {
                cfg.generator.conditioning = m.into();
            }
            if let Some(d) = a.dropout {
                cfg.generator.dropout_rate = d;
            }
            let inv = &mut cfg.inversion;
            inv.weights.alpha = a.alpha.unwrap_or(inv.weights.alpha);
            inv.weights.beta = a.beta.unwrap_or(inv.weights.beta);
            inv.weights.gamma = a.gamma.unwrap_or(inv.weights.gamma);
            inv.epochs = a.epochs.unwrap_or(inv.epochs);
            inv.batches_per_epoch = a.batches_per_epoch.unwrap_or(inv.batches_per_epoch);
            inv.batch_size = a.batch_size.unwrap_or(inv.batch_size);
            inv.lr = a.lr.unwrap_or(inv.lr);
            inv.eval_samples = a.eval_samples.unwrap_or(inv.eval_samples);
            inv.cosine_per_class |= a.cosine_per_class;
            inv.cosine_exclude_logits |= a.cosine_exclude_logits;
        }
        Command::Analyze(a) => {
            if let Some(m) = a.conditioning {
                cfg.generator.conditioning = m.into();
            }
        }
    }
    cfg.inversion.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> netinvert::Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::TrainClassifier(_) => commands::train_classifier(&cfg),
        Command::Invert(a) => commands::invert(&cfg, a.classifier, a.tag.as_deref()),
        Command::Analyze(a) => {
            let which = commands::Analyses {
                grid: matches!(a.which, Which::Grid | Which::All),
                tsne: matches!(a.which, Which::Tsne | Which::All),
                boundary: matches!(a.which, Which::Boundary | Which::All),
            };
            commands::analyze(&cfg, which, a.classifier, a.generator, a.boundary_classifier)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
