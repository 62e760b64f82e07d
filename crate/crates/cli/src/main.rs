use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcnn::{Activation, Precision, TemplateSet};

mod commands;
mod config;

use config::{parse_precision, RunConfig, RunMode};

#[derive(Parser)]
#[command(
    name = "dcnn",
    version,
    about = "Sentence classification with dependency-tree convolutions"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DCNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (split or cross-validation protocol).
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Predict labels as JSON lines.
    Predict(PredictArgs),
    /// Dump template windows, or compare two checkpoints.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; flags override its fields.
    #[arg(long, env = "DCNN_CONFIG")]
    config: Option<PathBuf>,
    /// Training sentences (CoNLL-U / CoNLL-X).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label sidecar for --data, one label per sentence.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    dev_data: Option<PathBuf>,
    #[arg(long)]
    dev_labels: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<RunMode>,
    #[arg(long)]
    folds: Option<usize>,
    /// Held-out share of training data for early stopping.
    #[arg(long)]
    dev_frac: Option<f64>,
    /// Template list, e.g. `default`, `sequential` or `anc:3,sib:ls-m-h,seq:3`.
    #[arg(long, env = "DCNN_TEMPLATES")]
    templates: Option<TemplateSet>,
    /// word2vec text vectors.
    #[arg(long, env = "DCNN_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    /// Random vectors when no embedding file is usable.
    #[arg(long, env = "DCNN_RANDOM_EMBEDDINGS")]
    random_embeddings: bool,
    #[arg(long)]
    dim: Option<usize>,
    /// Filters per template.
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    dropout: Option<f64>,
    /// L2 cap on softmax rows.
    #[arg(long)]
    max_norm: Option<f64>,
    /// Keep word vectors fixed.
    #[arg(long)]
    static_embeddings: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, env = "DCNN_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "DCNN_PRECISION", value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Keep full labels (e.g. `LOC:city`) instead of the part before ':'.
    #[arg(long)]
    fine_labels: bool,
    /// Reject sentences with several words attached to ROOT.
    #[arg(long)]
    strict_roots: bool,
    #[arg(long)]
    min_count: Option<usize>,
    /// Sum batch gradients in completion order (faster, not bit-reproducible).
    #[arg(long)]
    unordered_reduction: bool,
    /// Continue from a training-state checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, env = "DCNN_OUT")]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($target).+ = v; })*
            };
        }
        macro_rules! set_some {
            ($($field:ident),* $(,)?) => {
                $(if self.$field.is_some() { c.$field = self.$field; })*
            };
        }
        set_some!(
            data,
            labels,
            dev_data,
            dev_labels,
            test_data,
            test_labels,
            embeddings,
            resume,
            out
        );
        set!(
            mode => mode,
            folds => folds,
            min_count => min_count,
            precision => precision,
            dev_frac => train.dev_fraction,
            batch_size => train.batch_size,
            epochs => train.max_epochs,
            patience => train.patience,
            rho => train.rho,
            epsilon => train.epsilon,
            seed => train.seed,
            templates => model.templates,
            dim => model.embedding_dim,
            filters => model.filters_per_template,
            activation => model.activation,
            dropout => model.dropout,
        );
        if self.max_norm.is_some() {
            c.model.max_norm = self.max_norm;
        }
        c.random_embeddings |= self.random_embeddings;
        c.fine_labels |= self.fine_labels;
        c.strict_roots |= self.strict_roots;
        if self.static_embeddings {
            c.model.trainable_embeddings = false;
        }
        if self.unordered_reduction {
            c.train.ordered_reduction = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for eval.json and errors.txt.
    #[arg(long, env = "DCNN_OUT", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional gold labels to include in the output.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Templates to dump (default: those of --model-a, else `default`).
    #[arg(long)]
    templates: Option<TemplateSet>,
    #[arg(long)]
    model_a: Option<PathBuf>,
    #[arg(long, requires = "model_a")]
    model_b: Option<PathBuf>,
    /// Directory for the disagreement files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Eval(a) => commands::eval(&a.model, &a.data, a.labels.as_deref(), &a.out),
        Command::Predict(a) => {
            commands::predict(&a.model, &a.data, a.labels.as_deref(), a.out.as_deref())
        }
        Command::Inspect(a) => commands::inspect(commands::InspectRequest {
            data: &a.data,
            labels: a.labels.as_deref(),
            templates: a.templates,
            model_a: a.model_a.as_deref(),
            model_b: a.model_b.as_deref(),
            out: &a.out,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
