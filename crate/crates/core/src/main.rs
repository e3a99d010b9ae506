use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vitscope::gradcam::{ScoreMode, ScoreSelector};
use vitscope::neurons::Aggregator;
use vitscope::pipeline::{Outcome, Pipeline, RunConfig, Stage};
use vitscope::{Error, Result};

/// Train a miniature ViT on synthetic shapes and analyse its neurons.
///
/// Settings are resolved as defaults, then the `--config` JSON file, then
/// command-line flags.
#[derive(Parser, Debug)]
#[command(name = "vitscope", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Rerun the stage even when its artifacts are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and rasterize the shapes dataset and probe set.
    Gen(GenArgs),
    /// Train the encoder on feature detection.
    Train(TrainArgs),
    /// Build the activation matrix and rank neurons by entropy.
    Neurons(NeuronArgs),
    /// Grad-CAM heatmaps for chosen images and feature selectors.
    Gradcam(GradCamArgs),
    /// Superposition score, centroid distance and misclassification sweep.
    Superpos(SuperposArgs),
    /// Assemble report.md from the analysis artifacts.
    Report,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    probe_repeats: Option<u32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggregatorArg {
    MeanPatches,
    MaxPatches,
    Cls,
}

#[derive(Args, Debug)]
struct NeuronArgs {
    /// Top-k images per neuron.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    aggregator: Option<AggregatorArg>,
    /// Feature-neuron percentile cutoff.
    #[arg(long)]
    cutoff: Option<f64>,
}

#[derive(Args, Debug)]
struct GradCamArgs {
    /// Dataset image id (repeatable).
    #[arg(long = "image")]
    images: Vec<u64>,
    /// Feature set such as `green+square` (repeatable).
    #[arg(long = "selector")]
    selectors: Vec<String>,
    /// Block to explain; defaults to the last.
    #[arg(long)]
    layer: Option<usize>,
    /// Differentiate the softmax over all selectors instead of the raw logit sum.
    #[arg(long)]
    softmax: bool,
}

#[derive(Args, Debug)]
struct SuperposArgs {
    /// Number of lowest-entropy neurons in the superposition score.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    leave_one_out: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(ws) = &cli.workspace {
        c.workspace = ws.clone();
    }
    match &cli.command {
        Command::Gen(a) => {
            if let Some(v) = a.images {
                c.dataset.image_count = v;
            }
            if let Some(v) = a.probe_repeats {
                c.dataset.probe_repeats = v;
            }
        }
        Command::Train(a) => {
            if let Some(v) = a.epochs {
                c.train.epochs = v;
            }
            if let Some(v) = a.lr {
                c.train.lr = v;
            }
            if let Some(v) = a.batch_size {
                c.train.batch_size = v;
            }
        }
        Command::Neurons(a) => {
            if let Some(v) = a.k {
                c.analysis.top_k = v;
            }
            if let Some(v) = a.aggregator {
                c.analysis.aggregator = match v {
                    AggregatorArg::MeanPatches => Aggregator::MeanPatches,
                    AggregatorArg::MaxPatches => Aggregator::MaxPatches,
                    AggregatorArg::Cls => Aggregator::Cls,
                };
            }
            if let Some(v) = a.cutoff {
                c.analysis.cutoff_percent = v;
            }
        }
        Command::Gradcam(a) => {
            if !a.images.is_empty() {
                c.gradcam.images = a.images.clone();
            }
            if !a.selectors.is_empty() {
                c.gradcam.selectors = a
                    .selectors
                    .iter()
                    .map(|s| ScoreSelector::parse(s))
                    .collect::<Result<_>>()?;
            }
            if a.layer.is_some() {
                c.gradcam.layer = a.layer;
            }
            if a.softmax {
                c.gradcam.mode = ScoreMode::Softmax {
                    candidates: c.gradcam.selectors.clone(),
                };
            }
        }
        Command::Superpos(a) => {
            if a.n.is_some() {
                c.analysis.superposition_neurons = a.n;
            }
            if a.leave_one_out {
                c.analysis.leave_one_out = true;
            }
        }
        Command::Report => {}
    }
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let pipeline = Pipeline::new(resolve(cli)?)?;
    let (stage, outcome) = match &cli.command {
        Command::Gen(_) => (Stage::Gen, pipeline.gen(cli.force)?),
        Command::Train(_) => (Stage::Train, pipeline.train(cli.force)?),
        Command::Neurons(_) => (Stage::Neurons, pipeline.neurons(cli.force)?),
        Command::Gradcam(_) => (Stage::GradCam, pipeline.gradcam(cli.force)?),
        Command::Superpos(_) => (Stage::Superpos, pipeline.superpos(cli.force)?),
        Command::Report => (Stage::Report, pipeline.report(cli.force)?),
    };
    let dir = pipeline.dir(stage);
    match outcome {
        Outcome::Ran => println!("{}: wrote {}", stage.command(), dir.display()),
        Outcome::UpToDate => println!(
            "{}: artifacts in {} are up to date",
            stage.command(),
            dir.display()
        ),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) => 2,
        Error::MissingPrerequisite { .. } | Error::Stale { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
