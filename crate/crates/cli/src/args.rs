use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mimnet", version, about = "Text-guided image manipulation on a synthetic shapes dataset")]
pub struct Cli {
    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Flat key=value config file applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Config override, applied after --config. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the toy dataset to a directory.
    GenData(GenData),
    /// Train a model on a generated dataset.
    Train(Train),
    /// Rewrite one image according to a caption.
    Manipulate(Manipulate),
    /// Diff, Sim and MP on held-out manipulations, or on a single image pair.
    Eval(Eval),
    /// Finite-difference check of every primitive and composite.
    Gradcheck,
    /// Train the full model and each single ablation, then compare MP.
    Ablate(Ablate),
    /// Decode every memory through the coarse stage on a fixed image.
    DumpMemory(DumpMemory),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub train: usize,
    #[arg(long, default_value_t = 128)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for losses.csv and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; its config is used, with --set applied on top.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Manipulate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PPM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Boundary PGM; computed with the Sobel extractor when omitted.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    #[arg(long)]
    pub caption: String,
    /// Output PPM of the requested stage.
    #[arg(long)]
    pub out: PathBuf,
    /// icm (coarse) or fir (fine).
    #[arg(long, default_value = "fir")]
    pub stage: String,
    /// Also write input | coarse | fine as one PPM strip.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Also write the localization map as a PGM.
    #[arg(long)]
    pub alpha: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Sim scorer file. Loaded when it exists; with --data it is otherwise
    /// trained on the training split and written here.
    #[arg(long)]
    pub scorer: PathBuf,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Per-sample CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub plan_seed: u64,
    /// Single-pair mode: original PPM.
    #[arg(long, conflicts_with = "checkpoint", requires_all = ["after", "caption"])]
    pub before: Option<PathBuf>,
    /// Single-pair mode: manipulated PPM.
    #[arg(long, requires = "before")]
    pub after: Option<PathBuf>,
    #[arg(long, requires = "before")]
    pub caption: Option<String>,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[arg(long)]
    pub data: PathBuf,
    /// One run directory per variant is created below this.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub plan_seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpMemory {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PPM; defaults to a rendered grey-background square.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
