mod commands;
mod detfile;
mod failure;
mod manifest;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use ssod_core::pipeline::config::CONFIG_KEYS;

use failure::Kind;

/// Semi-supervised object detection: data splits, Full and Semi training,
/// evaluation, weighted boxes fusion and paired experiments.
#[derive(Debug, Parser)]
#[command(name = "ssod", version, propagate_version = true)]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE", env = "SSOD_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable and applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (images/, labels/, classes.txt) from the configured world.
    Synth(SynthArgs),
    /// Write Monte-Carlo train/val/test id lists, one directory per replication.
    Split(SplitArgs),
    /// Train a Full (supervised) or Semi (teacher-student) model on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model and write mAP@50, mAP@50:95 and per-class AP.
    Eval(EvalArgs),
    /// Fuse detection files with weighted boxes fusion, one source per file.
    Fuse(FuseArgs),
    /// Run the paired Full-vs-Semi experiment over all replications.
    Simulate(SimulateArgs),
    /// Serve the toy detector over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ServeToy(ServeToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthDomain {
    /// The configured world.
    Basic,
    /// The world after the `shift.*` sensor change.
    Shifted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SynthDomain::Basic)]
    pub domain: SynthDomain,
    /// Number of images [default: n_images, or n_shifted for the shifted domain].
    #[arg(long)]
    pub n: Option<usize>,
    /// Replace the outputs of an earlier run in the same directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset directory with images/, labels/ and classes.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replication seeds; repeat or separate with commas [default: replication_seeds].
    #[arg(long = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Training share [default: split_train].
    #[arg(long)]
    pub train: Option<f64>,
    /// Validation share [default: split_val].
    #[arg(long)]
    pub val: Option<f64>,
    /// Test share [default: split_test].
    #[arg(long)]
    pub test: Option<f64>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    /// Supervised training on the labelled images.
    Full,
    /// Burn-in, then teacher-student training with pseudo-labels.
    Semi,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with images/, labels/ and classes.txt. Images
    /// without a label file are treated as unlabelled.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: TrainMode,
    /// Keep labels on this share of the training split and strip the rest
    /// (Semi uses them unlabelled) [default: keep every label].
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// Extra unlabelled images (a dataset directory; labels, if any, are
    /// only used to audit pseudo-labels).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Directory written by `ssod split`; without it the split is drawn here.
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    /// Replication index to train.
    #[arg(long, default_value_t = 0)]
    pub replication: usize,
    /// Continue from the training state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this epoch, keeping a resumable state.
    #[arg(long)]
    pub stop_after_epoch: Option<usize>,
    #[arg(long)]
    pub overwrite: bool,
    /// Upper bound on concurrent pseudo-labelling threads [default: workers].
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file written by `ssod train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory with images/, labels/ and classes.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// File of image ids to evaluate, one per line [default: every labelled image].
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the ground truth itself instead of the model (every metric is 1).
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Detection files (`image_id,class,conf,x1,y1,x2,y2`), one per source.
    #[arg(required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Clustering IoU threshold [default: wbf_iou].
    #[arg(long)]
    pub iou: Option<f64>,
    /// Drop detections below this confidence before fusing [default: wbf_skip_conf].
    #[arg(long)]
    pub skip_conf: Option<f64>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateMode {
    /// Full on the labelled share vs Semi with the rest unlabelled.
    InDomain,
    /// Full on all basic-domain labels vs Semi with new-domain images unlabelled.
    CrossDomain,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: SimulateMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Basic-domain dataset directory [default: the synthetic world].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// New-domain dataset directory for cross-domain runs [default: the
    /// shifted synthetic world, which needs shift.enabled = true].
    #[arg(long)]
    pub new_domain: Option<PathBuf>,
    /// Training runs (replication x arm) in flight at once [default: available cores].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Upper bound on concurrent pseudo-labelling threads per run [default: workers].
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct ServeToyArgs {
    /// Number of classes [default: world.n_classes].
    #[arg(long)]
    pub n_classes: Option<usize>,
}

fn config_keys_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Config keys (`key = value` lines in --config or $SSOD_CONFIG, or --set key=value):\n",
    );
    for (k, doc) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<width$}  {doc}\n"));
    }
    s.push_str("\nExit codes: 0 success, 2 config or usage error, 3 data error, 4 detector backend error.");
    s
}

fn main() -> ExitCode {
    let help = config_keys_help();
    let cmd = Cli::command()
        .after_help(help.clone())
        .mut_subcommands(|s| s.after_help(help.clone()));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let label = match f.kind {
                Kind::Config => "config error",
                Kind::Data => "data error",
                Kind::Detector => "detector error",
            };
            eprintln!("ssod: {label}: {f}");
            ExitCode::from(f.kind.exit_code())
        }
    }
}
