//! Error classes and the exit codes they map to.

use std::fmt;

use ssod_core::pipeline::checkpoint::CheckpointError;
use ssod_core::pipeline::experiment::ExperimentError;
use ssod_core::pipeline::split::SplitError;
use ssod_core::pipeline::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad configuration, flags or command usage.
    Config,
    /// Missing, malformed or inconsistent input files.
    Data,
    /// The detector backend failed.
    Detector,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Detector => 4,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure { kind: Kind::Config, error: e.into() }
}

pub fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure { kind: Kind::Data, error: e.into() }
}

pub fn detector(e: impl Into<anyhow::Error>) -> Failure {
    Failure { kind: Kind::Detector, error: e.into() }
}

/// Attaches a class and a context line to any error.
pub trait Classify<T> {
    fn or_config(self, ctx: impl fmt::Display) -> CmdResult<T>;
    fn or_data(self, ctx: impl fmt::Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_config(self, ctx: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| config(e.into().context(ctx.to_string())))
    }

    fn or_data(self, ctx: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| data(e.into().context(ctx.to_string())))
    }
}

pub fn train_kind(e: &TrainError) -> Kind {
    match e {
        TrainError::Detector { .. } | TrainError::Ema(_) => Kind::Detector,
        _ => Kind::Data,
    }
}

pub fn from_train(e: TrainError) -> Failure {
    Failure { kind: train_kind(&e), error: e.into() }
}

pub fn from_experiment(e: ExperimentError) -> Failure {
    let kind = match &e {
        ExperimentError::Train { source, .. } => train_kind(source),
        ExperimentError::Split(SplitError::TooSmall(_)) => Kind::Data,
        ExperimentError::Split(_) => Kind::Config,
        ExperimentError::MissingData(_) | ExperimentError::Leak { .. } => Kind::Data,
    };
    Failure { kind, error: e.into() }
}

pub fn from_checkpoint(e: CheckpointError, path: &std::path::Path) -> Failure {
    data(anyhow::Error::new(e).context(format!("cannot read checkpoint {}", path.display())))
}
