//! Detector construction from a [`Config`].

use std::time::Duration;

use super::config::{Config, DetectorKind};
use super::train::DetectorFactory;
use crate::detector::{Detector, DetectorError, SubprocessDetector, ToyConfig, ToyDetector};

/// Creates the configured backend: the toy detector, or one worker process per instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Toy(ToyConfig),
    Subprocess { command: Vec<String>, timeout: Duration },
}

impl Backend {
    pub fn from_config(cfg: &Config, n_classes: usize) -> Self {
        match cfg.experiment.detector.kind {
            DetectorKind::Toy => Backend::Toy(cfg.toy_config(n_classes)),
            DetectorKind::Subprocess => Backend::Subprocess {
                command: cfg.experiment.detector.command.clone(),
                timeout: Duration::from_millis(cfg.experiment.detector.timeout_ms),
            },
        }
    }
}

impl DetectorFactory for Backend {
    fn create(&self) -> Result<Box<dyn Detector>, DetectorError> {
        match self {
            Backend::Toy(cfg) => Ok(Box::new(ToyDetector::new(cfg.clone())?)),
            Backend::Subprocess { command, timeout } => Ok(Box::new(SubprocessDetector::spawn(command, *timeout)?)),
        }
    }
}
