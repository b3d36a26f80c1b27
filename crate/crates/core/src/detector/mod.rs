//! The detector contract and everything that plugs into it.
//!
//! Teacher and student are two instances of the same detector; they share an
//! architecture exactly when their [`ParamVector`]s have the same length.

pub mod protocol;
pub mod subprocess;
pub mod synth;
pub mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::Sample;
use crate::fusion::Detection;
use crate::image::Image;
use crate::Scalar;

pub use subprocess::SubprocessDetector;
pub use synth::{synth_generate, ShiftParams, SynthDomainConfig};
pub use toy::{ToyConfig, ToyDetector};

/// Flat parameter vector exposed by every detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T = f64> {
    pub values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

impl ParamVector<f64> {
    /// Little-endian `f64` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if !bytes.len().is_multiple_of(8) {
            return None;
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Some(Self { values })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("parameter length mismatch: expected {expected}, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("detector process exited ({status}); last payload: {payload}")]
    ProcessExited { status: String, payload: String },
    #[error("protocol error on response line {line}: {reason}; payload: {payload}")]
    Protocol {
        line: usize,
        reason: String,
        payload: String,
    },
    #[error("detector timed out after {millis} ms during `{op}`")]
    Timeout { op: String, millis: u128 },
    #[error("detector backend reported an error: {0}")]
    Backend(String),
    #[error("i/o error talking to detector: {0}")]
    Io(String),
}

/// Capability every detector backend provides to the training harness.
pub trait Detector: Send + Sync {
    fn predict(&self, images: &[Image]) -> Result<Vec<Vec<Detection<f64>>>, DetectorError>;

    /// One optimisation step on a batch with per-box weights; returns the loss.
    fn train_step(&mut self, batch: &[Sample]) -> Result<f64, DetectorError>;

    fn get_params(&self) -> Result<ParamVector<f64>, DetectorError>;

    fn set_params(&mut self, params: &ParamVector<f64>) -> Result<(), DetectorError>;

    /// Whether `predict` may be called from several threads at once.
    fn concurrent_predict(&self) -> bool {
        false
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("EMA length mismatch: teacher has {teacher} values, student has {student}")]
pub struct EmaLengthMismatch {
    pub teacher: usize,
    pub student: usize,
}

/// `decay * teacher + (1 - decay) * student`, element-wise.
pub fn ema_update<T: Scalar>(
    teacher: &ParamVector<T>,
    student: &ParamVector<T>,
    decay: T,
) -> Result<ParamVector<T>, EmaLengthMismatch> {
    if teacher.len() != student.len() {
        return Err(EmaLengthMismatch {
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    let keep = T::one() - decay;
    let values = teacher
        .values
        .iter()
        .zip(&student.values)
        .map(|(&t, &s)| {
            // Exact endpoints so decay 0 / 1 reproduce their inputs bit for bit.
            if decay == T::zero() {
                s
            } else if decay == T::one() || t == s {
                t
            } else {
                decay * t + keep * s
            }
        })
        .collect();
    Ok(ParamVector { values })
}
