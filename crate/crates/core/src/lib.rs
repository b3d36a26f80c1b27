//! Semi-supervised object detection toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: axis-aligned boxes, IoU and box transforms
//! * [`fusion`]: NMS, weighted boxes fusion and test-time-augmentation ensembling
//! * [`metrics`]: COCO-style matching, average precision and mAP
//! * [`augment`]: letterboxing, mosaic and mixup on labelled samples
//! * [`calibration`]: per-class confidence thresholds for pseudo-labels
//! * [`detector`]: the detector contract, EMA updates, a built-in toy
//!   detector, a synthetic scene generator and a subprocess backend
//! * [`pipeline`]: dataset ingestion, splitting, supervised and
//!   teacher-student training loops, experiments and checkpoints
//!
//! Box arithmetic, fusion, evaluation and calibration are generic over
//! [`Scalar`]; the aliases below fix the scalar for the common cases.

pub mod augment;
pub mod calibration;
pub mod detector;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

pub type BBoxF32 = geometry::BBox<f32>;
pub type BBoxF64 = geometry::BBox<f64>;
pub type DetectionF32 = fusion::Detection<f32>;
pub type DetectionF64 = fusion::Detection<f64>;
pub type FusedDetectionF64 = fusion::FusedDetection<f64>;
pub type EvalReportF64 = metrics::EvalReport<f64>;
pub type ParamVectorF64 = detector::ParamVector<f64>;
