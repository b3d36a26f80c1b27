//! Per-class confidence thresholds for turning teacher predictions into
//! pseudo-labels.
//!
//! Each semi-supervised epoch the teacher scores a capped random sample of
//! unlabelled images. For class `c` the expected number of boxes on that
//! sample is `round(freq[c] * n_images)`, where `freq` is the mean number of
//! class-`c` boxes per labelled image; the threshold is the confidence of the
//! prediction at that rank, clamped to `[tau_min, tau_max]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{LabeledBox, Sample};
use crate::detector::{Detector, DetectorError};
use crate::fusion::FusedDetection;
use crate::pipeline::dataset::Dataset;
use crate::Scalar;

pub const DEFAULT_CAP: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("cannot build a class-frequency profile from an empty dataset")]
    EmptyDataset,
    #[error("no threshold for class {0}")]
    MissingClass(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencyProfile<T = f64> {
    /// Mean class-`c` instances per labelled image.
    pub freq: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds<T = f64> {
    pub tau: BTreeMap<usize, T>,
    pub epoch: usize,
    /// Images scored to derive these thresholds.
    pub sample_size: usize,
}

impl<T: Scalar> ClassThresholds<T> {
    pub fn uniform(n_classes: usize, tau: T) -> Self {
        Self {
            tau: (0..n_classes).map(|c| (c, tau)).collect(),
            epoch: 0,
            sample_size: 0,
        }
    }

    /// Rows of the `epoch,class,tau,sample_size` calibration log.
    pub fn log_rows(&self) -> String {
        let mut s = String::new();
        for (c, t) in &self.tau {
            let _ = writeln!(s, "{},{},{},{}", self.epoch, c, t, self.sample_size);
        }
        s
    }
}

pub const CALIBRATION_LOG_HEADER: &str = "epoch,class,tau,sample_size";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationMode {
    /// Frequency-matched order statistic, recomputed every epoch.
    Frequency,
    /// `fixed_tau` for every class.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub fixed_tau: f64,
    pub cap: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Pseudo-label weight = confidence when set, otherwise 1.
    pub soft_weights: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: CalibrationMode::Frequency,
            fixed_tau: 0.5,
            cap: DEFAULT_CAP,
            tau_min: 0.25,
            tau_max: 0.95,
            soft_weights: true,
        }
    }
}

pub fn labeled_frequency_profile(labeled: &Dataset) -> Result<ClassFrequencyProfile<f64>, CalibrationError> {
    frequency_profile(&labeled.samples, labeled.n_classes())
}

/// Mean boxes of each class per sample.
pub fn frequency_profile(samples: &[Sample], n_classes: usize) -> Result<ClassFrequencyProfile<f64>, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    let mut counts = vec![0usize; n_classes];
    for s in samples {
        for b in &s.boxes {
            if b.class_id < n_classes {
                counts[b.class_id] += 1;
            }
        }
    }
    let n = samples.len() as f64;
    Ok(ClassFrequencyProfile {
        freq: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Teacher confidences per class on the scored sample, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSample {
    pub per_class: BTreeMap<usize, Vec<f64>>,
    pub n_images: usize,
}

/// Scores `min(cap, |unlabeled|)` images drawn without replacement with
/// plain (non-TTA) teacher predictions.
pub fn collect_confidences<R: Rng + ?Sized>(
    teacher: &dyn Detector,
    unlabeled: &[Sample],
    cap: usize,
    rng: &mut R,
) -> Result<ConfidenceSample, DetectorError> {
    if cap == 0 {
        return Err(DetectorError::InvalidInput("calibration cap must be >= 1".into()));
    }
    let n = cap.min(unlabeled.len());
    let mut chosen = sample_indices(rng, unlabeled.len(), n).into_vec();
    chosen.sort_unstable();
    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for chunk in chosen.chunks(64) {
        let images: Vec<_> = chunk.iter().map(|&i| unlabeled[i].image.clone()).collect();
        for dets in teacher.predict(&images)? {
            for d in dets {
                per_class.entry(d.class_id).or_default().push(d.confidence);
            }
        }
    }
    for v in per_class.values_mut() {
        v.sort_by(|a, b| b.total_cmp(a));
    }
    Ok(ConfidenceSample { per_class, n_images: n })
}

/// Frequency-matched thresholds.
///
/// `confs[c]` must be sorted descending. Classes absent from `profile`
/// (or with zero frequency) get `tau_max`.
pub fn update_thresholds<T: Scalar>(
    confs: &BTreeMap<usize, Vec<T>>,
    profile: &ClassFrequencyProfile<T>,
    n_images: usize,
    bounds: (T, T),
) -> ClassThresholds<T> {
    let (tau_min, tau_max) = bounds;
    let n = T::from_usize_lossy(n_images.max(1));
    let tau = profile
        .freq
        .iter()
        .enumerate()
        .map(|(c, &f)| {
            let target = (f * n).round().to_usize().unwrap_or(0);
            let list = confs.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let t = if f <= T::zero() || target == 0 || list.len() < target {
                tau_max
            } else {
                list[target - 1]
            };
            (c, t.max(tau_min).min(tau_max))
        })
        .collect();
    ClassThresholds {
        tau,
        epoch: 0,
        sample_size: n_images,
    }
}

/// Keeps fused detections whose confidence reaches their class threshold.
pub fn filter_pseudo_labels<T: Scalar>(
    fused: &[FusedDetection<T>],
    tau: &ClassThresholds<T>,
    soft_weights: bool,
) -> Result<Vec<LabeledBox>, CalibrationError> {
    let mut out = Vec::new();
    for d in fused {
        let &t = tau.tau.get(&d.class_id).ok_or(CalibrationError::MissingClass(d.class_id))?;
        if d.confidence >= t {
            let weight = if soft_weights { d.confidence.to_f64_lossy() } else { 1.0 };
            out.push(LabeledBox::new(d.bbox.map(|v| v.to_f64_lossy()), d.class_id, weight));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::image::Image;

    fn labeled_sample(classes: &[usize]) -> Sample {
        Sample {
            id: "x".into(),
            image: Image::filled(4, 4, 3, 0.5),
            boxes: classes
                .iter()
                .map(|&c| LabeledBox::new(BBox::new(0., 0., 1., 1.), c, 1.0))
                .collect(),
            domain: "basic".into(),
            labeled: true,
        }
    }

    fn ds(samples: Vec<Sample>, n_classes: usize) -> Dataset {
        Dataset {
            samples,
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn frequency_profile_examples() {
        let mut samples: Vec<Sample> = (0..10).map(|_| labeled_sample(&[0, 0])).collect();
        samples[0].boxes.truncate(2);
        let p = labeled_frequency_profile(&ds(samples, 2)).unwrap();
        assert_eq!(p.freq, vec![2.0, 0.0]);

        let p = labeled_frequency_profile(&ds(vec![labeled_sample(&[0, 1, 2])], 3)).unwrap();
        assert_eq!(p.freq, vec![1.0, 1.0, 1.0]);

        assert_eq!(
            labeled_frequency_profile(&ds(vec![], 2)).unwrap_err(),
            CalibrationError::EmptyDataset
        );
    }

    #[test]
    fn threshold_examples() {
        let confs: BTreeMap<usize, Vec<f64>> =
            [(0, vec![0.9, 0.8, 0.7, 0.2]), (1, vec![0.6]), (2, vec![0.99, 0.98])].into();
        let profile = ClassFrequencyProfile {
            freq: vec![1.0, 1.0, 0.0],
        };
        let t = update_thresholds(&confs, &profile, 3, (0.25, 0.95));
        assert_eq!(t.tau[&0], 0.7);
        assert_eq!(t.tau[&1], 0.95);
        assert_eq!(t.tau[&2], 0.95);
        assert_eq!(t.sample_size, 3);
    }

    #[test]
    fn thresholds_are_clamped_low() {
        let confs: BTreeMap<usize, Vec<f64>> = [(0, vec![0.2, 0.1])].into();
        let t = update_thresholds(&confs, &ClassFrequencyProfile { freq: vec![1.0] }, 2, (0.25, 0.95));
        assert_eq!(t.tau[&0], 0.25);
    }

    #[test]
    fn filter_examples() {
        let tau = ClassThresholds {
            tau: [(0, 0.7)].into(),
            epoch: 1,
            sample_size: 10,
        };
        let fd = |conf: f64| FusedDetection {
            bbox: BBox::new(0., 0., 2., 2.),
            class_id: 0,
            confidence: conf,
            cluster_size: 1,
        };
        let kept = filter_pseudo_labels(&[fd(0.8)], &tau, true).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].weight, 0.8);
        assert!(filter_pseudo_labels(&[fd(0.69)], &tau, true).unwrap().is_empty());
        assert!(filter_pseudo_labels::<f64>(&[], &tau, true).unwrap().is_empty());
        assert_eq!(filter_pseudo_labels(&[fd(0.8)], &tau, false).unwrap()[0].weight, 1.0);
        let other = FusedDetection { class_id: 4, ..fd(0.9) };
        assert_eq!(
            filter_pseudo_labels(&[other], &tau, true).unwrap_err(),
            CalibrationError::MissingClass(4)
        );
    }

    #[test]
    fn log_rows_format() {
        let t = ClassThresholds {
            tau: [(0, 0.5), (1, 0.95)].into(),
            epoch: 19,
            sample_size: 1000,
        };
        assert_eq!(t.log_rows(), "19,0,0.5,1000\n19,1,0.95,1000\n");
    }
}
