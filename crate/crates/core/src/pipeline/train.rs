//! Supervised and teacher-student training loops.
//!
//! Every epoch draws its randomness from a stream derived from
//! `(seed, epoch)`, so a run resumed from the state saved after epoch `k`
//! continues exactly as the uninterrupted run would have.

use std::collections::BTreeMap;
use std::thread;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::{Checkpoint, CheckpointError};
use super::config::{EmaCadence, TrainConfig};
use super::record::{EpochRecord, Phase, TrainLog, TrainMode};
use super::split::AuditStore;
use crate::augment::{augment_pseudo_stream, letterbox_sample, AugmentError, Sample};
use crate::calibration::{
    collect_confidences, filter_pseudo_labels, frequency_profile, update_thresholds, CalibrationError, CalibrationMode,
    ClassThresholds,
};
use crate::detector::{ema_update, Detector, DetectorError, EmaLengthMismatch, ParamVector};
use crate::fusion::tta_ensemble;
use crate::metrics::{map_scores, EvalError, EvalReport, ImageDetections};
use crate::rng::{stream, tag};

/// Builds fresh detector instances for the student and the teacher.
pub trait DetectorFactory: Sync {
    fn create(&self) -> Result<Box<dyn Detector>, DetectorError>;
}

impl<F> DetectorFactory for F
where
    F: Fn() -> Result<Box<dyn Detector>, DetectorError> + Sync,
{
    fn create(&self) -> Result<Box<dyn Detector>, DetectorError> {
        self()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("invalid training input: {0}")]
    Input(String),
    #[error("detector backend failed in epoch {epoch}: {source}")]
    Detector {
        epoch: usize,
        #[source]
        source: DetectorError,
        /// State after the last completed epoch, if any.
        state: Option<Box<TrainState>>,
    },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ema(#[from] EmaLengthMismatch),
    #[error("epoch hook failed: {0}")]
    Hook(String),
    #[error("resume state does not fit this run: {0}")]
    Resume(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything needed to continue a run after a completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub mode: TrainMode,
    pub seed: u64,
    pub epochs_done: usize,
    pub student: ParamVector<f64>,
    pub teacher: Option<ParamVector<f64>>,
    /// Parameters of the best model selected so far.
    pub best: Option<ParamVector<f64>>,
    pub thresholds: Option<ClassThresholds<f64>>,
    pub log: TrainLog,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    mode: TrainMode,
    seed: u64,
    epochs_done: usize,
    /// Per-epoch random streams are derived from `(seed, epoch)`.
    rng: String,
    thresholds: Option<ClassThresholds<f64>>,
    log: TrainLog,
}

const STATE_KIND: &str = "train_state";

impl TrainState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = StateMeta {
            kind: STATE_KIND.into(),
            mode: self.mode,
            seed: self.seed,
            epochs_done: self.epochs_done,
            rng: format!("chacha8 streams derived from (seed={}, epoch)", self.seed),
            thresholds: self.thresholds.clone(),
            log: self.log.clone(),
        };
        let mut tensors = vec![("student".to_string(), self.student.clone())];
        if let Some(t) = &self.teacher {
            tensors.push(("teacher".into(), t.clone()));
        }
        if let Some(b) = &self.best {
            tensors.push(("best".into(), b.clone()));
        }
        Checkpoint {
            meta: serde_json::to_string(&meta).expect("state metadata serialises"),
            tensors,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, TrainError> {
        let meta: StateMeta = serde_json::from_str(&c.meta)
            .map_err(|e| TrainError::Resume(format!("checkpoint metadata is not a training state: {e}")))?;
        if meta.kind != STATE_KIND {
            return Err(TrainError::Resume(format!("checkpoint holds `{}`, not a training state", meta.kind)));
        }
        let opt = |name: &str| c.tensor(name).ok().cloned();
        Ok(Self {
            mode: meta.mode,
            seed: meta.seed,
            epochs_done: meta.epochs_done,
            student: c.tensor("student")?.clone(),
            teacher: opt("teacher"),
            best: opt("best"),
            thresholds: meta.thresholds,
            log: meta.log,
        })
    }
}

/// Called with the state after every completed epoch.
pub type EpochHook<'a> = &'a mut dyn FnMut(&TrainState) -> Result<(), String>;

/// Resume, early stop and per-epoch callbacks.
#[derive(Default)]
pub struct TrainControl<'a> {
    pub resume: Option<TrainState>,
    /// Return after this epoch has been completed and reported.
    pub stop_after_epoch: Option<usize>,
    pub on_epoch: Option<EpochHook<'a>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Selected model: the student for supervised runs, the teacher otherwise.
    pub params: ParamVector<f64>,
    pub log: TrainLog,
    pub state: TrainState,
    /// False when stopped early by `stop_after_epoch`.
    pub completed: bool,
}

/// Letterboxed samples for a `target x target` detector.
pub fn prepare(samples: &[Sample], target: usize) -> Vec<Sample> {
    samples.iter().map(|s| letterbox_sample(s, target)).collect()
}

const PREDICT_CHUNK: usize = 64;

pub fn predict_all(det: &dyn Detector, samples: &[Sample]) -> Result<Vec<ImageDetections<f64>>, DetectorError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let preds = det.predict(&images)?;
        if preds.len() != chunk.len() {
            return Err(DetectorError::InvalidInput(format!(
                "detector returned {} prediction lists for {} images",
                preds.len(),
                chunk.len()
            )));
        }
        for (s, d) in chunk.iter().zip(preds) {
            out.push(ImageDetections {
                image_id: s.id.clone(),
                detections: d,
            });
        }
    }
    Ok(out)
}

pub fn ground_truth(samples: &[Sample]) -> Vec<crate::metrics::ImageGroundTruth<f64>> {
    samples
        .iter()
        .map(|s| crate::metrics::ImageGroundTruth {
            image_id: s.id.clone(),
            boxes: s
                .boxes
                .iter()
                .map(|b| crate::metrics::GroundTruthBox {
                    bbox: b.bbox,
                    class_id: b.class_id,
                })
                .collect(),
        })
        .collect()
}

/// Predicts on `samples` and scores against their boxes.
pub fn evaluate(det: &dyn Detector, samples: &[Sample], n_classes: usize) -> Result<EvalReport<f64>, TrainError> {
    let preds = predict_all(det, samples).map_err(|source| TrainError::Detector {
        epoch: 0,
        source,
        state: None,
    })?;
    Ok(map_scores(&preds, &ground_truth(samples), n_classes)?)
}

/// Loads `params` into a fresh detector, predicts on `samples` and scores.
pub fn evaluate_params(
    factory: &dyn DetectorFactory,
    params: &ParamVector<f64>,
    samples: &[Sample],
    n_classes: usize,
) -> Result<(EvalReport<f64>, Vec<ImageDetections<f64>>), TrainError> {
    let wrap = |source| TrainError::Detector {
        epoch: 0,
        source,
        state: None,
    };
    let mut det = factory.create().map_err(wrap)?;
    det.set_params(params).map_err(wrap)?;
    let preds = predict_all(det.as_ref(), samples).map_err(wrap)?;
    let report = map_scores(&preds, &ground_truth(samples), n_classes)?;
    Ok((report, preds))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[tag("labeled-order"), epoch as u64]));
    idx
}

fn labeled_batches(train: &[Sample], cfg: &TrainConfig, epoch: usize) -> Vec<Vec<Sample>> {
    epoch_order(train.len(), cfg.seed, epoch)
        .chunks(cfg.batch_size)
        .map(|c| c.iter().map(|&i| train[i].clone()).collect())
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Pseudo-labels each sample with the teacher; order is preserved.
fn pseudo_label(
    teacher: &dyn Detector,
    samples: &[&Sample],
    thresholds: &ClassThresholds<f64>,
    cfg: &TrainConfig,
) -> Result<Vec<Sample>, TrainError> {
    let label_one = |s: &Sample| -> Result<Sample, TrainError> {
        let views: Vec<_> = cfg.tta.iter().map(|op| op.transform(s.width(), s.height())).collect();
        let fused = tta_ensemble(teacher, &s.image, &views, cfg.wbf).map_err(|source| TrainError::Detector {
            epoch: thresholds.epoch,
            source,
            state: None,
        })?;
        let boxes = filter_pseudo_labels(&fused, thresholds, cfg.calibration.soft_weights)?;
        Ok(Sample {
            boxes,
            labeled: false,
            ..s.clone()
        })
    };
    let workers = if teacher.concurrent_predict() { cfg.workers.max(1) } else { 1 };
    if workers == 1 || samples.len() < 2 {
        return samples.iter().map(|s| label_one(s)).collect();
    }
    let chunk = samples.len().div_ceil(workers);
    thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| label_one(s)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("pseudo-labelling worker panicked")?);
        }
        Ok(out)
    })
}

struct Runner<'a, 'c> {
    cfg: &'a TrainConfig,
    n_classes: usize,
    val: &'a [Sample],
    ctl: TrainControl<'c>,
}

impl Runner<'_, '_> {
    fn det_err(&self, epoch: usize, state: &TrainState) -> impl Fn(DetectorError) -> TrainError {
        let snapshot = (state.epochs_done > 0).then(|| Box::new(state.clone()));
        move |source| TrainError::Detector {
            epoch,
            source,
            state: snapshot.clone(),
        }
    }

    fn evaluate(&self, det: &dyn Detector, epoch: usize, state: &TrainState) -> Result<EvalReport<f64>, TrainError> {
        let preds = predict_all(det, self.val).map_err(self.det_err(epoch, state))?;
        Ok(map_scores(&preds, &ground_truth(self.val), self.n_classes)?)
    }

    /// Reports a finished epoch; returns true when the run should stop here.
    fn finish_epoch(&mut self, state: &TrainState) -> Result<bool, TrainError> {
        if let Some(hook) = self.ctl.on_epoch.as_mut() {
            hook(state).map_err(TrainError::Hook)?;
        }
        Ok(self.ctl.stop_after_epoch == Some(state.epochs_done))
    }

    fn consider(&self, state: &mut TrainState, epoch: usize, val: &EvalReport<f64>, params: &ParamVector<f64>) {
        // An empty validation set selects the latest candidate.
        if state.best.is_none() || val.map50 > state.log.best_val_map50 || self.val.is_empty() {
            state.best = Some(params.clone());
            state.log.best_epoch = epoch;
            state.log.best_val_map50 = val.map50;
        }
    }

    fn check_resume(&self, mode: TrainMode, n_params: usize) -> Result<Option<TrainState>, TrainError> {
        let Some(s) = &self.ctl.resume else {
            return Ok(None);
        };
        if s.mode != mode {
            return Err(TrainError::Resume(format!(
                "checkpoint is from a {} run, not {}",
                s.mode.name(),
                mode.name()
            )));
        }
        if s.seed != self.cfg.seed {
            return Err(TrainError::Resume(format!("checkpoint seed {} differs from {}", s.seed, self.cfg.seed)));
        }
        if s.epochs_done > self.cfg.epochs {
            return Err(TrainError::Resume(format!(
                "checkpoint has {} epochs, run has {}",
                s.epochs_done, self.cfg.epochs
            )));
        }
        if s.student.len() != n_params {
            return Err(TrainError::Resume(format!(
                "checkpoint has {} parameters, detector has {n_params}",
                s.student.len()
            )));
        }
        Ok(Some(s.clone()))
    }

    fn supervised_epoch(
        &self,
        student: &mut dyn Detector,
        train: &[Sample],
        epoch: usize,
        state: &TrainState,
    ) -> Result<Vec<f64>, TrainError> {
        let mut losses = Vec::new();
        for batch in labeled_batches(train, self.cfg, epoch) {
            losses.push(student.train_step(&batch).map_err(self.det_err(epoch, state))?);
        }
        Ok(losses)
    }
}

fn blank_record(epoch: usize, phase: Phase) -> EpochRecord {
    EpochRecord {
        epoch,
        phase,
        supervised_loss: 0.0,
        pseudo_loss: None,
        train_steps: 0,
        pseudo_images: 0,
        pseudo_counts: BTreeMap::new(),
        thresholds: None,
        calibration_images: 0,
        audit: None,
        val_map50: 0.0,
        val_map50_95: 0.0,
    }
}

fn check_labeled(train: &[Sample]) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    Ok(())
}

/// Plain supervised training; keeps the epoch with the best validation mAP@50.
pub fn train_supervised(
    factory: &dyn DetectorFactory,
    train: &[Sample],
    val: &[Sample],
    n_classes: usize,
    cfg: &TrainConfig,
    ctl: TrainControl<'_>,
) -> Result<TrainOutput, TrainError> {
    check_labeled(train)?;
    let train = prepare(train, cfg.target_size);
    let val = prepare(val, cfg.target_size);
    let mut student = factory.create().map_err(|source| TrainError::Detector {
        epoch: 0,
        source,
        state: None,
    })?;
    let n_params = student.get_params().map_err(|source| TrainError::Detector { epoch: 0, source, state: None })?.len();
    let mut run = Runner {
        cfg,
        n_classes,
        val: &val,
        ctl,
    };
    let mut state = match run.check_resume(TrainMode::Full, n_params)? {
        Some(s) => s,
        None => TrainState {
            mode: TrainMode::Full,
            seed: cfg.seed,
            epochs_done: 0,
            student: student.get_params().map_err(|source| TrainError::Detector { epoch: 0, source, state: None })?,
            teacher: None,
            best: None,
            thresholds: None,
            log: TrainLog::new(TrainMode::Full),
        },
    };
    student.set_params(&state.student).map_err(run.det_err(0, &state))?;
    for epoch in state.epochs_done + 1..=cfg.epochs {
        let losses = run.supervised_epoch(student.as_mut(), &train, epoch, &state)?;
        let params = student.get_params().map_err(run.det_err(epoch, &state))?;
        let report = run.evaluate(student.as_ref(), epoch, &state)?;
        let mut rec = blank_record(epoch, Phase::Supervised);
        rec.supervised_loss = mean(&losses).unwrap_or(0.0);
        rec.train_steps = losses.len();
        rec.val_map50 = report.map50;
        rec.val_map50_95 = report.map50_95;
        run.consider(&mut state, epoch, &report, &params);
        state.student = params;
        state.epochs_done = epoch;
        state.log.epochs.push(rec);
        if run.finish_epoch(&state)? && epoch < cfg.epochs {
            return Ok(output(state, false));
        }
    }
    Ok(output(state, true))
}

fn output(state: TrainState, completed: bool) -> TrainOutput {
    let params = state.best.clone().unwrap_or_else(|| state.student.clone());
    TrainOutput {
        params,
        log: state.log.clone(),
        state,
        completed,
    }
}

/// Teacher-student training.
///
/// Burn-in epochs train the student on labelled data only. The teacher is
/// then initialised from the student, and each remaining epoch calibrates
/// per-class thresholds, pseudo-labels the unlabelled pool with test-time
/// augmentation and box fusion, mosaics and mixes the pseudo-labelled
/// images, trains the student on alternating labelled and pseudo-labelled
/// batches, and moves the teacher towards the student by EMA. The returned
/// model is the teacher with the best validation mAP@50, the burn-in
/// student included.
///
/// `unlabeled` must carry no boxes. `audit`, when given, is used only to
/// score each epoch's pseudo-labels.
#[allow(clippy::too_many_arguments)]
pub fn train_weedteacher(
    factory: &dyn DetectorFactory,
    labeled: &[Sample],
    unlabeled: &[Sample],
    val: &[Sample],
    n_classes: usize,
    cfg: &TrainConfig,
    audit: Option<&AuditStore>,
    ctl: TrainControl<'_>,
) -> Result<TrainOutput, TrainError> {
    check_labeled(labeled)?;
    if let Some(s) = unlabeled.iter().find(|s| s.labeled || !s.boxes.is_empty()) {
        return Err(TrainError::Input(format!("unlabelled sample `{}` carries labels", s.id)));
    }
    let labeled = prepare(labeled, cfg.target_size);
    let unlabeled = prepare(unlabeled, cfg.target_size);
    let val = prepare(val, cfg.target_size);
    let profile = frequency_profile(&labeled, n_classes)?;
    let burn_in = cfg.burn_in_epochs();

    let init_err = |source| TrainError::Detector {
        epoch: 0,
        source,
        state: None,
    };
    let mut student = factory.create().map_err(init_err)?;
    let mut teacher = factory.create().map_err(init_err)?;
    let n_params = student.get_params().map_err(init_err)?.len();
    let mut run = Runner {
        cfg,
        n_classes,
        val: &val,
        ctl,
    };
    let mut state = match run.check_resume(TrainMode::Semi, n_params)? {
        Some(s) => s,
        None => TrainState {
            mode: TrainMode::Semi,
            seed: cfg.seed,
            epochs_done: 0,
            student: student.get_params().map_err(init_err)?,
            teacher: None,
            best: None,
            thresholds: None,
            log: TrainLog::new(TrainMode::Semi),
        },
    };
    student.set_params(&state.student).map_err(run.det_err(0, &state))?;

    for epoch in state.epochs_done + 1..=cfg.epochs {
        if epoch <= burn_in {
            let losses = run.supervised_epoch(student.as_mut(), &labeled, epoch, &state)?;
            let params = student.get_params().map_err(run.det_err(epoch, &state))?;
            let report = run.evaluate(student.as_ref(), epoch, &state)?;
            let mut rec = blank_record(epoch, Phase::BurnIn);
            rec.supervised_loss = mean(&losses).unwrap_or(0.0);
            rec.train_steps = losses.len();
            rec.val_map50 = report.map50;
            rec.val_map50_95 = report.map50_95;
            if epoch == burn_in {
                state.teacher = Some(params.clone());
                run.consider(&mut state, epoch, &report, &params);
            }
            state.student = params;
            state.epochs_done = epoch;
            state.log.epochs.push(rec);
            if run.finish_epoch(&state)? && epoch < cfg.epochs {
                return Ok(output(state, false));
            }
            continue;
        }

        let err = run.det_err(epoch, &state);
        let mut teacher_params = state
            .teacher
            .clone()
            .ok_or_else(|| TrainError::Resume("semi epoch without a teacher".into()))?;
        teacher.set_params(&teacher_params).map_err(&err)?;
        let mut rng = stream(cfg.seed, &[tag("semi-epoch"), epoch as u64]);

        // (1) calibration
        let mut thresholds = match cfg.calibration.mode {
            CalibrationMode::Frequency if !unlabeled.is_empty() => {
                let confs = collect_confidences(teacher.as_ref(), &unlabeled, cfg.calibration.cap, &mut rng).map_err(&err)?;
                update_thresholds(
                    &confs.per_class,
                    &profile,
                    confs.n_images,
                    (cfg.calibration.tau_min, cfg.calibration.tau_max),
                )
            }
            CalibrationMode::Frequency => ClassThresholds::uniform(n_classes, cfg.calibration.tau_max),
            CalibrationMode::Fixed => ClassThresholds::uniform(n_classes, cfg.calibration.fixed_tau),
        };
        thresholds.epoch = epoch;
        if thresholds.sample_size > cfg.calibration.cap {
            return Err(TrainError::Input(format!(
                "calibration scored {} images, above the cap of {}",
                thresholds.sample_size, cfg.calibration.cap
            )));
        }

        // (2) pseudo-labelling over this epoch's stream
        let mut order: Vec<&Sample> = unlabeled.iter().collect();
        order.shuffle(&mut rng);
        let pseudo = pseudo_label(teacher.as_ref(), &order, &thresholds, cfg).map_err(|e| match e {
            TrainError::Detector { source, .. } => err(source),
            other => other,
        })?;
        let mut counts: BTreeMap<usize, usize> = (0..n_classes).map(|c| (c, 0)).collect();
        for s in &pseudo {
            for b in &s.boxes {
                *counts.entry(b.class_id).or_insert(0) += 1;
            }
        }
        let audit_report = audit.map(|a| a.score(&pseudo));

        // (3) augmentation
        let augmented = augment_pseudo_stream(&pseudo, cfg.target_size, &cfg.augment, &mut rng)?;

        // (4) alternating labelled / pseudo-labelled steps, (5) EMA
        let lab = labeled_batches(&labeled, cfg, epoch);
        let pse: Vec<&[Sample]> = augmented.chunks(cfg.batch_size).collect();
        let (mut sup_losses, mut pseudo_losses) = (Vec::new(), Vec::new());
        for i in 0..lab.len().max(pse.len()) {
            // labelled batches are recycled when the pseudo stream is longer
            if !lab.is_empty() {
                sup_losses.push(student.train_step(&lab[i % lab.len()]).map_err(&err)?);
                if cfg.ema_cadence == EmaCadence::Step {
                    let s = student.get_params().map_err(&err)?;
                    teacher_params = ema_update(&teacher_params, &s, cfg.ema_decay)?;
                }
            }
            if let Some(b) = pse.get(i) {
                pseudo_losses.push(student.train_step(b).map_err(&err)?);
                if cfg.ema_cadence == EmaCadence::Step {
                    let s = student.get_params().map_err(&err)?;
                    teacher_params = ema_update(&teacher_params, &s, cfg.ema_decay)?;
                }
            }
        }
        let student_params = student.get_params().map_err(&err)?;
        if cfg.ema_cadence == EmaCadence::Epoch {
            teacher_params = ema_update(&teacher_params, &student_params, cfg.ema_decay)?;
        }
        teacher.set_params(&teacher_params).map_err(&err)?;
        let report = run.evaluate(teacher.as_ref(), epoch, &state)?;

        let rec = EpochRecord {
            epoch,
            phase: Phase::Semi,
            supervised_loss: mean(&sup_losses).unwrap_or(0.0),
            pseudo_loss: mean(&pseudo_losses),
            train_steps: sup_losses.len() + pseudo_losses.len(),
            pseudo_images: pseudo.len(),
            pseudo_counts: counts,
            thresholds: Some(thresholds.clone()),
            calibration_images: thresholds.sample_size,
            audit: audit_report,
            val_map50: report.map50,
            val_map50_95: report.map50_95,
        };
        run.consider(&mut state, epoch, &report, &teacher_params);
        state.student = student_params;
        state.teacher = Some(teacher_params);
        state.thresholds = Some(thresholds);
        state.epochs_done = epoch;
        state.log.epochs.push(rec);
        if run.finish_epoch(&state)? && epoch < cfg.epochs {
            return Ok(output(state, false));
        }
    }
    Ok(output(state, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{synth_generate, SynthDomainConfig, ToyConfig, ToyDetector};
    use crate::pipeline::split::label_budget_split;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting {
        inner: ToyDetector,
        steps: Arc<AtomicUsize>,
    }

    impl Detector for Counting {
        fn predict(&self, images: &[crate::image::Image]) -> Result<Vec<Vec<crate::fusion::Detection>>, DetectorError> {
            self.inner.predict(images)
        }
        fn train_step(&mut self, batch: &[Sample]) -> Result<f64, DetectorError> {
            self.steps.fetch_add(1, Ordering::SeqCst);
            self.inner.train_step(batch)
        }
        fn get_params(&self) -> Result<ParamVector<f64>, DetectorError> {
            self.inner.get_params()
        }
        fn set_params(&mut self, p: &ParamVector<f64>) -> Result<(), DetectorError> {
            self.inner.set_params(p)
        }
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            target_size: 40,
            learning_rate: 0.5,
            ..TrainConfig::default()
        }
    }

    fn toy_factory() -> impl Fn() -> Result<Box<dyn Detector>, DetectorError> + Sync {
        || Ok(Box::new(ToyDetector::new(ToyConfig { learning_rate: 0.5, ..ToyConfig::default() })?) as Box<dyn Detector>)
    }

    fn world(n: usize) -> Vec<Sample> {
        synth_generate(&SynthDomainConfig::default(), n).unwrap().samples
    }

    #[test]
    fn one_epoch_one_batch_is_one_step() {
        let steps = Arc::new(AtomicUsize::new(0));
        let s2 = steps.clone();
        let factory = move || {
            Ok(Box::new(Counting {
                inner: ToyDetector::new(ToyConfig::default())?,
                steps: s2.clone(),
            }) as Box<dyn Detector>)
        };
        let data = world(4);
        let cfg = TrainConfig {
            batch_size: 4,
            ..small_cfg(2)
        };
        let ctl = TrainControl {
            stop_after_epoch: Some(1),
            ..TrainControl::default()
        };
        let out = train_supervised(&factory, &data, &data[..1], 3, &cfg, ctl).unwrap();
        assert!(!out.completed);
        assert_eq!(steps.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_train_is_an_error() {
        let r = train_supervised(&toy_factory(), &[], &[], 3, &small_cfg(2), TrainControl::default());
        assert!(matches!(r, Err(TrainError::EmptyTrain)));
    }

    #[test]
    fn unlabeled_with_labels_is_rejected() {
        let data = world(4);
        let r = train_weedteacher(&toy_factory(), &data, &data, &[], 3, &small_cfg(2), None, TrainControl::default());
        assert!(matches!(r, Err(TrainError::Input(_))));
    }

    #[test]
    fn semi_run_respects_burn_in_and_cap() {
        let data = world(40);
        let b = label_budget_split(&data[..30], 0.2, 1).unwrap();
        let cfg = TrainConfig {
            calibration: crate::calibration::CalibrationConfig {
                cap: 5,
                ..Default::default()
            },
            ..small_cfg(4)
        };
        let out = train_weedteacher(
            &toy_factory(),
            &b.labeled,
            &b.unlabeled,
            &data[30..],
            3,
            &cfg,
            Some(&b.audit),
            TrainControl::default(),
        )
        .unwrap();
        assert_eq!(out.log.epochs.len(), 4);
        for e in &out.log.epochs {
            if e.epoch <= 2 {
                assert_eq!(e.phase, Phase::BurnIn);
                assert_eq!(e.total_pseudo_labels(), 0);
                assert!(e.thresholds.is_none());
            } else {
                assert_eq!(e.phase, Phase::Semi);
                assert_eq!(e.calibration_images, 5);
                assert_eq!(e.pseudo_images, b.unlabeled.len());
                assert!(e.audit.is_some());
            }
        }
        assert!(out.log.best_epoch >= 2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = world(40);
        let b = label_budget_split(&data[..30], 0.3, 2).unwrap();
        let cfg = small_cfg(4);
        let run = |ctl| train_weedteacher(&toy_factory(), &b.labeled, &b.unlabeled, &data[30..], 3, &cfg, None, ctl);
        let full = run(TrainControl::default()).unwrap();
        for stop in [2, 3] {
            let part = run(TrainControl {
                stop_after_epoch: Some(stop),
                ..TrainControl::default()
            })
            .unwrap();
            assert!(!part.completed);
            let restored = TrainState::from_checkpoint(&Checkpoint::from_bytes(&part.state.to_checkpoint().to_bytes()).unwrap())
                .unwrap();
            assert_eq!(restored, part.state);
            let resumed = run(TrainControl {
                resume: Some(restored),
                ..TrainControl::default()
            })
            .unwrap();
            assert_eq!(resumed.params, full.params);
            assert_eq!(resumed.log, full.log);
        }
    }
}
