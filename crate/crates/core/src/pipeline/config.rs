//! Flat `key = value` configuration.
//!
//! One setting per line, `#` starts a comment. Every key is listed in
//! [`CONFIG_KEYS`]; unknown keys, duplicates and bad values are all reported
//! together. [`Config::to_text`] writes the fully resolved configuration with
//! keys in sorted order, so it doubles as the canonical form for hashing.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::split::SplitSpec;
use crate::augment::AugmentConfig;
use crate::calibration::{CalibrationConfig, CalibrationMode};
use crate::detector::{ShiftParams, SynthDomainConfig, ToyConfig};
use crate::fusion::{TtaOp, WbfParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmaCadence {
    /// After every student optimisation step.
    Step,
    /// Once at the end of each semi-supervised epoch.
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub burn_in_fraction: f64,
    pub ema_decay: f64,
    pub ema_cadence: EmaCadence,
    pub calibration: CalibrationConfig,
    pub augment: AugmentConfig,
    pub target_size: usize,
    pub seed: u64,
    pub tta: Vec<TtaOp>,
    pub wbf: WbfParams<f64>,
    /// Upper bound on concurrent pseudo-labelling threads.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 36,
            batch_size: 4,
            learning_rate: 0.01,
            burn_in_fraction: 0.5,
            ema_decay: 0.99,
            ema_cadence: EmaCadence::Step,
            calibration: CalibrationConfig::default(),
            augment: AugmentConfig::default(),
            target_size: 960,
            seed: 0,
            tta: vec![TtaOp::Identity, TtaOp::Hflip],
            wbf: WbfParams::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Number of supervised-only epochs at the start of a semi-supervised run.
    pub fn burn_in_epochs(&self) -> usize {
        ((self.burn_in_fraction * self.epochs as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut v = Vec::new();
        let mut bad = |key: &str, msg: String| v.push(ConfigIssue::new(None, key, msg));
        if self.epochs < 2 {
            bad("epochs", format!("must be >= 2 (got {})", self.epochs));
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad("learning_rate", format!("must be > 0 (got {})", self.learning_rate));
        }
        if !(self.burn_in_fraction > 0.0 && self.burn_in_fraction < 1.0) {
            bad("burn_in_fraction", format!("must lie in (0, 1) (got {})", self.burn_in_fraction));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            bad("ema_decay", format!("must lie in [0, 1] (got {})", self.ema_decay));
        }
        if self.target_size == 0 {
            bad("target_size", "must be >= 1".into());
        }
        if self.workers == 0 {
            bad("workers", "must be >= 1".into());
        }
        if !self.tta.contains(&TtaOp::Identity) {
            bad("tta", "must include identity".into());
        }
        if !(0.0..=1.0).contains(&self.wbf.iou_thresh) {
            bad("wbf_iou", format!("must lie in [0, 1] (got {})", self.wbf.iou_thresh));
        }
        if !(0.0..=1.0).contains(&self.wbf.skip_conf) {
            bad("wbf_skip_conf", format!("must lie in [0, 1] (got {})", self.wbf.skip_conf));
        }
        let c = &self.calibration;
        if c.cap == 0 {
            bad("calibration_cap", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&c.tau_min) {
            bad("tau_min", format!("must lie in [0, 1] (got {})", c.tau_min));
        }
        if !(0.0..=1.0).contains(&c.tau_max) || c.tau_max < c.tau_min {
            bad("tau_max", format!("must lie in [tau_min, 1] (got {})", c.tau_max));
        }
        if !(0.0..=1.0).contains(&c.fixed_tau) {
            bad("calibration_fixed_tau", format!("must lie in [0, 1] (got {})", c.fixed_tau));
        }
        let a = &self.augment;
        for (key, p) in [("p_mosaic", a.p_mosaic), ("p_mixup", a.p_mixup)] {
            if !(0.0..=1.0).contains(&p) {
                bad(key, format!("must lie in [0, 1] (got {p})"));
            }
        }
        for (key, p) in [("mixup_alpha", a.mixup_alpha), ("mixup_beta", a.mixup_beta)] {
            if !(p.is_finite() && p > 0.0) {
                bad(key, format!("must be > 0 (got {p})"));
            }
        }
        if !(0.0..=1.0).contains(&a.mosaic_min_area_frac) {
            bad("mosaic_min_area_frac", format!("must lie in [0, 1] (got {})", a.mosaic_min_area_frac));
        }
        if a.mosaic_min_area_px < 0.0 {
            bad("mosaic_min_area_px", "must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&a.mixup_min_weight) {
            bad("mixup_min_weight", format!("must lie in [0, 1] (got {})", a.mixup_min_weight));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorKind {
    Toy,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Program and arguments of an external worker.
    pub command: Vec<String>,
    pub timeout_ms: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Toy,
            command: Vec::new(),
            timeout_ms: 600_000,
        }
    }
}

/// Settings of the experiment drivers and the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub labeled_fraction: f64,
    pub split: SplitSpec,
    /// Basic-domain images generated for synthetic runs.
    pub n_images: usize,
    /// New-domain images generated for cross-domain runs.
    pub n_shifted: usize,
    pub world: SynthDomainConfig,
    pub shift_enabled: bool,
    pub shift: ShiftParams,
    pub toy: ToyConfig,
    pub detector: DetectorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.1,
            split: SplitSpec::default(),
            n_images: 1000,
            n_shifted: 1000,
            world: SynthDomainConfig::default(),
            shift_enabled: false,
            shift: ShiftParams::default(),
            toy: ToyConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(line: Option<usize>, key: &str, message: String) -> Self {
        Self {
            line,
            key: key.to_string(),
            message,
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration problem(s):", self.0.len())?;
        for i in &self.0 {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Every accepted key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("batch_size", "images per optimisation step"),
    ("burn_in_fraction", "fraction of epochs trained on labelled data only, in (0, 1)"),
    ("calibration", "threshold rule: frequency | fixed"),
    ("calibration_cap", "maximum unlabelled images scored per calibration pass"),
    ("calibration_fixed_tau", "threshold for every class when calibration = fixed"),
    ("detector", "backend: toy | subprocess"),
    ("detector.command", "worker program and arguments, whitespace separated"),
    ("detector.timeout_ms", "per-request timeout for the subprocess backend"),
    ("ema_cadence", "teacher update after every step or once per epoch: step | epoch"),
    ("ema_decay", "teacher <- decay * teacher + (1 - decay) * student"),
    ("epochs", "total training epochs, >= 2"),
    ("labeled_fraction", "share of the training split that keeps its labels (in-domain)"),
    ("learning_rate", "detector learning rate"),
    ("mixup_alpha", "first Beta parameter of the mixup ratio"),
    ("mixup_beta", "second Beta parameter of the mixup ratio"),
    ("mixup_min_weight", "mixed boxes lighter than this are dropped"),
    ("mosaic_min_area_frac", "mosaic drops boxes keeping less than this share of their area"),
    ("mosaic_min_area_px", "mosaic drops boxes smaller than this many output pixels"),
    ("n_images", "basic-domain images generated for synthetic runs"),
    ("n_shifted", "new-domain images generated for cross-domain runs"),
    ("p_mixup", "probability of mixing a pseudo-labelled sample with a second mosaic"),
    ("p_mosaic", "probability of building a mosaic around a pseudo-labelled sample"),
    ("replication_seeds", "comma-separated seeds, one Monte-Carlo replication each"),
    ("seed", "base training seed"),
    ("shift.crosstalk", "new domain: share of each channel taken from the next one"),
    ("shift.enabled", "whether a new-domain world is defined: true | false"),
    ("shift.gain", "new domain: pixel gain"),
    ("shift.noise_scale", "new domain: multiplier on world.noise_sigma"),
    ("shift.offset", "new domain: pixel offset"),
    ("shift.seed", "new domain: generator seed"),
    ("soft_weights", "pseudo-label weight is its confidence (true) or 1 (false)"),
    ("split_test", "test share of each replication"),
    ("split_train", "training share of each replication"),
    ("split_val", "validation share of each replication"),
    ("target_size", "letterbox side length in pixels"),
    ("tau_max", "upper bound on calibrated thresholds"),
    ("tau_min", "lower bound on calibrated thresholds"),
    ("toy.anchors", "two square anchor sizes, comma separated"),
    ("toy.grid", "pooling cells per anchor side"),
    ("toy.nms_iou", "non-maximum suppression IoU"),
    ("toy.positive_iou", "window/box IoU that makes a window a positive"),
    ("toy.positive_weight", "loss weight multiplier on positive terms"),
    ("toy.score_floor", "scores below this are not emitted"),
    ("toy.stride", "anchor grid stride in pixels"),
    ("tta", "test-time views, comma separated: identity, hflip, vflip"),
    ("wbf_iou", "box fusion IoU threshold"),
    ("wbf_skip_conf", "detections below this confidence are ignored by box fusion"),
    ("workers", "maximum concurrent pseudo-labelling threads"),
    ("world.background", "synthetic background level"),
    ("world.box_max", "largest synthetic object side"),
    ("world.box_min", "smallest synthetic object side"),
    ("world.image_size", "synthetic image side"),
    ("world.n_classes", "synthetic object classes"),
    ("world.noise_sigma", "pixel noise standard deviation"),
    ("world.objects_max", "most objects per synthetic image"),
    ("world.objects_min", "fewest objects per synthetic image"),
    ("world.seed", "basic-domain generator seed"),
    ("world.signatures", "per-class colours: rows separated by ';', channels by ','"),
];

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{v}` is not true or false")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_num)
        .collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        let e = &mut self.experiment;
        match key {
            "batch_size" => t.batch_size = parse_num(v)?,
            "burn_in_fraction" => t.burn_in_fraction = parse_num(v)?,
            "calibration" => {
                t.calibration.mode = match v {
                    "frequency" => CalibrationMode::Frequency,
                    "fixed" => CalibrationMode::Fixed,
                    _ => return Err(format!("`{v}` is not frequency or fixed")),
                }
            }
            "calibration_cap" => t.calibration.cap = parse_num(v)?,
            "calibration_fixed_tau" => t.calibration.fixed_tau = parse_num(v)?,
            "detector" => {
                e.detector.kind = match v {
                    "toy" => DetectorKind::Toy,
                    "subprocess" => DetectorKind::Subprocess,
                    _ => return Err(format!("`{v}` is not toy or subprocess")),
                }
            }
            "detector.command" => e.detector.command = v.split_whitespace().map(String::from).collect(),
            "detector.timeout_ms" => e.detector.timeout_ms = parse_num(v)?,
            "ema_cadence" => {
                t.ema_cadence = match v {
                    "step" => EmaCadence::Step,
                    "epoch" => EmaCadence::Epoch,
                    _ => return Err(format!("`{v}` is not step or epoch")),
                }
            }
            "ema_decay" => t.ema_decay = parse_num(v)?,
            "epochs" => t.epochs = parse_num(v)?,
            "labeled_fraction" => e.labeled_fraction = parse_num(v)?,
            "learning_rate" => t.learning_rate = parse_num(v)?,
            "mixup_alpha" => t.augment.mixup_alpha = parse_num(v)?,
            "mixup_beta" => t.augment.mixup_beta = parse_num(v)?,
            "mixup_min_weight" => t.augment.mixup_min_weight = parse_num(v)?,
            "mosaic_min_area_frac" => t.augment.mosaic_min_area_frac = parse_num(v)?,
            "mosaic_min_area_px" => t.augment.mosaic_min_area_px = parse_num(v)?,
            "n_images" => e.n_images = parse_num(v)?,
            "n_shifted" => e.n_shifted = parse_num(v)?,
            "p_mixup" => t.augment.p_mixup = parse_num(v)?,
            "p_mosaic" => t.augment.p_mosaic = parse_num(v)?,
            "replication_seeds" => e.split.seeds = parse_list(v)?,
            "seed" => t.seed = parse_num(v)?,
            "shift.crosstalk" => e.shift.crosstalk = parse_num(v)?,
            "shift.enabled" => e.shift_enabled = parse_bool(v)?,
            "shift.gain" => e.shift.gain = parse_num(v)?,
            "shift.noise_scale" => e.shift.noise_scale = parse_num(v)?,
            "shift.offset" => e.shift.offset = parse_num(v)?,
            "shift.seed" => e.shift.seed = parse_num(v)?,
            "soft_weights" => t.calibration.soft_weights = parse_bool(v)?,
            "split_test" => e.split.test = parse_num(v)?,
            "split_train" => e.split.train = parse_num(v)?,
            "split_val" => e.split.val = parse_num(v)?,
            "target_size" => t.target_size = parse_num(v)?,
            "tau_max" => t.calibration.tau_max = parse_num(v)?,
            "tau_min" => t.calibration.tau_min = parse_num(v)?,
            "toy.anchors" => {
                let a: Vec<usize> = parse_list(v)?;
                let [a0, a1] = a[..] else {
                    return Err(format!("expected two anchor sizes, got {}", a.len()));
                };
                e.toy.anchors = [a0, a1];
            }
            "toy.grid" => e.toy.grid = parse_num(v)?,
            "toy.nms_iou" => e.toy.nms_iou = parse_num(v)?,
            "toy.positive_iou" => e.toy.positive_iou = parse_num(v)?,
            "toy.positive_weight" => e.toy.positive_weight = parse_num(v)?,
            "toy.score_floor" => e.toy.score_floor = parse_num(v)?,
            "toy.stride" => e.toy.stride = parse_num(v)?,
            "tta" => {
                t.tta = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| TtaOp::parse(s).ok_or_else(|| format!("unknown view `{s}`")))
                    .collect::<Result<_, _>>()?
            }
            "wbf_iou" => t.wbf.iou_thresh = parse_num(v)?,
            "wbf_skip_conf" => t.wbf.skip_conf = parse_num(v)?,
            "workers" => t.workers = parse_num(v)?,
            "world.background" => e.world.background = parse_num(v)?,
            "world.box_max" => e.world.box_max = parse_num(v)?,
            "world.box_min" => e.world.box_min = parse_num(v)?,
            "world.image_size" => e.world.image_size = parse_num(v)?,
            "world.n_classes" => e.world.n_classes = parse_num(v)?,
            "world.noise_sigma" => e.world.noise_sigma = parse_num(v)?,
            "world.objects_max" => e.world.objects_max = parse_num(v)?,
            "world.objects_min" => e.world.objects_min = parse_num(v)?,
            "world.seed" => e.world.seed = parse_num(v)?,
            "world.signatures" => {
                e.world.signatures = v
                    .split(';')
                    .map(str::trim)
                    .filter(|r| !r.is_empty())
                    .map(parse_list)
                    .collect::<Result<_, _>>()?
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Resolved `(key, value)` pairs in key order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let e = &self.experiment;
        let mut p = vec![
            ("batch_size", t.batch_size.to_string()),
            ("burn_in_fraction", t.burn_in_fraction.to_string()),
            (
                "calibration",
                match t.calibration.mode {
                    CalibrationMode::Frequency => "frequency",
                    CalibrationMode::Fixed => "fixed",
                }
                .into(),
            ),
            ("calibration_cap", t.calibration.cap.to_string()),
            ("calibration_fixed_tau", t.calibration.fixed_tau.to_string()),
            (
                "detector",
                match e.detector.kind {
                    DetectorKind::Toy => "toy",
                    DetectorKind::Subprocess => "subprocess",
                }
                .into(),
            ),
            ("detector.command", e.detector.command.join(" ")),
            ("detector.timeout_ms", e.detector.timeout_ms.to_string()),
            (
                "ema_cadence",
                match t.ema_cadence {
                    EmaCadence::Step => "step",
                    EmaCadence::Epoch => "epoch",
                }
                .into(),
            ),
            ("ema_decay", t.ema_decay.to_string()),
            ("epochs", t.epochs.to_string()),
            ("labeled_fraction", e.labeled_fraction.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("mixup_alpha", t.augment.mixup_alpha.to_string()),
            ("mixup_beta", t.augment.mixup_beta.to_string()),
            ("mixup_min_weight", t.augment.mixup_min_weight.to_string()),
            ("mosaic_min_area_frac", t.augment.mosaic_min_area_frac.to_string()),
            ("mosaic_min_area_px", t.augment.mosaic_min_area_px.to_string()),
            ("n_images", e.n_images.to_string()),
            ("n_shifted", e.n_shifted.to_string()),
            ("p_mixup", t.augment.p_mixup.to_string()),
            ("p_mosaic", t.augment.p_mosaic.to_string()),
            ("replication_seeds", join(&e.split.seeds)),
            ("seed", t.seed.to_string()),
            ("shift.crosstalk", e.shift.crosstalk.to_string()),
            ("shift.enabled", e.shift_enabled.to_string()),
            ("shift.gain", e.shift.gain.to_string()),
            ("shift.noise_scale", e.shift.noise_scale.to_string()),
            ("shift.offset", e.shift.offset.to_string()),
            ("shift.seed", e.shift.seed.to_string()),
            ("soft_weights", t.calibration.soft_weights.to_string()),
            ("split_test", e.split.test.to_string()),
            ("split_train", e.split.train.to_string()),
            ("split_val", e.split.val.to_string()),
            ("target_size", t.target_size.to_string()),
            ("tau_max", t.calibration.tau_max.to_string()),
            ("tau_min", t.calibration.tau_min.to_string()),
            ("toy.anchors", join(&e.toy.anchors)),
            ("toy.grid", e.toy.grid.to_string()),
            ("toy.nms_iou", e.toy.nms_iou.to_string()),
            ("toy.positive_iou", e.toy.positive_iou.to_string()),
            ("toy.positive_weight", e.toy.positive_weight.to_string()),
            ("toy.score_floor", e.toy.score_floor.to_string()),
            ("toy.stride", e.toy.stride.to_string()),
            ("tta", t.tta.iter().map(|o| o.name()).collect::<Vec<_>>().join(",")),
            ("wbf_iou", t.wbf.iou_thresh.to_string()),
            ("wbf_skip_conf", t.wbf.skip_conf.to_string()),
            ("workers", t.workers.to_string()),
            ("world.background", e.world.background.to_string()),
            ("world.box_max", e.world.box_max.to_string()),
            ("world.box_min", e.world.box_min.to_string()),
            ("world.image_size", e.world.image_size.to_string()),
            ("world.n_classes", e.world.n_classes.to_string()),
            ("world.noise_sigma", e.world.noise_sigma.to_string()),
            ("world.objects_max", e.world.objects_max.to_string()),
            ("world.objects_min", e.world.objects_min.to_string()),
            ("world.seed", e.world.seed.to_string()),
            (
                "world.signatures",
                e.world.signatures.iter().map(|r| join(r)).collect::<Vec<_>>().join(";"),
            ),
        ];
        p.sort_by_key(|(k, _)| *k);
        p
    }

    /// Canonical resolved form: every key, sorted, `key = value` per line.
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses a config file on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies a config file's settings without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut seen = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                issues.push(ConfigIssue::new(Some(line), l, "expected `key = value`".into()));
                continue;
            };
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), line) {
                issues.push(ConfigIssue::new(Some(line), k, format!("duplicate of line {prev}")));
                continue;
            }
            if let Err(m) = self.set(k, v) {
                issues.push(ConfigIssue::new(Some(line), k, m));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(issues))
        }
    }

    /// Applies `key=value` overrides such as command-line `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        for o in overrides {
            let o = o.as_ref();
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(m) = self.set(k.trim(), v) {
                        issues.push(ConfigIssue::new(None, k.trim(), m));
                    }
                }
                None => issues.push(ConfigIssue::new(None, o, "expected `key=value`".into())),
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(issues))
        }
    }

    /// Every semantic problem at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = self.train.validate();
        let e = &self.experiment;
        if !(e.labeled_fraction > 0.0 && e.labeled_fraction < 1.0) {
            issues.push(ConfigIssue::new(
                None,
                "labeled_fraction",
                format!("must lie in (0, 1) (got {})", e.labeled_fraction),
            ));
        }
        if let Err(err) = e.split.validate() {
            issues.push(ConfigIssue::new(None, "split_train", err.to_string()));
        }
        if let Err(err) = e.world.validate() {
            issues.push(ConfigIssue::new(None, "world", err.to_string()));
        }
        if e.shift_enabled {
            if let Err(err) = e.world.shifted_with("new", &e.shift).validate() {
                issues.push(ConfigIssue::new(None, "shift", err.to_string()));
            }
        }
        let toy = self.toy_config(e.world.n_classes);
        if let Err(m) = toy.validate() {
            issues.push(ConfigIssue::new(None, "toy", m));
        }
        for (key, p) in [
            ("toy.nms_iou", toy.nms_iou),
            ("toy.positive_iou", toy.positive_iou),
            ("toy.score_floor", toy.score_floor),
        ] {
            if !(0.0..=1.0).contains(&p) {
                issues.push(ConfigIssue::new(None, key, format!("must lie in [0, 1] (got {p})")));
            }
        }
        if e.detector.kind == DetectorKind::Subprocess && e.detector.command.is_empty() {
            issues.push(ConfigIssue::new(
                None,
                "detector.command",
                "required for the subprocess backend".into(),
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(issues))
        }
    }

    /// Toy detector settings for `n_classes` classes at the training resolution.
    pub fn toy_config(&self, n_classes: usize) -> ToyConfig {
        ToyConfig {
            image_size: self.train.target_size,
            n_classes,
            learning_rate: self.train.learning_rate,
            ..self.experiment.toy.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut c = Config::default();
        c.train.target_size = 40;
        c.validate().unwrap();
    }

    #[test]
    fn every_key_is_documented_settable_and_rendered() {
        let cfg = Config::default();
        let pairs = cfg.pairs();
        let rendered: Vec<&str> = pairs.iter().map(|(k, _)| *k).collect();
        let documented: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(rendered, documented);
        for (k, v) in &pairs {
            let mut c = Config::default();
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.apply_text("epochs = 5\nworld.signatures = 0.9,0.1,0.1;0.1,0.9,0.1;0.1,0.1,0.9\ntta = identity,vflip\n")
            .unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn key_order_does_not_change_canonical_text() {
        let a = Config::parse("epochs = 4\nseed = 7\n").unwrap();
        let b = Config::parse("seed = 7\n# comment\nepochs = 4\n").unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn parse_errors_are_all_reported() {
        let err = Config::parse("epochs = x\nbogus = 1\nseed = 1\nseed = 2\nnot a pair\n").unwrap_err();
        let lines: Vec<Option<usize>> = err.0.iter().map(|i| i.line).collect();
        assert_eq!(lines, vec![Some(1), Some(2), Some(4), Some(5)]);
    }

    #[test]
    fn validation_enumerates_every_bad_field() {
        let c = Config::parse("epochs = 1\nbatch_size = 0\nburn_in_fraction = 1.5\ntau_min = 2\n").unwrap();
        let err = c.validate().unwrap_err();
        let keys: Vec<&str> = err.0.iter().map(|i| i.key.as_str()).collect();
        for k in ["epochs", "batch_size", "burn_in_fraction", "tau_min"] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn burn_in_epochs_rounds_up() {
        let mut t = TrainConfig::default();
        assert_eq!(t.burn_in_epochs(), 18);
        t.epochs = 5;
        assert_eq!(t.burn_in_epochs(), 3);
        t.epochs = 2;
        assert_eq!(t.burn_in_epochs(), 1);
    }
}
