//! Paired Full-vs-Semi experiments over Monte-Carlo replications.
//!
//! In-domain: each replication's training split keeps labels on a fraction
//! of its images; Full trains on those alone, Semi also sees the rest
//! unlabelled. Cross-domain: Full trains on the whole labelled training
//! split, Semi additionally sees unlabelled images from a new domain. Both
//! arms are scored on the basic-domain test split.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use thiserror::Error;

use super::config::Config;
use super::dataset::Dataset;
use super::record::{ArmRecord, ReplicationRecord, RunRecord};
use super::split::{label_budget_split, mc_split, strip_labels, AuditStore, SplitError};
use super::train::{
    evaluate_params, ground_truth, prepare, train_supervised, train_weedteacher, DetectorFactory,
    TrainControl, TrainError,
};
use crate::augment::Sample;
use crate::detector::synth::SynthError;
use crate::detector::{synth_generate, ParamVector};
use crate::metrics::{pr_curve, ImageDetections};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    InDomain,
    CrossDomain,
}

impl ExperimentMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in-domain" | "in_domain" => Some(Self::InDomain),
            "cross-domain" | "cross_domain" => Some(Self::CrossDomain),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::InDomain => "in_domain",
            Self::CrossDomain => "cross_domain",
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("missing data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("replication {replication}, {arm} arm: {source}")]
    Train {
        replication: usize,
        arm: String,
        #[source]
        source: TrainError,
    },
    #[error("test leakage in replication {replication}: image `{id}` also feeds training")]
    Leak { replication: usize, id: String },
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub basic: Dataset,
    /// Required for cross-domain runs.
    pub new_domain: Option<Dataset>,
}

/// Test-set predictions of one trained arm.
#[derive(Debug, Clone)]
pub struct ArmArtifacts {
    pub replication: usize,
    pub arm: String,
    pub params: ParamVector<f64>,
    pub predictions: Vec<ImageDetections<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub record: RunRecord,
    pub artifacts: Vec<ArmArtifacts>,
    /// `replication,arm,class,confidence,recall,precision` at IoU 0.5.
    pub pr_curves_csv: String,
}

/// Basic-domain images from the configured synthetic world, plus the shifted
/// new domain when `shift.enabled` is set.
pub fn synthetic_data(cfg: &Config) -> Result<ExperimentData, SynthError> {
    let e = &cfg.experiment;
    let basic = synth_generate(&e.world, e.n_images)?;
    let new_domain = if e.shift_enabled {
        Some(synth_generate(&e.world.shifted_with("new", &e.shift), e.n_shifted)?)
    } else {
        None
    };
    Ok(ExperimentData { basic, new_domain })
}

struct Replication {
    seed: u64,
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
    audit: AuditStore,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn build_replications(
    mode: ExperimentMode,
    cfg: &Config,
    data: &ExperimentData,
) -> Result<Vec<Replication>, ExperimentError> {
    let basic = data.basic.labeled_only();
    if basic.is_empty() {
        return Err(ExperimentError::MissingData("the basic domain has no labelled images".into()));
    }
    let new_domain = match (mode, &data.new_domain) {
        (ExperimentMode::CrossDomain, None) => {
            return Err(ExperimentError::MissingData(
                "cross-domain mode needs new-domain images".into(),
            ))
        }
        (ExperimentMode::CrossDomain, Some(d)) if d.is_empty() => {
            return Err(ExperimentError::MissingData("the new-domain dataset is empty".into()))
        }
        (ExperimentMode::CrossDomain, Some(d)) => Some(d),
        (ExperimentMode::InDomain, _) => None,
    };
    let splits = mc_split(basic.len(), &cfg.experiment.split)?;
    let mut out = Vec::with_capacity(splits.len());
    for (k, split) in splits.iter().enumerate() {
        let pick = |idx: &[usize]| basic.select(idx).samples;
        let train = pick(&split.train);
        let (labeled, unlabeled, audit) = match new_domain {
            None => {
                let b = label_budget_split(
                    &train,
                    cfg.experiment.labeled_fraction,
                    derive_seed(split.seed, &[tag("label-budget")]),
                )?;
                (b.labeled, b.unlabeled, b.audit)
            }
            Some(nd) => {
                let mut audit = AuditStore::default();
                let unlabeled = nd
                    .samples
                    .iter()
                    .map(|s| {
                        // namespace ids so new-domain names cannot collide with basic ones
                        let mut u = strip_labels(s);
                        u.id = format!("{}/{}", s.domain, s.id);
                        if s.labeled {
                            audit.insert(u.id.clone(), s.boxes.clone());
                        }
                        u
                    })
                    .collect();
                (train, unlabeled, audit)
            }
        };
        let rep = Replication {
            seed: split.seed,
            labeled,
            unlabeled,
            audit,
            val: pick(&split.val),
            test: pick(&split.test),
        };
        check_leakage(k, &rep)?;
        out.push(rep);
    }
    Ok(out)
}

fn check_leakage(k: usize, r: &Replication) -> Result<(), ExperimentError> {
    let test: HashSet<&str> = r.test.iter().map(|s| s.id.as_str()).collect();
    for s in r.labeled.iter().chain(&r.unlabeled).chain(&r.val) {
        if test.contains(s.id.as_str()) {
            return Err(ExperimentError::Leak {
                replication: k,
                id: s.id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arm {
    Full,
    Semi,
}

impl Arm {
    fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::Semi => "semi",
        }
    }
}

struct ArmResult {
    record: ArmRecord,
    artifacts: ArmArtifacts,
}

fn run_arm(
    factory: &dyn DetectorFactory,
    cfg: &Config,
    n_classes: usize,
    k: usize,
    rep: &Replication,
    arm: Arm,
) -> Result<ArmResult, TrainError> {
    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive_seed(cfg.train.seed, &[tag("replication"), k as u64]);
    let out = match arm {
        Arm::Full => train_supervised(factory, &rep.labeled, &rep.val, n_classes, &tcfg, TrainControl::default())?,
        Arm::Semi => train_weedteacher(
            factory,
            &rep.labeled,
            &rep.unlabeled,
            &rep.val,
            n_classes,
            &tcfg,
            Some(&rep.audit),
            TrainControl::default(),
        )?,
    };
    let test = prepare(&rep.test, tcfg.target_size);
    let (report, predictions) = evaluate_params(factory, &out.params, &test, n_classes)?;
    Ok(ArmResult {
        record: ArmRecord {
            name: arm.name().into(),
            log: out.log,
            test: report,
        },
        artifacts: ArmArtifacts {
            replication: k,
            arm: arm.name().into(),
            params: out.params,
            predictions,
        },
    })
}

/// Runs every replication's Full and Semi arms, at most `jobs` at a time.
/// Results do not depend on `jobs`.
pub fn run_experiment(
    mode: ExperimentMode,
    cfg: &Config,
    data: &ExperimentData,
    factory: &dyn DetectorFactory,
    jobs: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentOutput, ExperimentError> {
    let n_classes = data.basic.n_classes();
    let reps = build_replications(mode, cfg, data)?;
    let tasks: Vec<(usize, Arm)> = (0..reps.len())
        .flat_map(|k| [(k, Arm::Full), (k, Arm::Semi)])
        .collect();
    let results: Vec<Mutex<Option<Result<ArmResult, TrainError>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(k, arm)) = tasks.get(i) else {
                    break;
                };
                progress(&format!("replication {k}: training {} arm", arm.name()));
                let r = run_arm(factory, cfg, n_classes, k, &reps[k], arm);
                if let Ok(a) = &r {
                    progress(&format!(
                        "replication {k}: {} arm test mAP@50 {:.4}",
                        arm.name(),
                        a.record.test.map50
                    ));
                }
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut records: Vec<ReplicationRecord> = reps
        .iter()
        .enumerate()
        .map(|(k, r)| ReplicationRecord {
            index: k,
            seed: r.seed,
            n_labeled: r.labeled.len(),
            n_unlabeled: r.unlabeled.len(),
            n_val: r.val.len(),
            n_test: r.test.len(),
            arms: Vec::new(),
        })
        .collect();
    let mut artifacts = Vec::new();
    for ((k, arm), slot) in tasks.into_iter().zip(results) {
        let r = slot.into_inner().expect("result slot").expect("every task ran");
        let r = r.map_err(|source| ExperimentError::Train {
            replication: k,
            arm: arm.name().into(),
            source,
        })?;
        records[k].arms.push(r.record);
        artifacts.push(r.artifacts);
    }

    let mut pr = String::from("replication,arm,class,confidence,recall,precision\n");
    for a in &artifacts {
        let test = prepare(&reps[a.replication].test, cfg.train.target_size);
        let gt = ground_truth(&test);
        for c in 0..n_classes {
            let points = pr_curve(&a.predictions, &gt, n_classes, c, 0.5).unwrap_or_default();
            for (conf, recall, precision) in points {
                let _ = writeln!(pr, "{},{},{c},{conf},{recall},{precision}", a.replication, a.arm);
            }
        }
    }
    Ok(ExperimentOutput {
        record: RunRecord::new(mode.name(), records),
        artifacts,
        pr_curves_csv: pr,
    })
}
