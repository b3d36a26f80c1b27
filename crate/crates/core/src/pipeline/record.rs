//! Per-epoch training logs and experiment records, exported as JSON and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::split::PseudoLabelAudit;
use crate::calibration::ClassThresholds;
use crate::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    Semi,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::Semi => "semi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Plain supervised training.
    Supervised,
    /// Supervised-only start of a semi-supervised run.
    BurnIn,
    /// Pseudo-labelled training with a teacher.
    Semi,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Supervised => "supervised",
            Phase::BurnIn => "burn_in",
            Phase::Semi => "semi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    /// Mean loss over the epoch's labelled steps.
    pub supervised_loss: f64,
    /// Mean loss over the epoch's pseudo-labelled steps.
    pub pseudo_loss: Option<f64>,
    pub train_steps: usize,
    /// Unlabelled images pseudo-labelled this epoch.
    pub pseudo_images: usize,
    /// Pseudo-label boxes per class before augmentation.
    pub pseudo_counts: BTreeMap<usize, usize>,
    pub thresholds: Option<ClassThresholds<f64>>,
    /// Images scored by the calibration pass.
    pub calibration_images: usize,
    pub audit: Option<PseudoLabelAudit>,
    pub val_map50: f64,
    pub val_map50_95: f64,
}

impl EpochRecord {
    pub fn total_pseudo_labels(&self) -> usize {
        self.pseudo_counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose model was selected; 0 before any epoch ran.
    pub best_epoch: usize,
    pub best_val_map50: f64,
}

impl TrainLog {
    pub fn new(mode: TrainMode) -> Self {
        Self {
            mode,
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_map50: 0.0,
        }
    }

    /// `epoch,class,tau,sample_size` rows for every semi epoch.
    pub fn calibration_log(&self) -> String {
        let mut s = format!("{}\n", crate::calibration::CALIBRATION_LOG_HEADER);
        for e in &self.epochs {
            if let Some(t) = &e.thresholds {
                s.push_str(&t.log_rows());
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    /// `full` or `semi`.
    pub name: String,
    pub log: TrainLog,
    pub test: EvalReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub arms: Vec<ArmRecord>,
}

impl ReplicationRecord {
    pub fn arm(&self, name: &str) -> Option<&ArmRecord> {
        self.arms.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub replications: Vec<ReplicationRecord>,
    /// Arithmetic mean of each arm's test report over replications.
    pub mean: BTreeMap<String, EvalReport<f64>>,
}

/// Element-wise arithmetic mean of reports. Per-class entries are averaged
/// over the reports that evaluate that class; counts are summed.
pub fn mean_report(reports: &[&EvalReport<f64>]) -> Option<EvalReport<f64>> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let avg_map = |get: fn(&EvalReport<f64>) -> &BTreeMap<usize, f64>| {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in reports {
            for (&c, &v) in get(r) {
                let e = acc.entry(c).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(c, (s, k))| (c, s / k as f64))
            .collect::<BTreeMap<_, _>>()
    };
    let sum_counts = |get: fn(&EvalReport<f64>) -> &BTreeMap<usize, usize>| {
        let mut acc: BTreeMap<usize, usize> = BTreeMap::new();
        for r in reports {
            for (&c, &v) in get(r) {
                *acc.entry(c).or_insert(0) += v;
            }
        }
        acc
    };
    Some(EvalReport {
        per_class_ap50: avg_map(|r| &r.per_class_ap50),
        per_class_ap50_95: avg_map(|r| &r.per_class_ap50_95),
        map50: reports.iter().map(|r| r.map50).sum::<f64>() / n,
        map50_95: reports.iter().map(|r| r.map50_95).sum::<f64>() / n,
        n_classes: first.n_classes,
        gt_counts: sum_counts(|r| &r.gt_counts),
        det_counts: sum_counts(|r| &r.det_counts),
        n_images: reports.iter().map(|r| r.n_images).sum(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const EPOCH_CSV_HEADER: &str = "replication,arm,epoch,phase,supervised_loss,pseudo_loss,train_steps,pseudo_images,pseudo_labels,calibration_images,val_map50,val_map50_95,audit_precision,audit_recall";

/// One [`EPOCH_CSV_HEADER`] row per epoch.
pub fn epoch_rows(replication: usize, arm: &str, log: &TrainLog) -> String {
    let mut s = String::new();
    for e in &log.epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            replication,
            arm,
            e.epoch,
            e.phase.name(),
            e.supervised_loss,
            opt(e.pseudo_loss),
            e.train_steps,
            e.pseudo_images,
            e.total_pseudo_labels(),
            e.calibration_images,
            e.val_map50,
            e.val_map50_95,
            opt(e.audit.map(|a| a.precision)),
            opt(e.audit.map(|a| a.recall)),
        );
    }
    s
}

impl RunRecord {
    pub fn new(experiment: &str, replications: Vec<ReplicationRecord>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in &replications {
            for a in &r.arms {
                if !names.contains(&a.name) {
                    names.push(a.name.clone());
                }
            }
        }
        let mean = names
            .into_iter()
            .filter_map(|name| {
                let reports: Vec<&EvalReport<f64>> = replications
                    .iter()
                    .filter_map(|r| r.arm(&name).map(|a| &a.test))
                    .collect();
                mean_report(&reports).map(|m| (name, m))
            })
            .collect();
        Self {
            experiment: experiment.to_string(),
            replications,
            mean,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run records serialise") + "\n"
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = format!("{EPOCH_CSV_HEADER}\n");
        for r in &self.replications {
            for a in &r.arms {
                s.push_str(&epoch_rows(r.index, &a.name, &a.log));
            }
        }
        s
    }

    /// `replication,arm,metric,class,value` with `mean` as the replication
    /// for averaged rows.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("replication,arm,metric,class,value\n");
        let mut emit = |rep: &str, arm: &str, rpt: &EvalReport<f64>| {
            let _ = writeln!(s, "{rep},{arm},map50,all,{}", rpt.map50);
            let _ = writeln!(s, "{rep},{arm},map50_95,all,{}", rpt.map50_95);
            for (c, v) in &rpt.per_class_ap50 {
                let _ = writeln!(s, "{rep},{arm},ap50,{c},{v}");
            }
            for (c, v) in &rpt.per_class_ap50_95 {
                let _ = writeln!(s, "{rep},{arm},ap50_95,{c},{v}");
            }
        };
        for r in &self.replications {
            for a in &r.arms {
                emit(&r.index.to_string(), &a.name, &a.test);
            }
        }
        for (arm, rpt) in &self.mean {
            emit("mean", arm, rpt);
        }
        s
    }

    /// Full-vs-Semi comparison in percent with signed deltas, e.g. `87.6 (+2.6)`.
    pub fn comparison_table(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let delta = |semi: f64, full: f64| {
            let d = 100.0 * (semi - full);
            let d = if d.abs() < 0.05 { 0.0 } else { d };
            format!("{:+.1}", d)
        };
        let mut rows: Vec<[String; 5]> = vec![[
            "replication".into(),
            "Full mAP@50".into(),
            "Semi mAP@50".into(),
            "Full mAP@50:95".into(),
            "Semi mAP@50:95".into(),
        ]];
        let mut push = |label: String, full: Option<&EvalReport<f64>>, semi: Option<&EvalReport<f64>>| {
            if let (Some(f), Some(s)) = (full, semi) {
                rows.push([
                    label,
                    pct(f.map50),
                    format!("{} ({})", pct(s.map50), delta(s.map50, f.map50)),
                    pct(f.map50_95),
                    format!("{} ({})", pct(s.map50_95), delta(s.map50_95, f.map50_95)),
                ]);
            }
        };
        for r in &self.replications {
            push(
                format!("{} (seed {})", r.index, r.seed),
                r.arm("full").map(|a| &a.test),
                r.arm("semi").map(|a| &a.test),
            );
        }
        push("mean".into(), self.mean.get("full"), self.mean.get("semi"));
        let widths: Vec<usize> = (0..5)
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (k, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        s
    }

    /// Mean Semi minus mean Full mAP@50, in points.
    pub fn mean_gain_points(&self) -> Option<f64> {
        Some(100.0 * (self.mean.get("semi")?.map50 - self.mean.get("full")?.map50))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(map50: f64, ap: &[(usize, f64)]) -> EvalReport<f64> {
        EvalReport {
            per_class_ap50: ap.iter().copied().collect(),
            per_class_ap50_95: ap.iter().map(|&(c, v)| (c, v / 2.0)).collect(),
            map50,
            map50_95: map50 / 2.0,
            n_classes: 2,
            gt_counts: [(0, 3), (1, 1)].into(),
            det_counts: [(0, 4), (1, 0)].into(),
            n_images: 5,
        }
    }

    fn arm(name: &str, r: EvalReport<f64>) -> ArmRecord {
        ArmRecord {
            name: name.into(),
            log: TrainLog::new(TrainMode::Full),
            test: r,
        }
    }

    fn rep(index: usize, full: f64, semi: f64) -> ReplicationRecord {
        ReplicationRecord {
            index,
            seed: index as u64,
            n_labeled: 1,
            n_unlabeled: 1,
            n_val: 1,
            n_test: 1,
            arms: vec![arm("full", report(full, &[(0, full)])), arm("semi", report(semi, &[(0, semi)]))],
        }
    }

    #[test]
    fn mean_is_arithmetic() {
        let r = RunRecord::new("in_domain", vec![rep(0, 0.5, 0.6), rep(1, 0.7, 0.7), rep(2, 0.6, 0.8)]);
        let full = &r.mean["full"];
        assert!((full.map50 - 0.6).abs() < 1e-15);
        assert!((full.per_class_ap50[&0] - 0.6).abs() < 1e-15);
        assert_eq!(full.gt_counts[&0], 9);
        assert_eq!(full.n_images, 15);
        assert!((r.mean_gain_points().unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn comparison_table_has_signed_deltas() {
        let r = RunRecord::new("in_domain", vec![rep(0, 0.85, 0.876), rep(1, 0.9, 0.899)]);
        let t = r.comparison_table();
        assert!(t.contains("87.6 (+2.6)"), "{t}");
        assert!(t.contains("89.9 (-0.1)"), "{t}");
        assert!(t.lines().last().unwrap().starts_with("mean"));
    }

    #[test]
    fn json_round_trip() {
        let r = RunRecord::new("cross_domain", vec![rep(0, 0.5, 0.25)]);
        assert_eq!(RunRecord::from_json(&r.to_json()).unwrap(), r);
    }
}
