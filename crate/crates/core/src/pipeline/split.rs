//! Monte-Carlo train/val/test splits and label-budget splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{LabeledBox, Sample};
use crate::geometry::iou;
use crate::rng::{stream, tag};

/// Minimum dataset size accepted by [`mc_split`].
pub const MIN_SPLIT_SIZE: usize = 20;

// Guards `floor(ratio * n)` against products like 0.29 * 100 = 28.999...
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("dataset has {0} images, at least {MIN_SPLIT_SIZE} are needed for a split")]
    TooSmall(usize),
    #[error("split ratios must be non-negative and sum to 1 (got {train} + {val} + {test})")]
    Ratios { train: f64, val: f64, test: f64 },
    #[error("at least one replication seed is required")]
    NoSeeds,
    #[error("labeled fraction must lie strictly between 0 and 1 (got {0})")]
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seeds: Vec<u64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.75,
            val: 0.05,
            test: 0.20,
            seeds: vec![0, 1, 2],
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        let (a, b, c) = (self.train, self.val, self.test);
        if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(SplitError::Ratios {
                train: a,
                val: b,
                test: c,
            });
        }
        if self.seeds.is_empty() {
            return Err(SplitError::NoSeeds);
        }
        Ok(())
    }
}

/// Indices into the split dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn floor_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + FLOOR_EPS).floor() as usize).min(n)
}

fn shuffled(n: usize, seed: u64, purpose: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[purpose]));
    idx
}

/// One split per replication seed: shuffle, then the first `floor(train*n)`
/// go to train, the next `floor(val*n)` to val, and the rest to test.
pub fn mc_split(n: usize, spec: &SplitSpec) -> Result<Vec<Split>, SplitError> {
    spec.validate()?;
    if n < MIN_SPLIT_SIZE {
        return Err(SplitError::TooSmall(n));
    }
    let n_train = floor_count(spec.train, n);
    let n_val = floor_count(spec.val, n).min(n - n_train);
    Ok(spec
        .seeds
        .iter()
        .map(|&seed| {
            let idx = shuffled(n, seed, tag("mc-split"));
            Split {
                seed,
                train: idx[..n_train].to_vec(),
                val: idx[n_train..n_train + n_val].to_vec(),
                test: idx[n_train + n_val..].to_vec(),
            }
        })
        .collect())
}

/// Ground truth withheld from the unlabelled pool, keyed by image id.
///
/// Only [`AuditStore::score`] reads it; training code receives the stripped
/// samples alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditStore {
    labels: BTreeMap<String, Vec<LabeledBox>>,
}

/// Quality of one epoch's pseudo-labels against the withheld ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelAudit {
    pub n_pseudo: usize,
    pub n_true: usize,
    pub n_matched: usize,
    pub precision: f64,
    pub recall: f64,
}

pub const AUDIT_IOU: f64 = 0.5;

impl AuditStore {
    pub fn insert(&mut self, id: String, boxes: Vec<LabeledBox>) {
        self.labels.insert(id, boxes);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&[LabeledBox]> {
        self.labels.get(id).map(Vec::as_slice)
    }

    /// Class-aware greedy matching at IoU 0.5, highest pseudo-label weight
    /// first. Images not in the store are ignored.
    pub fn score(&self, pseudo: &[Sample]) -> PseudoLabelAudit {
        let (mut n_pseudo, mut n_true, mut n_matched) = (0, 0, 0);
        for s in pseudo {
            let Some(truth) = self.labels.get(&s.id) else {
                continue;
            };
            n_pseudo += s.boxes.len();
            n_true += truth.len();
            let mut order: Vec<&LabeledBox> = s.boxes.iter().collect();
            order.sort_by(|a, b| b.weight.total_cmp(&a.weight));
            let mut used = vec![false; truth.len()];
            for p in order {
                let best = truth
                    .iter()
                    .enumerate()
                    .filter(|(j, t)| !used[*j] && t.class_id == p.class_id)
                    .map(|(j, t)| (j, iou(&p.bbox, &t.bbox)))
                    .filter(|&(_, v)| v >= AUDIT_IOU)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                if let Some((j, _)) = best {
                    used[j] = true;
                    n_matched += 1;
                }
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        PseudoLabelAudit {
            n_pseudo,
            n_true,
            n_matched,
            precision: ratio(n_matched, n_pseudo),
            recall: ratio(n_matched, n_true),
        }
    }
}

/// Turns a sample into an unlabelled one.
pub fn strip_labels(s: &Sample) -> Sample {
    Sample {
        boxes: Vec::new(),
        labeled: false,
        ..s.clone()
    }
}

#[derive(Debug, Clone)]
pub struct LabelBudget {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub audit: AuditStore,
}

/// Shuffles, keeps labels on the first `floor(fraction * n)` samples and
/// strips the rest into the audit store.
pub fn label_budget_split(samples: &[Sample], fraction: f64, seed: u64) -> Result<LabelBudget, SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::Fraction(fraction));
    }
    let n = samples.len();
    let k = floor_count(fraction, n);
    let idx = shuffled(n, seed, tag("label-budget"));
    let labeled = idx[..k].iter().map(|&i| samples[i].clone()).collect();
    let mut audit = AuditStore::default();
    let unlabeled = idx[k..]
        .iter()
        .map(|&i| {
            audit.insert(samples[i].id.clone(), samples[i].boxes.clone());
            strip_labels(&samples[i])
        })
        .collect();
    Ok(LabelBudget {
        labeled,
        unlabeled,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::image::Image;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("s{i}"),
                image: Image::filled(2, 2, 3, 0.5),
                boxes: vec![LabeledBox::new(BBox::new(0., 0., 1., 1.), i % 2, 1.0)],
                domain: "basic".into(),
                labeled: true,
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        for (n, expect) in [(100, (75, 5, 20)), (101, (75, 5, 21))] {
            for s in mc_split(n, &SplitSpec::default()).unwrap() {
                assert_eq!((s.train.len(), s.val.len(), s.test.len()), expect);
                let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let a = mc_split(100, &SplitSpec::default()).unwrap();
        assert_eq!(a, mc_split(100, &SplitSpec::default()).unwrap());
        assert_ne!(a[0].train, a[1].train);
    }

    #[test]
    fn split_rejects_small_and_bad_ratios() {
        assert_eq!(mc_split(19, &SplitSpec::default()), Err(SplitError::TooSmall(19)));
        let bad = SplitSpec {
            train: 0.8,
            ..SplitSpec::default()
        };
        assert!(matches!(mc_split(100, &bad), Err(SplitError::Ratios { .. })));
    }

    #[test]
    fn label_budget_examples() {
        let b = label_budget_split(&samples(1000), 0.1, 3).unwrap();
        assert_eq!((b.labeled.len(), b.unlabeled.len()), (100, 900));
        let b = label_budget_split(&samples(4), 0.5, 3).unwrap();
        assert_eq!((b.labeled.len(), b.unlabeled.len()), (2, 2));
        assert_eq!(b.audit.len(), 2);
        for u in &b.unlabeled {
            assert!(u.boxes.is_empty() && !u.labeled);
            assert_eq!(b.audit.get(&u.id).unwrap().len(), 1);
        }
        for l in &b.labeled {
            assert!(b.audit.get(&l.id).is_none());
        }
        assert!(label_budget_split(&samples(4), 1.0, 3).is_err());
    }

    #[test]
    fn audit_scores_pseudo_labels() {
        let b = label_budget_split(&samples(4), 0.5, 0).unwrap();
        let mut pseudo: Vec<Sample> = b.unlabeled.clone();
        // first image: correct box plus a wrong-class one; second: nothing
        let truth = b.audit.get(&pseudo[0].id).unwrap()[0];
        pseudo[0].boxes = vec![truth, LabeledBox::new(truth.bbox, truth.class_id + 1, 0.5)];
        let a = b.audit.score(&pseudo);
        assert_eq!((a.n_pseudo, a.n_true, a.n_matched), (2, 2, 1));
        assert_eq!((a.precision, a.recall), (0.5, 0.5));
    }
}
